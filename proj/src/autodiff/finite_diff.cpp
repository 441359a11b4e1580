#include "quadbank/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace quadbank::ad {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.constant(p));
    return f(tape, vars).item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

FiniteDiffReport finite_diff_check(const ScalarFn& f, std::vector<Tensor> params, const FiniteDiffOptions& options) {
    std::vector<Tensor> analytic;
    double f0 = 0;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& p : params) vars.push_back(tape.param(p));
        Var root = f(tape, vars);
        f0 = root.item();
        tape.backward(root);
        for (const Var& v : vars) analytic.push_back(tape.grad(v));
    }

    FiniteDiffReport report;
    std::mt19937_64 rng(options.seed);
    const double eps = options.eps;
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::vector<std::size_t> coords(params[k].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords > 0 && coords.size() > options.max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t i : coords) {
            const double x0 = params[k][i];
            params[k][i] = x0 + eps;
            const double fp = evaluate(f, params);
            params[k][i] = x0 - eps;
            const double fm = evaluate(f, params);
            params[k][i] = x0;

            const double fwd = (fp - f0) / eps;
            const double bwd = (f0 - fm) / eps;
            if (std::abs(fwd - bwd) > options.kink_tolerance * (std::abs(fwd) + std::abs(bwd)) + 1e-7) {
                ++report.skipped;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[k][i];
            const double err = relative_error(a, numeric);
            ++report.checked;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = k;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace quadbank::ad
