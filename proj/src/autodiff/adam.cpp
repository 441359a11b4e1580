#include "quadbank/autodiff.hpp"

#include <cmath>

namespace quadbank::ad {

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape, 0.0);
            state.v.emplace_back(p->shape, 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter set changed");

    ++state.step;
    const AdamOptions& o = state.options;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        if (g.size() != p.size() || state.m[k].size() != p.size()) {
            throw std::invalid_argument("adam_step: shape mismatch for parameter " + std::to_string(k));
        }
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
        }
    }
}

}  // namespace quadbank::ad
