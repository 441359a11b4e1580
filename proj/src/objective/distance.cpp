#include <cmath>
#include <limits>

#include "quadbank/objective.hpp"

namespace quadbank::objective {
namespace {

constexpr double kFar = 1e20;

// Squared distance along one line: d[q] = min_p (q - p)^2 + f[p].
void envelope(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v,
              std::vector<double>& z) {
    const std::size_t n = f.size();
    std::size_t k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    auto meet = [&](std::size_t q, std::size_t p) {
        const double qd = static_cast<double>(q), pd = static_cast<double>(p);
        return ((f[q] + qd * qd) - (f[p] + pd * pd)) / (2 * qd - 2 * pd);
    };
    for (std::size_t q = 1; q < n; ++q) {
        double s = meet(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = meet(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

DistanceField distance_transform(std::span<const double> mask, std::size_t width, std::size_t height) {
    if (mask.size() != width * height) throw ObjectiveError("distance transform: mask size does not match the image");
    DistanceField out;
    out.distance.assign(mask.size(), 0.0);
    bool any = false;
    for (double m : mask) any = any || m > 0.5;
    if (!any) {
        out.empty_mask = true;
        const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
        std::fill(out.distance.begin(), out.distance.end(), diag);
        return out;
    }
    const std::size_t n = std::max(width, height);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<std::size_t> v(n);
    std::vector<double> sq(mask.size());
    f.resize(height);
    d.resize(height);
    for (std::size_t x = 0; x < width; ++x) {
        for (std::size_t y = 0; y < height; ++y) f[y] = mask[y * width + x] > 0.5 ? 0.0 : kFar;
        envelope(f, d, v, z);
        for (std::size_t y = 0; y < height; ++y) sq[y * width + x] = d[y];
    }
    f.resize(width);
    d.resize(width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) f[x] = sq[y * width + x];
        envelope(f, d, v, z);
        for (std::size_t x = 0; x < width; ++x) out.distance[y * width + x] = std::sqrt(d[x]);
    }
    return out;
}

}  // namespace quadbank::objective
