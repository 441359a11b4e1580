#include <cmath>
#include <limits>

#include "quadbank/render.hpp"
#include "tiles.hpp"

namespace quadbank::render {
namespace {

// Outside pixels farther than this (in units of sigma) contribute < 1e-21.
constexpr double kCutoff = 50.0;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct Segment {
    int a = 0, b = 1;  // local corner indices
    double r = 0;      // clamped projection parameter
    double cx = 0, cy = 0;
};

struct FaceSample {
    double z = 0;     // signed d^2 / sigma
    double sign = 1;  // +1 inside
    Segment seg;      // nearest edge
};

struct SoftFace {
    bool usable = false;
    double area = 0;
    double x[3], y[3];
    detail::Rect box;
};

std::vector<SoftFace> prepare(const ad::Tensor& pv, const std::vector<geometry::Face>& faces, std::size_t w,
                              std::size_t h, double margin_px) {
    std::vector<SoftFace> out(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        SoftFace& sf = out[f];
        bool valid = true;
        for (int k = 0; k < 3; ++k) {
            const std::size_t v = static_cast<std::size_t>(faces[f][k]);
            sf.x[k] = pv[3 * v];
            sf.y[k] = pv[3 * v + 1];
            valid = valid && pv[3 * v + 2] > detail::kMinDepth && std::isfinite(sf.x[k]) && std::isfinite(sf.y[k]);
        }
        if (!valid) continue;
        sf.area = detail::edge(sf.x[0], sf.y[0], sf.x[1], sf.y[1], sf.x[2], sf.y[2]);
        if (sf.area == 0) continue;
        sf.usable = true;
        sf.box = detail::pixel_range(std::min({sf.x[0], sf.x[1], sf.x[2]}), std::min({sf.y[0], sf.y[1], sf.y[2]}),
                                     std::max({sf.x[0], sf.x[1], sf.x[2]}), std::max({sf.y[0], sf.y[1], sf.y[2]}),
                                     margin_px, w, h);
    }
    return out;
}

// Returns false when the pixel is culled.
bool sample(const SoftFace& sf, double px, double py, double to_ndc, double sigma, FaceSample& out) {
    const double e0 = detail::edge(sf.x[1], sf.y[1], sf.x[2], sf.y[2], px, py);
    const double e1 = detail::edge(sf.x[2], sf.y[2], sf.x[0], sf.y[0], px, py);
    const double e2 = detail::edge(sf.x[0], sf.y[0], sf.x[1], sf.y[1], px, py);
    const bool inside = sf.area > 0 ? (e0 >= 0 && e1 >= 0 && e2 >= 0) : (e0 <= 0 && e1 <= 0 && e2 <= 0);
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        const int a = k, b = (k + 1) % 3;
        const double dx = sf.x[b] - sf.x[a], dy = sf.y[b] - sf.y[a];
        const double len2 = dx * dx + dy * dy;
        double r = len2 > 0 ? ((px - sf.x[a]) * dx + (py - sf.y[a]) * dy) / len2 : 0.0;
        r = std::clamp(r, 0.0, 1.0);
        const double cx = sf.x[a] + r * dx, cy = sf.y[a] + r * dy;
        const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
        if (d2 < best) {
            best = d2;
            out.seg = {a, b, r, cx, cy};
        }
    }
    const double scaled = best * to_ndc / sigma;
    if (!inside && scaled > kCutoff) return false;
    out.sign = inside ? 1.0 : -1.0;
    out.z = out.sign * scaled;
    return true;
}

}  // namespace

ad::Var soft_silhouette(const ad::Var& projected, const std::vector<geometry::Face>& faces, const Camera& cam,
                        double sigma) {
    cam.validate();
    if (!(sigma > 0)) throw RenderError("soft silhouette: sigma must be positive");
    const ad::Tensor& pv = projected.value();
    if (pv.size() % 3 != 0) throw RenderError("soft silhouette: expected (N x 3) projected vertices");
    const std::size_t w = cam.width, h = cam.height, np = cam.pixels();
    const double wd = static_cast<double>(w);
    const double to_ndc = 4.0 / (wd * wd);
    const double margin_px = std::sqrt(kCutoff * sigma) * wd / 2.0;
    const std::vector<SoftFace> prep = prepare(pv, faces, w, h, margin_px);

    std::vector<double> acc(np, 0.0);
    detail::for_each_tile(w, h, 0, [&](std::size_t tx0, std::size_t ty0, std::size_t tx1, std::size_t ty1) {
        for (const SoftFace& sf : prep) {
            if (!sf.usable) continue;
            const long x0 = std::max(sf.box.x0, static_cast<long>(tx0)), x1 = std::min(sf.box.x1, static_cast<long>(tx1) - 1);
            const long y0 = std::max(sf.box.y0, static_cast<long>(ty0)), y1 = std::min(sf.box.y1, static_cast<long>(ty1) - 1);
            for (long y = y0; y <= y1; ++y) {
                for (long x = x0; x <= x1; ++x) {
                    FaceSample s;
                    if (!sample(sf, x + 0.5, y + 0.5, to_ndc, sigma, s)) continue;
                    acc[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] += softplus(s.z);
                }
            }
        }
    });

    // 1 - prod(1 - sigmoid(z)) = 1 - exp(-sum softplus(z)).
    ad::Tensor out({np});
    std::vector<double> empty(np);
    for (std::size_t p = 0; p < np; ++p) {
        empty[p] = std::exp(-acc[p]);
        out[p] = 1.0 - empty[p];
    }
    return projected.tape()->custom(
        std::move(out), {projected},
        [projected, prep, faces, empty, w, to_ndc, sigma](ad::Tape& t, std::span<const double> g) {
            std::vector<double> gp(t.value(projected).size(), 0.0);
            for (std::size_t f = 0; f < prep.size(); ++f) {
                const SoftFace& sf = prep[f];
                if (!sf.usable) continue;
                for (long y = sf.box.y0; y <= sf.box.y1; ++y) {
                    for (long x = sf.box.x0; x <= sf.box.x1; ++x) {
                        const std::size_t pix = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                        if (g[pix] == 0) continue;
                        const double px = x + 0.5, py = y + 0.5;
                        FaceSample s;
                        if (!sample(sf, px, py, to_ndc, sigma, s)) continue;
                        const double dz = g[pix] * empty[pix] * stable_sigmoid(s.z);
                        const double dd2 = dz * s.sign * to_ndc / sigma;
                        const double gx = -2.0 * (px - s.seg.cx) * dd2, gy = -2.0 * (py - s.seg.cy) * dd2;
                        const std::size_t va = static_cast<std::size_t>(faces[f][s.seg.a]);
                        const std::size_t vb = static_cast<std::size_t>(faces[f][s.seg.b]);
                        gp[3 * va] += gx * (1 - s.seg.r);
                        gp[3 * va + 1] += gy * (1 - s.seg.r);
                        gp[3 * vb] += gx * s.seg.r;
                        gp[3 * vb + 1] += gy * s.seg.r;
                    }
                }
            }
            t.accumulate(projected, gp);
        });
}

std::vector<double> soft_silhouette(const geometry::Mesh& mesh, const Camera& cam, double sigma) {
    ad::Tape tape;
    ad::Tensor pts({mesh.num_vertices(), 3});
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        for (int k = 0; k < 3; ++k) pts[3 * i + k] = mesh.vertices[i][k];
    }
    const ad::Var proj = project(cam, tape.constant(std::move(pts)));
    return soft_silhouette(proj, mesh.faces, cam, sigma).value().data;
}

}  // namespace quadbank::render
