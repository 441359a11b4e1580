#include <limits>

#include "quadbank/render.hpp"
#include "tiles.hpp"

namespace quadbank::render {

using detail::edge;

namespace {

// Perspective-correct barycentrics of pixel `pix` in face `f` from (N x 3)
// projected rows.
void perspective_weights(const ad::Tensor& pv, const geometry::Face& f, std::size_t width, std::size_t pix,
                         double out[3]) {
    const double px = static_cast<double>(pix % width) + 0.5;
    const double py = static_cast<double>(pix / width) + 0.5;
    double w[3];
    for (int k = 0; k < 3; ++k) {
        const std::size_t i = 3 * static_cast<std::size_t>(f[(k + 1) % 3]);
        const std::size_t j = 3 * static_cast<std::size_t>(f[(k + 2) % 3]);
        w[k] = edge(pv[i], pv[i + 1], pv[j], pv[j + 1], px, py) / pv[3 * static_cast<std::size_t>(f[k]) + 2];
    }
    const double sum = w[0] + w[1] + w[2];
    for (int k = 0; k < 3; ++k) out[k] = w[k] / sum;
}

}  // namespace

Fragments rasterize_fragments(const std::vector<Projection>& projected, const std::vector<geometry::Face>& faces,
                              std::size_t width, std::size_t height, unsigned jobs) {
    Fragments fr;
    fr.width = width;
    fr.height = height;
    fr.face.assign(width * height, -1);
    fr.depth.assign(width * height, std::numeric_limits<double>::infinity());
    fr.bary.assign(3 * width * height, 0.0);

    struct Prepared {
        bool usable;
        detail::Rect box;
        double area;
    };
    std::vector<Prepared> prep(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Projection& a = projected[faces[f][0]];
        const Projection& b = projected[faces[f][1]];
        const Projection& c = projected[faces[f][2]];
        Prepared& p = prep[f];
        p.area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
        p.usable = a.valid && b.valid && c.valid && p.area != 0.0;
        if (!p.usable) continue;
        p.box = detail::pixel_range(std::min({a.x, b.x, c.x}), std::min({a.y, b.y, c.y}), std::max({a.x, b.x, c.x}),
                                    std::max({a.y, b.y, c.y}), 0.0, width, height);
    }

    detail::for_each_tile(width, height, jobs, [&](std::size_t tx0, std::size_t ty0, std::size_t tx1, std::size_t ty1) {
        for (std::size_t f = 0; f < faces.size(); ++f) {
            const Prepared& p = prep[f];
            if (!p.usable) continue;
            const long x0 = std::max(p.box.x0, static_cast<long>(tx0)), x1 = std::min(p.box.x1, static_cast<long>(tx1) - 1);
            const long y0 = std::max(p.box.y0, static_cast<long>(ty0)), y1 = std::min(p.box.y1, static_cast<long>(ty1) - 1);
            if (x0 > x1 || y0 > y1) continue;
            const Projection& a = projected[faces[f][0]];
            const Projection& b = projected[faces[f][1]];
            const Projection& c = projected[faces[f][2]];
            for (long y = y0; y <= y1; ++y) {
                const double py = static_cast<double>(y) + 0.5;
                for (long x = x0; x <= x1; ++x) {
                    const double px = static_cast<double>(x) + 0.5;
                    const double e0 = edge(b.x, b.y, c.x, c.y, px, py);
                    const double e1 = edge(c.x, c.y, a.x, a.y, px, py);
                    const double e2 = edge(a.x, a.y, b.x, b.y, px, py);
                    const bool inside = p.area > 0 ? (e0 >= 0 && e1 >= 0 && e2 >= 0) : (e0 <= 0 && e1 <= 0 && e2 <= 0);
                    if (!inside) continue;
                    const double w0 = e0 / a.depth, w1 = e1 / b.depth, w2 = e2 / c.depth;
                    const double wsum = w0 + w1 + w2;
                    const double depth = p.area / wsum;
                    const std::size_t pix = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
                    if (!(depth < fr.depth[pix])) continue;
                    fr.depth[pix] = depth;
                    fr.face[pix] = static_cast<int>(f);
                    fr.bary[3 * pix] = w0 / wsum;
                    fr.bary[3 * pix + 1] = w1 / wsum;
                    fr.bary[3 * pix + 2] = w2 / wsum;
                }
            }
        }
    });
    return fr;
}

RenderBuffers rasterize(const geometry::Mesh& mesh, const std::vector<geometry::VertexField>& attributes,
                        const Camera& cam, unsigned jobs) {
    cam.validate();
    for (const auto& a : attributes) {
        if (a.num_vertices() != mesh.num_vertices()) throw RenderError("attribute field does not match the mesh");
    }
    RenderBuffers rb;
    rb.width = cam.width;
    rb.height = cam.height;
    rb.fragments = rasterize_fragments(project(cam, mesh.vertices), mesh.faces, cam.width, cam.height, jobs);
    const std::size_t np = cam.pixels();
    rb.mask.assign(np, 0.0);
    for (const auto& a : attributes) rb.attributes.emplace_back(np * a.dim, 0.0);
    for (std::size_t pix = 0; pix < np; ++pix) {
        const int f = rb.fragments.face[pix];
        if (f < 0) continue;
        rb.mask[pix] = 1.0;
        for (std::size_t k = 0; k < attributes.size(); ++k) {
            const auto& a = attributes[k];
            double* out = rb.attributes[k].data() + pix * a.dim;
            for (int v = 0; v < 3; ++v) {
                const double b = rb.fragments.bary[3 * pix + v];
                const double* src = a.row(static_cast<std::size_t>(mesh.faces[f][v]));
                for (std::size_t c = 0; c < a.dim; ++c) out[c] += b * src[c];
            }
        }
    }
    return rb;
}

ad::Var interpolate(const Fragments& frags, const ad::Var& projected, const ad::Var& attributes,
                    const std::vector<geometry::Face>& faces) {
    const ad::Tensor& av = attributes.value();
    if (av.shape.size() != 2) throw RenderError("interpolate: attributes must be (N x C)");
    const std::size_t n = av.dim(0), ch = av.dim(1);
    if (projected.size() != 3 * n) throw RenderError("interpolate: projected vertices do not match attributes");
    const std::size_t np = frags.width * frags.height;
    const ad::Tensor& pv = projected.value();
    ad::Tensor out({np, ch}, 0.0);
    for (std::size_t pix = 0; pix < np; ++pix) {
        const int f = frags.face[pix];
        if (f < 0) continue;
        double b[3];
        perspective_weights(pv, faces[f], frags.width, pix, b);
        for (int v = 0; v < 3; ++v) {
            const std::size_t vi = static_cast<std::size_t>(faces[f][v]);
            for (std::size_t c = 0; c < ch; ++c) out[pix * ch + c] += b[v] * av[vi * ch + c];
        }
    }
    return attributes.tape()->custom(
        std::move(out), {projected, attributes},
        [faces, projected, attributes, n, ch, np, face = frags.face, width = frags.width](ad::Tape& t, std::span<const double> g) {
            const ad::Tensor& av = t.value(attributes);
            const ad::Tensor& pv = t.value(projected);
            const bool want_p = t.requires_grad(projected);
            std::vector<double> ga(n * ch, 0.0), gp(3 * n, 0.0);
            for (std::size_t pix = 0; pix < np; ++pix) {
                const int f = face[pix];
                if (f < 0) continue;
                const double* gpix = g.data() + pix * ch;
                std::size_t vi[3];
                for (int v = 0; v < 3; ++v) vi[v] = static_cast<std::size_t>(faces[f][v]);
                double bary[3];
                perspective_weights(pv, faces[f], width, pix, bary);
                for (int v = 0; v < 3; ++v) {
                    for (std::size_t c = 0; c < ch; ++c) ga[vi[v] * ch + c] += bary[v] * gpix[c];
                }
                if (!want_p) continue;

                // out = sum_k w_k a_k / W with w_k = E_k / d_k, W = sum w_k.
                const double px = static_cast<double>(pix % width) + 0.5;
                const double py = static_cast<double>(pix / width) + 0.5;
                double x[3], y[3], d[3];
                for (int v = 0; v < 3; ++v) {
                    x[v] = pv[3 * vi[v]];
                    y[v] = pv[3 * vi[v] + 1];
                    d[v] = pv[3 * vi[v] + 2];
                }
                double e[3], w[3];
                for (int k = 0; k < 3; ++k) {
                    const int i = (k + 1) % 3, j = (k + 2) % 3;
                    e[k] = edge(x[i], y[i], x[j], y[j], px, py);
                    w[k] = e[k] / d[k];
                }
                const double wsum = w[0] + w[1] + w[2];
                double gamma[3];
                for (int k = 0; k < 3; ++k) {
                    double s = 0;
                    for (std::size_t c = 0; c < ch; ++c) {
                        double o = 0;
                        for (int m = 0; m < 3; ++m) o += bary[m] * av[vi[m] * ch + c];
                        s += gpix[c] * (av[vi[k] * ch + c] - o);
                    }
                    gamma[k] = s / wsum;
                }
                for (int k = 0; k < 3; ++k) {
                    const double ge = gamma[k] / d[k];
                    gp[3 * vi[k] + 2] -= gamma[k] * e[k] / (d[k] * d[k]);
                    // e_k = edge(v_i, v_j, p) with i = k+1, j = k+2.
                    const int i = (k + 1) % 3, j = (k + 2) % 3;
                    gp[3 * vi[i]] += ge * (y[j] - py);
                    gp[3 * vi[i] + 1] += ge * (px - x[j]);
                    gp[3 * vi[j]] += ge * (py - y[i]);
                    gp[3 * vi[j] + 1] -= ge * (px - x[i]);
                }
            }
            t.accumulate(attributes, ga);
            if (want_p) t.accumulate(projected, gp);
        });
}

}  // namespace quadbank::render
