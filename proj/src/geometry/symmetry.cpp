#include "quadbank/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace quadbank::geometry {

MirrorMap mirror_pairs(const Mesh& mesh, double tolerance) {
    const std::size_t n = mesh.num_vertices();
    // Candidates sorted by y; a partner must agree in y within tolerance.
    std::vector<std::size_t> by_y(n);
    std::iota(by_y.begin(), by_y.end(), std::size_t{0});
    std::sort(by_y.begin(), by_y.end(),
              [&](std::size_t a, std::size_t b) { return mesh.vertices[a].y() < mesh.vertices[b].y(); });

    MirrorMap map;
    map.partner.assign(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& v = mesh.vertices[i];
        if (std::abs(v.x()) <= tolerance) {
            map.partner[i] = i;
            continue;
        }
        const Vec3 target(-v.x(), v.y(), v.z());
        auto lo = std::lower_bound(by_y.begin(), by_y.end(), target.y() - tolerance,
                                   [&](std::size_t a, double y) { return mesh.vertices[a].y() < y; });
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = n;
        for (auto it = lo; it != by_y.end() && mesh.vertices[*it].y() <= target.y() + tolerance; ++it) {
            const double d = (mesh.vertices[*it] - target).norm();
            if (d <= tolerance && d < best) {
                best = d;
                best_j = *it;
            }
        }
        if (best_j == n) {
            throw GeometryError("vertex " + std::to_string(i) + " at (" + std::to_string(v.x()) + ", " +
                                std::to_string(v.y()) + ", " + std::to_string(v.z()) + ") has no mirror partner");
        }
        map.partner[i] = best_j;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (map.partner[map.partner[i]] != i) {
            throw GeometryError("mirror pairing of vertex " + std::to_string(i) + " is ambiguous");
        }
    }
    return map;
}

void symmetrize_in_place(std::span<double> fields, const MirrorMap& mirror) {
    const std::size_t n = mirror.size();
    if (n == 0 || fields.size() % (3 * n) != 0) {
        throw GeometryError("symmetrize: field size " + std::to_string(fields.size()) + " is not a multiple of 3 x " +
                            std::to_string(n) + " vertices");
    }
    const std::size_t blocks = fields.size() / (3 * n);
    for (std::size_t b = 0; b < blocks; ++b) {
        double* f = fields.data() + b * 3 * n;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = mirror.partner[i];
            if (j < i) continue;
            if (j == i) {
                f[3 * i] = 0.0;
                continue;
            }
            const double x = 0.5 * (f[3 * i] - f[3 * j]);
            const double y = 0.5 * (f[3 * i + 1] + f[3 * j + 1]);
            const double z = 0.5 * (f[3 * i + 2] + f[3 * j + 2]);
            f[3 * i] = x;
            f[3 * i + 1] = y;
            f[3 * i + 2] = z;
            f[3 * j] = -x;
            f[3 * j + 1] = y;
            f[3 * j + 2] = z;
        }
    }
}

VertexField symmetrize(const VertexField& field, const MirrorMap& mirror) {
    if (field.dim != 3) throw GeometryError("symmetrize expects a 3-vector field, got dim " + std::to_string(field.dim));
    if (field.num_vertices() != mirror.size()) throw GeometryError("symmetrize: field and mirror map sizes differ");
    VertexField out = field;
    symmetrize_in_place(out.data, mirror);
    return out;
}

VertexField symmetrize(const VertexField& field, const Mesh& mesh) { return symmetrize(field, mirror_pairs(mesh)); }

ad::Var symmetrize(const ad::Var& fields, const MirrorMap& mirror) {
    ad::Tensor out = fields.value();
    symmetrize_in_place(out.data, mirror);
    return fields.tape()->custom(std::move(out), {fields}, [fields, mirror](ad::Tape& t, std::span<const double> g) {
        std::vector<double> gx(g.begin(), g.end());
        symmetrize_in_place(gx, mirror);
        t.accumulate(fields, gx);
    });
}

}  // namespace quadbank::geometry
