#include "quadbank/geometry.hpp"

#include <Eigen/Geometry>

namespace quadbank::geometry {

NormalsResult compute_normals(const Mesh& mesh) {
    mesh.validate();
    std::vector<Vec3> acc(mesh.num_vertices(), Vec3::Zero());
    for (const Face& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        // |cross| is twice the area, so summing raw crosses is area weighting.
        const Vec3 n = (b - a).cross(c - a);
        if (n.squaredNorm() == 0.0) continue;
        for (int idx : f) acc[idx] += n;
    }
    NormalsResult r;
    r.normals = VertexField(mesh.num_vertices(), 3);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double len = acc[i].norm();
        if (len > 0) {
            r.normals.set_vec3(i, acc[i] / len);
        } else {
            r.normals.set_vec3(i, Vec3::UnitY());
            r.flagged.push_back(i);
        }
    }
    return r;
}

ad::Var vertex_normals(const ad::Var& vertices, const std::vector<Face>& faces) {
    const ad::Tensor& vt = vertices.value();
    const std::size_t n = vt.size() / 3;
    auto at = [&vt](int i) { return Vec3(vt[3 * i], vt[3 * i + 1], vt[3 * i + 2]); };

    std::vector<Vec3> raw(n, Vec3::Zero());
    for (const Face& f : faces) {
        const Vec3 c = (at(f[1]) - at(f[0])).cross(at(f[2]) - at(f[0]));
        for (int idx : f) raw[idx] += c;
    }
    ad::Tensor out({n, 3}, 0.0);
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = raw[i].norm();
        const Vec3 u = norms[i] > 0 ? Vec3(raw[i] / norms[i]) : Vec3::UnitY();
        for (int c = 0; c < 3; ++c) out[3 * i + c] = u[c];
    }
    ad::Tensor unit = out;
    return vertices.tape()->custom(
        std::move(out), {vertices},
        [vertices, faces, norms = std::move(norms), unit = std::move(unit)](ad::Tape& t, std::span<const double> g) {
            const ad::Tensor& vt = t.value(vertices);
            const std::size_t n = norms.size();
            auto at = [&vt](int i) { return Vec3(vt[3 * i], vt[3 * i + 1], vt[3 * i + 2]); };
            // Gradient w.r.t. each vertex's unnormalized sum of face crosses.
            std::vector<Vec3> graw(n, Vec3::Zero());
            for (std::size_t i = 0; i < n; ++i) {
                if (norms[i] <= 0) continue;
                const Vec3 u(unit[3 * i], unit[3 * i + 1], unit[3 * i + 2]);
                const Vec3 gi(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
                graw[i] = (gi - u * u.dot(gi)) / norms[i];
            }
            std::vector<double> gv(vt.size(), 0.0);
            for (const Face& f : faces) {
                const Vec3 gc = graw[f[0]] + graw[f[1]] + graw[f[2]];
                if (gc.squaredNorm() == 0.0) continue;
                const Vec3 e1 = at(f[1]) - at(f[0]);
                const Vec3 e2 = at(f[2]) - at(f[0]);
                const Vec3 g1 = e2.cross(gc);
                const Vec3 g2 = gc.cross(e1);
                for (int c = 0; c < 3; ++c) {
                    gv[3 * f[1] + c] += g1[c];
                    gv[3 * f[2] + c] += g2[c];
                    gv[3 * f[0] + c] -= g1[c] + g2[c];
                }
            }
            t.accumulate(vertices, gv);
        });
}

}  // namespace quadbank::geometry
