#include "quadbank/geometry.hpp"

#include <cmath>

namespace quadbank::geometry {

ObjParseError::ObjParseError(std::size_t line, const std::string& what)
    : std::runtime_error("OBJ line " + std::to_string(line) + ": " + what), line_(line) {}

void Mesh::validate() const {
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        if (!vertices[i].allFinite()) throw GeometryError("vertex " + std::to_string(i) + " is not finite");
    }
    const int n = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (int idx : faces[f]) {
            if (idx < 0 || idx >= n) {
                throw GeometryError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                                    " of " + std::to_string(n));
            }
        }
    }
}

ad::Tensor Mesh::vertex_tensor() const {
    ad::Tensor t({vertices.size(), 3});
    for (std::size_t i = 0; i < vertices.size(); ++i)
        for (int c = 0; c < 3; ++c) t[3 * i + c] = vertices[i][c];
    return t;
}

std::vector<Vec3> Mesh::vertices_from(const ad::Tensor& t) {
    if (t.size() % 3 != 0) throw GeometryError("vertex tensor size not a multiple of 3");
    std::vector<Vec3> out(t.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
    return out;
}

Vec3 VertexField::vec3(std::size_t i) const {
    if (dim != 3) throw GeometryError("vec3() on a field of dim " + std::to_string(dim));
    return Vec3(data[3 * i], data[3 * i + 1], data[3 * i + 2]);
}

void VertexField::set_vec3(std::size_t i, const Vec3& v) {
    if (dim != 3) throw GeometryError("set_vec3() on a field of dim " + std::to_string(dim));
    for (int c = 0; c < 3; ++c) data[3 * i + c] = v[c];
}

ad::Tensor VertexField::tensor() const { return ad::Tensor({num_vertices(), dim}, data); }

VertexField VertexField::from_tensor(const ad::Tensor& t) {
    if (t.shape.size() != 2) throw GeometryError("vertex field tensor must be 2-D, got " + ad::shape_str(t.shape));
    VertexField f;
    f.dim = t.shape[1];
    f.data = t.data;
    return f;
}

Mesh mirrored(const Mesh& mesh) {
    Mesh out = mesh;
    for (Vec3& v : out.vertices) v.x() = -v.x();
    for (Face& f : out.faces) std::swap(f[1], f[2]);
    return out;
}

}  // namespace quadbank::geometry
