#pragma once

// Triangle meshes in the canonical model frame: x = left/right (the mirror
// axis), y = up, z = front/back.

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "quadbank/autodiff.hpp"

namespace quadbank::geometry {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ObjParseError : public std::runtime_error {
public:
    ObjParseError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_faces() const { return faces.size(); }

    /// Throws GeometryError on out-of-range indices or non-finite coordinates.
    void validate() const;

    /// Vertices as an (N x 3) tensor, and back.
    ad::Tensor vertex_tensor() const;
    static std::vector<Vec3> vertices_from(const ad::Tensor& t);
};

/// Per-vertex vectors of a fixed dimension, stored row-major.
struct VertexField {
    std::size_t dim = 0;
    std::vector<double> data;

    VertexField() = default;
    VertexField(std::size_t num_vertices, std::size_t dim, double fill = 0.0)
        : dim(dim), data(num_vertices * dim, fill) {}

    std::size_t num_vertices() const { return dim ? data.size() / dim : 0; }
    double* row(std::size_t i) { return data.data() + i * dim; }
    const double* row(std::size_t i) const { return data.data() + i * dim; }
    Vec3 vec3(std::size_t i) const;
    void set_vec3(std::size_t i, const Vec3& v);

    ad::Tensor tensor() const;
    static VertexField from_tensor(const ad::Tensor& t);
};

struct NormalsResult {
    VertexField normals;
    /// Vertices with no non-degenerate incident face; they get (0, 1, 0).
    std::vector<std::size_t> flagged;
};

/// Unit vertex normals from area-weighted incident face normals.
NormalsResult compute_normals(const Mesh& mesh);

/// Differentiable vertex normals of an (N x 3) vertex tensor.
ad::Var vertex_normals(const ad::Var& vertices, const std::vector<Face>& faces);

/// Partner of every vertex under the x -> -x mirror. Vertices on the plane
/// are their own partner.
struct MirrorMap {
    std::vector<std::size_t> partner;
    std::size_t size() const { return partner.size(); }
};

/// Nearest-mirror matching within `tolerance` model units. Throws
/// GeometryError naming the first off-plane vertex without a partner.
MirrorMap mirror_pairs(const Mesh& mesh, double tolerance = 1e-6);

/// Projection onto mirror-equivariant 3-vector fields: each vertex gets the
/// average of its value and its partner's x-negated value.
VertexField symmetrize(const VertexField& field, const MirrorMap& mirror);
VertexField symmetrize(const VertexField& field, const Mesh& mesh);

/// Same projection on a tensor holding one or more stacked (N x 3) fields.
/// The projection is self-adjoint, so backward applies it to the gradient.
ad::Var symmetrize(const ad::Var& fields, const MirrorMap& mirror);
void symmetrize_in_place(std::span<double> fields, const MirrorMap& mirror);

/// Mesh reflected through x = 0, with face winding flipped to stay outward.
Mesh mirrored(const Mesh& mesh);

Mesh read_obj(std::istream& in);
void write_obj(const Mesh& mesh, std::ostream& out);
Mesh load_obj(const std::filesystem::path& path);
void save_obj(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace quadbank::geometry
