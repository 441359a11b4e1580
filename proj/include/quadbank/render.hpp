#pragma once

// Pinhole camera, tiled z-buffer rasterization, perspective-correct
// attribute interpolation, soft silhouettes and Lambertian shading.
//
// Screen space: pixel (x, y) covers [x, x+1) x [y, y+1) and is sampled at its
// centre; y grows downward. Projected vertices are (px, py, depth) with depth
// measured along the viewing axis.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "quadbank/autodiff.hpp"
#include "quadbank/geometry.hpp"

namespace quadbank::render {

using geometry::Vec3;

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Looks at the origin with +y up. `fov_deg` is the horizontal field of view.
struct Camera {
    double fov_deg = 25.0;
    Vec3 position = Vec3(0, 0, 10);
    std::size_t width = 256;
    std::size_t height = 256;

    void validate() const;
    std::size_t pixels() const { return width * height; }
    /// Camera basis: right, up, forward (toward the origin).
    void basis(Vec3& right, Vec3& up, Vec3& forward) const;
};

struct Projection {
    double x = 0;
    double y = 0;
    double depth = 0;
    bool valid = false;  // false at or behind the camera plane
};

Projection project(const Camera& cam, const Vec3& p);
std::vector<Projection> project(const Camera& cam, const std::vector<Vec3>& points);

/// Differentiable projection of (N x 3) world points to (N x 3) rows of
/// (px, py, depth). Points behind the camera keep their (meaningless)
/// values; the rasterizers skip faces touching them.
ad::Var project(const Camera& cam, const ad::Var& points);

/// Per-pixel nearest-surface record from the hard rasterizer.
struct Fragments {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<int> face;      // -1 where empty
    std::vector<double> depth;  // +inf where empty
    std::vector<double> bary;   // 3 perspective-correct weights per pixel

    bool covered(std::size_t pixel) const { return face[pixel] >= 0; }
};

/// Z-buffer over 16x16 tiles on `jobs` threads (0 = hardware concurrency).
/// Depth ties go to the lower face index. Back faces are kept.
Fragments rasterize_fragments(const std::vector<Projection>& projected, const std::vector<geometry::Face>& faces,
                              std::size_t width, std::size_t height, unsigned jobs = 0);

struct RenderBuffers {
    std::size_t width = 0;
    std::size_t height = 0;
    Fragments fragments;
    std::vector<double> mask;  // 1 where covered
    /// One (H*W x dim) interleaved buffer per input attribute, zero where empty.
    std::vector<std::vector<double>> attributes;
};

RenderBuffers rasterize(const geometry::Mesh& mesh, const std::vector<geometry::VertexField>& attributes,
                        const Camera& cam, unsigned jobs = 0);

/// Differentiable perspective-correct interpolation of (N x C) vertex
/// attributes, giving (H*W x C). The pixel-to-face assignment comes from
/// `frags`; barycentrics are recomputed from `projected`, so gradients reach
/// both the attributes and the projected positions.
ad::Var interpolate(const Fragments& frags, const ad::Var& projected, const ad::Var& attributes,
                    const std::vector<geometry::Face>& faces);

inline constexpr double kDefaultSoftSigma = 1e-4;

/// Soft coverage (H*W) from projected vertices: each face contributes
/// alpha = sigmoid(+-d^2 / sigma) (+ inside, - outside, d the distance to the
/// face in normalized device units) and a pixel takes 1 - prod(1 - alpha).
ad::Var soft_silhouette(const ad::Var& projected, const std::vector<geometry::Face>& faces, const Camera& cam,
                        double sigma = kDefaultSoftSigma);
std::vector<double> soft_silhouette(const geometry::Mesh& mesh, const Camera& cam, double sigma = kDefaultSoftSigma);

struct Light {
    double ambient = 0.5;
    double diffuse = 0.5;
    Vec3 direction = Vec3(0, 0, 1);  // toward the light

    void validate() const;
};

/// (k_a + k_d max(0, <l, n>)) * albedo, clamped to 1, on covered pixels.
/// `normals` and `albedo` are (H*W x 3) interleaved; `mask` is H*W.
std::vector<double> shade_lambertian(const std::vector<double>& normals, const std::vector<double>& albedo,
                                     const std::vector<double>& mask, const Light& light);

/// Differentiable shading of (P x 3) normals and albedo; `ambient` and
/// `diffuse` have size 1, `direction` size 3 (unit).
ad::Var shade_lambertian(const ad::Var& normals, const ad::Var& albedo, const ad::Var& ambient,
                         const ad::Var& diffuse, const ad::Var& direction);

/// 8-bit PNG output of an H*W mask or an (H*W x 3) image.
void save_mask_png(const std::vector<double>& mask, std::size_t width, std::size_t height,
                   const std::filesystem::path& path);
void save_rgb_png(const std::vector<double>& rgb, std::size_t width, std::size_t height,
                  const std::filesystem::path& path);

}  // namespace quadbank::render
