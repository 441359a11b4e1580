#include <algorithm>
#include <cmath>

#include "quadbank/io.hpp"
#include "quadbank/render.hpp"

namespace quadbank::render {

void Light::validate() const {
    if (!(ambient >= 0 && diffuse >= 0)) throw RenderError("light coefficients must be non-negative");
    if (!direction.allFinite() || std::abs(direction.norm() - 1) > 1e-6) {
        throw RenderError("light direction must be a unit vector");
    }
}

std::vector<double> shade_lambertian(const std::vector<double>& normals, const std::vector<double>& albedo,
                                     const std::vector<double>& mask, const Light& light) {
    light.validate();
    const std::size_t np = mask.size();
    if (normals.size() != 3 * np || albedo.size() != 3 * np) throw RenderError("shade: buffer sizes disagree");
    std::vector<double> out(3 * np, 0.0);
    for (std::size_t p = 0; p < np; ++p) {
        if (mask[p] <= 0) continue;
        Vec3 n(normals[3 * p], normals[3 * p + 1], normals[3 * p + 2]);
        if (n.norm() > 0) n.normalize();
        const double k = light.ambient + light.diffuse * std::max(0.0, light.direction.dot(n));
        for (int c = 0; c < 3; ++c) out[3 * p + c] = std::min(1.0, k * albedo[3 * p + c]);
    }
    return out;
}

ad::Var shade_lambertian(const ad::Var& normals, const ad::Var& albedo, const ad::Var& ambient, const ad::Var& diffuse,
                         const ad::Var& direction) {
    if (normals.value().shape.size() != 2 || normals.value().dim(1) != 3 || albedo.size() != normals.size()) {
        throw RenderError("shade: expected matching (P x 3) normals and albedo");
    }
    if (ambient.size() != 1 || diffuse.size() != 1 || direction.size() != 3) {
        throw RenderError("shade: light parameters have the wrong size");
    }
    const ad::Var cosine = ad::relu(ad::matmul(normals, ad::reshape(direction, {3, 1})));
    const ad::Var intensity = ad::shift(ad::scale(cosine, diffuse), ambient);
    const ad::Var lit = ad::mul_rows(albedo, intensity);
    return ad::neg(ad::add_scalar(ad::relu(ad::add_scalar(ad::neg(lit), 1.0)), -1.0));
}

void save_mask_png(const std::vector<double>& mask, std::size_t width, std::size_t height,
                   const std::filesystem::path& path) {
    if (mask.size() != width * height) throw RenderError("mask size does not match the image");
    io::save_png(path, width, height, 1, mask);
}

void save_rgb_png(const std::vector<double>& rgb, std::size_t width, std::size_t height,
                  const std::filesystem::path& path) {
    if (rgb.size() != 3 * width * height) throw RenderError("image size does not match");
    io::save_png(path, width, height, 3, rgb);
}

}  // namespace quadbank::render
