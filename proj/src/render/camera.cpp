#include "quadbank/render.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "tiles.hpp"

namespace quadbank::render {

void Camera::validate() const {
    if (!(fov_deg > 0 && fov_deg < 180)) throw RenderError("field of view must lie in (0, 180) degrees");
    if (width == 0 || height == 0) throw RenderError("image size must be at least 1x1");
    if (!position.allFinite() || position.norm() == 0) throw RenderError("camera must sit away from the origin");
}

void Camera::basis(Vec3& right, Vec3& up, Vec3& forward) const {
    forward = (-position).normalized();
    Vec3 world_up(0, 1, 0);
    if (std::abs(forward.dot(world_up)) > 1 - 1e-12) world_up = Vec3(0, 0, -1);
    right = forward.cross(world_up).normalized();
    up = right.cross(forward);
}

Projection project(const Camera& cam, const Vec3& p) {
    Vec3 r, u, f;
    cam.basis(r, u, f);
    const Vec3 rel = p - cam.position;
    const double d = f.dot(rel);
    const double tan_half = std::tan(cam.fov_deg * std::numbers::pi / 360.0);
    const double w = static_cast<double>(cam.width), h = static_cast<double>(cam.height);
    Projection out;
    out.depth = d;
    out.valid = d > detail::kMinDepth;
    if (!out.valid) return out;
    const double nx = r.dot(rel) / (d * tan_half);
    const double ny = u.dot(rel) / (d * tan_half) * (w / h);
    out.x = (nx + 1) * 0.5 * w;
    out.y = (1 - ny) * 0.5 * h;
    return out;
}

std::vector<Projection> project(const Camera& cam, const std::vector<Vec3>& points) {
    std::vector<Projection> out;
    out.reserve(points.size());
    for (const Vec3& p : points) out.push_back(project(cam, p));
    return out;
}

ad::Var project(const Camera& cam, const ad::Var& points) {
    const ad::Tensor& pv = points.value();
    const std::size_t n = pv.size() / 3;
    if (pv.size() != 3 * n) throw RenderError("project: expected (N x 3) points");
    Vec3 r, u, f;
    cam.basis(r, u, f);
    const double tan_half = std::tan(cam.fov_deg * std::numbers::pi / 360.0);
    const double w = static_cast<double>(cam.width);
    const double h = static_cast<double>(cam.height);
    ad::Tensor out({n, 3});
    std::vector<double> cam_coords(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 rel = Vec3(pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]) - cam.position;
        const double xc = r.dot(rel), yc = u.dot(rel), d = f.dot(rel);
        cam_coords[3 * i] = xc;
        cam_coords[3 * i + 1] = yc;
        cam_coords[3 * i + 2] = d;
        out[3 * i] = (xc / (d * tan_half) + 1) * 0.5 * w;
        out[3 * i + 1] = (1 - yc / (d * tan_half) * (w / h)) * 0.5 * h;
        out[3 * i + 2] = d;
    }
    return points.tape()->custom(std::move(out), {points},
                                 [points, cam_coords, r, u, f, tan_half, w](ad::Tape& t, std::span<const double> g) {
                                     const std::size_t n = cam_coords.size() / 3;
                                     std::vector<double> gp(3 * n);
                                     for (std::size_t i = 0; i < n; ++i) {
                                         const double xc = cam_coords[3 * i], yc = cam_coords[3 * i + 1];
                                         const double d = cam_coords[3 * i + 2];
                                         const double k = w / (2 * d * tan_half);
                                         const double g_xc = g[3 * i] * k;
                                         const double g_yc = -g[3 * i + 1] * k;
                                         const double g_d = -g[3 * i] * k * xc / d + g[3 * i + 1] * k * yc / d + g[3 * i + 2];
                                         const Vec3 gw = g_xc * r + g_yc * u + g_d * f;
                                         gp[3 * i] = gw.x();
                                         gp[3 * i + 1] = gw.y();
                                         gp[3 * i + 2] = gw.z();
                                     }
                                     t.accumulate(points, gp);
                                 });
}

}  // namespace quadbank::render
