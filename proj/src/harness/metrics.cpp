#include <cmath>
#include <limits>

#include <Eigen/QR>

#include "quadbank/harness.hpp"

namespace quadbank::harness {
namespace {

constexpr double kVisibleRadius = 1.5;
constexpr double kDepthTolerance = 1e-3;

double threshold_px(std::size_t w, std::size_t h, double threshold) {
    return threshold * static_cast<double>(std::max(w, h));
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

void check_keypoints(const KeypointSet& k) {
    if (k.xy.size() != k.visible.size()) throw HarnessError("keypoint set: coordinates and visibility differ in length");
}

}  // namespace

double eval_iou(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw HarnessError("iou: mask sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] > 0.5, b = target[i] > 0.5;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Reconstruction make_reconstruction(const Mesh& posed, const render::Camera& cam) {
    cam.validate();
    const auto proj = render::project(cam, posed.vertices);
    const auto frags = render::rasterize_fragments(proj, posed.faces, cam.width, cam.height, 1);
    Reconstruction r;
    r.width = cam.width;
    r.height = cam.height;
    r.xy.resize(proj.size());
    r.visible.assign(proj.size(), false);
    const long w = static_cast<long>(cam.width), h = static_cast<long>(cam.height);
    for (std::size_t i = 0; i < proj.size(); ++i) {
        const auto& p = proj[i];
        r.xy[i] = {p.x, p.y};
        if (!p.valid) continue;
        const long x0 = std::max(0L, static_cast<long>(std::floor(p.x - kVisibleRadius - 0.5)));
        const long x1 = std::min(w - 1, static_cast<long>(std::ceil(p.x + kVisibleRadius - 0.5)));
        const long y0 = std::max(0L, static_cast<long>(std::floor(p.y - kVisibleRadius - 0.5)));
        const long y1 = std::min(h - 1, static_cast<long>(std::ceil(p.y + kVisibleRadius - 0.5)));
        for (long y = y0; y <= y1 && !r.visible[i]; ++y) {
            for (long x = x0; x <= x1; ++x) {
                if (std::hypot(x + 0.5 - p.x, y + 0.5 - p.y) > kVisibleRadius) continue;
                const double zb = frags.depth[static_cast<std::size_t>(y * w + x)];
                if (zb >= p.depth * (1 - kDepthTolerance)) {
                    r.visible[i] = true;
                    break;
                }
            }
        }
    }
    return r;
}

double eval_keypoint_transfer(const Reconstruction& source, const Reconstruction& target, const KeypointSet& source_kps,
                              const KeypointSet& target_kps, double threshold) {
    check_keypoints(source_kps);
    check_keypoints(target_kps);
    if (source.xy.size() != target.xy.size()) throw HarnessError("keypoint transfer: reconstructions differ in size");
    if (source_kps.xy.size() != target_kps.xy.size()) throw HarnessError("keypoint transfer: keypoint sets differ");
    const double tol = threshold_px(target.width, target.height, threshold);
    std::size_t counted = 0, correct = 0;
    for (std::size_t k = 0; k < source_kps.xy.size(); ++k) {
        if (!source_kps.visible[k] || !target_kps.visible[k]) continue;
        std::size_t best = source.xy.size();
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < source.xy.size(); ++v) {
            if (!source.visible[v]) continue;
            const double d = dist(source.xy[v], source_kps.xy[k]);
            if (d < bd) {
                bd = d;
                best = v;
            }
        }
        if (best == source.xy.size()) continue;
        ++counted;
        correct += dist(target.xy[best], target_kps.xy[k]) <= tol;
    }
    return counted ? static_cast<double>(correct) / static_cast<double>(counted)
                   : std::numeric_limits<double>::quiet_NaN();
}

double eval_pck_linear(const std::vector<Reconstruction>& train, const std::vector<KeypointSet>& train_kps,
                       const std::vector<Reconstruction>& eval, const std::vector<KeypointSet>& eval_kps,
                       double threshold) {
    if (train.empty() || train.size() != train_kps.size() || eval.size() != eval_kps.size()) {
        throw HarnessError("pck: reconstructions and keypoint sets must pair up");
    }
    const std::size_t nv = train.front().xy.size(), nk = train_kps.front().xy.size();
    for (const auto& r : train)
        if (r.xy.size() != nv) throw HarnessError("pck: reconstructions differ in vertex count");
    for (const auto& r : eval)
        if (r.xy.size() != nv) throw HarnessError("pck: reconstructions differ in vertex count");
    for (const auto* set : {&train_kps, &eval_kps})
        for (const auto& k : *set) {
            check_keypoints(k);
            if (k.xy.size() != nk) throw HarnessError("pck: keypoint sets differ in size");
        }

    // One weight vector per keypoint, shared by x and y and by every instance.
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nk));
    std::vector<bool> fitted(nk, false);
    for (std::size_t k = 0; k < nk; ++k) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train_kps[i].visible[k]) rows.push_back(i);
        if (rows.empty()) continue;
        Eigen::MatrixXd a(static_cast<Eigen::Index>(2 * rows.size()), static_cast<Eigen::Index>(nv));
        Eigen::VectorXd b(a.rows());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto& rec = train[rows[r]];
            for (std::size_t v = 0; v < nv; ++v) {
                a(static_cast<Eigen::Index>(2 * r), static_cast<Eigen::Index>(v)) = rec.xy[v][0];
                a(static_cast<Eigen::Index>(2 * r + 1), static_cast<Eigen::Index>(v)) = rec.xy[v][1];
            }
            b[static_cast<Eigen::Index>(2 * r)] = train_kps[rows[r]].xy[k][0];
            b[static_cast<Eigen::Index>(2 * r + 1)] = train_kps[rows[r]].xy[k][1];
        }
        weights.col(static_cast<Eigen::Index>(k)) = a.completeOrthogonalDecomposition().solve(b);
        fitted[k] = true;
    }

    std::size_t counted = 0, correct = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const double tol = threshold_px(eval[i].width, eval[i].height, threshold);
        for (std::size_t k = 0; k < nk; ++k) {
            if (!eval_kps[i].visible[k] || !fitted[k]) continue;
            std::array<double, 2> pred{0, 0};
            for (std::size_t v = 0; v < nv; ++v) {
                const double wv = weights(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k));
                pred[0] += wv * eval[i].xy[v][0];
                pred[1] += wv * eval[i].xy[v][1];
            }
            ++counted;
            correct += dist(pred, eval_kps[i].xy[k]) <= tol;
        }
    }
    return counted ? static_cast<double>(correct) / static_cast<double>(counted)
                   : std::numeric_limits<double>::quiet_NaN();
}

double eval_pck_linear(const std::vector<Reconstruction>& recons, const std::vector<KeypointSet>& kps, double threshold) {
    return eval_pck_linear(recons, kps, recons, kps, threshold);
}

}  // namespace quadbank::harness
