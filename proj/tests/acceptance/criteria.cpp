#include "acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "quadbank/harness.hpp"
#include "quadbank/objective.hpp"

namespace acceptance {
namespace {

using namespace quadbank;
using geometry::Mesh;
using geometry::Vec3;

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

render::Camera camera(std::size_t px) {
    render::Camera c;
    c.width = c.height = px;
    return c;
}

fit::FitResult run_fit(const harness::ViewSet& vs, const bank::SemanticBank& bk, const fit::FitConfig& c) {
    std::vector<fit::Target> targets;
    for (const auto& v : vs.views) targets.push_back(harness::make_target(v));
    return fit::fit_instance(targets, bk, c);
}

double z_extent(const Mesh& m) {
    const auto [lo, hi] = std::ranges::minmax(m.vertices, {}, [](const Vec3& v) { return v.z(); });
    return hi.z() - lo.z();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto terms = harness::gradient_suite(1, 0);
    const double sec = seconds_since(t0);
    const std::vector<std::string> required = {"mask", "image", "feature", "deformation", "articulation",
                                               "soft_silhouette", "shading", "lbs"};
    bool pass = sec < 60;
    double worst = 0;
    std::string detail;
    for (const auto& t : terms) {
        worst = std::max(worst, t.report.max_rel_error);
        pass = pass && t.report.max_rel_error < 1e-4 && t.report.checked > 0;
        detail += format("%s %.1e, ", t.name.c_str(), t.report.max_rel_error);
    }
    for (const auto& name : required)
        pass = pass && std::ranges::any_of(terms, [&](const auto& t) { return t.name == name; });
    return {pass, detail + format("max %.2e in %.1f s", worst, sec)};
}

Outcome rasterizer_oracle() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> count(1, 60);
    std::uniform_real_distribution<double> xy(-1.6, 1.6), z(-4, 4), jitter(-0.5, 0.5);
    const auto cam = camera(64);
    std::size_t coverage_mismatch = 0, covered = 0;
    double depth_err = 0;
    for (int scene = 0; scene < 100; ++scene) {
        Mesh m;
        const std::size_t faces = count(rng);
        for (std::size_t f = 0; f < faces; ++f) {
            const Vec3 c(xy(rng), xy(rng), z(rng));
            for (int k = 0; k < 3; ++k) m.vertices.push_back(c + Vec3(jitter(rng), jitter(rng), jitter(rng)));
            const int b = static_cast<int>(3 * f);
            m.faces.push_back({b, b + 1, b + 2});
        }
        const auto proj = render::project(cam, m.vertices);
        std::vector<oracle::ScreenVertex> screen;
        for (const auto& p : proj) screen.push_back({p.x, p.y, p.depth, p.valid});
        const auto fr = render::rasterize_fragments(proj, m.faces, 64, 64, 1);
        const auto ref = oracle::raster_bruteforce(screen, m.faces, 64, 64);
        for (std::size_t p = 0; p < cam.pixels(); ++p) {
            if (fr.face[p] != ref.face[p]) {
                ++coverage_mismatch;
                continue;
            }
            if (ref.face[p] < 0) continue;
            ++covered;
            depth_err = std::max(depth_err, std::abs(fr.depth[p] - ref.depth[p]));
        }
    }
    return {coverage_mismatch == 0 && depth_err <= 1e-9 && covered > 0,
            format("%zu coverage mismatches, max depth error %.1e over %zu covered pixels", coverage_mismatch,
                   depth_err, covered)};
}

Outcome structural_identities() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    const harness::SynthScene s = harness::synth_quadruped(harness::SynthSpec{});
    const std::size_t n = s.mesh.num_vertices(), nb = s.skeleton.size();

    const Mesh rest = skeleton::lbs_pose(s.mesh, s.skeleton, s.weights, skeleton::Pose::rest(nb));
    double lbs_err = 0;
    for (std::size_t i = 0; i < n; ++i)
        lbs_err = std::max(lbs_err, (rest.vertices[i] - s.mesh.vertices[i]).cwiseAbs().maxCoeff());
    {
        ad::Tape tape;
        const ad::Var v = skeleton::lbs(tape.constant(s.mesh.vertex_tensor()), s.skeleton, s.weights,
                                        tape.constant(ad::Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})),
                                        tape.constant(ad::Tensor({3})),
                                        skeleton::euler_rotations(tape.constant(ad::Tensor({nb, 3}))));
        const auto ref = s.mesh.vertex_tensor();
        for (std::size_t i = 0; i < ref.size(); ++i) lbs_err = std::max(lbs_err, std::abs(v.value()[i] - ref[i]));
    }

    double skin_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t b = 0; b < nb; ++b) row += s.weights(i, b);
        skin_err = std::max(skin_err, std::abs(row - 1));
    }

    const bank::SemanticBank bk = bank::random_bank(s.mesh, 60, 5);
    double sum_err = 0, scale_err = 0;
    for (int trial = 0; trial < 20; ++trial) {
        bank::ImageEmbedding phi;
        for (std::size_t k = 0; k < bk.key_dim(); ++k) phi.values.push_back(u(rng));
        const auto q = bank::query(bk, phi);
        sum_err = std::max(sum_err, std::abs(std::accumulate(q.weights.begin(), q.weights.end(), 0.0) - 1));
        for (double c : {1e-3, 3.7, 250.0}) {
            bank::ImageEmbedding scaled = phi;
            for (double& v : scaled.values) v *= c;
            const auto qs = bank::query(bk, scaled);
            for (std::size_t k = 0; k < q.weights.size(); ++k)
                scale_err = std::max(scale_err, std::abs(qs.weights[k] - q.weights[k]));
        }
    }

    geometry::VertexField field(n, 3);
    for (double& v : field.data) v = u(rng);
    const auto once = geometry::symmetrize(field, s.mesh);
    const auto twice = geometry::symmetrize(once, s.mesh);
    double sym_err = 0;
    for (std::size_t i = 0; i < once.data.size(); ++i) sym_err = std::max(sym_err, std::abs(once.data[i] - twice.data[i]));

    skeleton::Pose pose = skeleton::Pose::rest(nb);
    for (auto& a : pose.joint_angles) a = Vec3(3 * u(rng), 3 * u(rng), 3 * u(rng));
    const auto limits = skeleton::quadruped_limits(s.skeleton);
    const auto c1 = skeleton::clamp_angles(pose, limits);
    const auto c2 = skeleton::clamp_angles(c1, limits);
    const bool clamp_ok = c1.joint_angles == c2.joint_angles;

    double hyp_grad = 0, disc_grad = 0;
    {
        const auto cam = camera(32);
        ad::Tape tape;
        const ad::Var verts = tape.param(s.mesh.vertex_tensor());
        const ad::Var posed = skeleton::rigid_transform(verts, tape.constant(ad::Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})),
                                                        tape.constant(ad::Tensor({3})));
        const ad::Var mask = render::soft_silhouette(render::project(cam, posed), s.mesh.faces, cam, 1e-3);
        ad::Tensor target({cam.pixels()});
        for (std::size_t p = 0; p < cam.pixels(); ++p) target[p] = p % cam.width < cam.width / 2 ? 1.0 : 0.0;
        const auto dt = objective::distance_transform(target.data, 32, 32);
        const ad::Var rec = objective::mask_loss(mask, target, dt.distance, 0.1);
        const ad::Var score = tape.param(ad::Tensor::scalar(0.3));
        tape.backward(objective::hyp_loss(score, rec));
        for (double g : tape.grad(verts).data) hyp_grad = std::max(hyp_grad, std::abs(g));
        if (tape.grad(score)[0] == 0) hyp_grad = std::numeric_limits<double>::infinity();
    }
    {
        ad::Tape tape;
        ad::Tensor keys = bk.keys();
        const ad::Var kv = tape.param(keys);
        bank::ImageEmbedding phi;
        for (std::size_t k = 0; k < bk.key_dim(); ++k) phi.values.push_back(u(rng));
        const ad::Var w = bank::query_weights(kv, phi, bk.top_m());
        const ad::Var emb = ad::matmul(ad::reshape(w, {1, bk.size()}), tape.constant(bk.values()));
        const ad::Var fixed = ad::detach(emb);
        ad::Tensor m({objective::kDiscResolution * objective::kDiscResolution});
        for (double& v : m.data) v = 0.5 * (u(rng) + 1);
        const ad::Var mv = tape.param(m);
        const auto d = objective::Discriminator::random(9, bk.value_dim());
        const ad::Var logit = objective::discriminator_logit(objective::bind(tape, d, false), mv, fixed.value().data);
        tape.backward(ad::add(objective::generator_loss(std::span<const ad::Var>(&logit, 1)), ad::sum(ad::mul_scalar(fixed, 0.0))));
        for (double g : tape.grad(kv).data) disc_grad = std::max(disc_grad, std::abs(g));
    }

    const bool pass = lbs_err <= 1e-12 && skin_err <= 1e-9 && sum_err <= 1e-12 && scale_err <= 1e-12 && sym_err <= 1e-12 &&
                      clamp_ok && hyp_grad == 0 && disc_grad == 0;
    return {pass, format("lbs %.1e, skin rows %.1e, bank sum %.1e, bank scale %.1e, symmetrize %.1e, clamp %s, "
                         "hyp mesh grad %.1e, disc embedding grad %.1e",
                         lbs_err, skin_err, sum_err, scale_err, sym_err, clamp_ok ? "idempotent" : "changed", hyp_grad,
                         disc_grad)};
}

Outcome distance_transform_oracle() {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> density(0.002, 0.5), u(0, 1);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const double d = density(rng);
        std::vector<double> m(32 * 32);
        for (double& v : m) v = u(rng) < d ? 1.0 : 0.0;
        if (std::ranges::none_of(m, [](double v) { return v > 0.5; })) m[rng() % m.size()] = 1.0;
        const auto dt = objective::distance_transform(m, 32, 32);
        const auto ref = oracle::edt_bruteforce(m, 32, 32, 1.0);
        for (std::size_t i = 0; i < m.size(); ++i) mismatches += dt.distance[i] != std::sqrt(ref[i]);
    }
    return {mismatches == 0, format("%zu mismatching pixels over 50 masks", mismatches)};
}

Outcome rigid_round_trip() {
    harness::SynthSpec spec;
    spec.azimuths = {30, 150, 240, 320};
    const auto cam = camera(64);
    const auto scene = harness::synth_quadruped(spec);
    const auto vs = harness::generate_views(scene, spec, cam, 1);
    const auto bk = bank::random_bank(scene.mesh, 60, 7, 0.0, 10, bank::kKeyDim, bank::kValueDim,
                                      harness::reduced_features(scene.raw_features, vs.pca));
    fit::FitConfig c;
    c.camera = cam;
    c.batch = 4;
    c.schedule.articulation = c.schedule.discriminator_start = c.schedule.discriminator_end = 1.0;
    c.schedule.late_weights = c.schedule.deformation = 1.0;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_fit(vs, bk, c);
    const double sec = seconds_since(t0);

    bool pass = sec < 120;
    double worst_az = 0, worst_mask = 0;
    for (std::size_t v = 0; v < r.views.size(); ++v) {
        const auto& vr = r.views[v];
        const double d = std::abs(std::remainder(vr.azimuths_deg[vr.hypothesis] - spec.azimuths[v], 360.0));
        worst_az = std::max(worst_az, d);
        worst_mask = std::max(worst_mask, vr.mask_loss);
    }
    pass = pass && worst_az < 5 && worst_mask < 1e-3;
    return {pass, format("max azimuth error %.2f deg, max mask loss %.1e, %.0f s", worst_az, worst_mask, sec)};
}

Outcome articulated_round_trip() {
    harness::SynthSpec spec;
    for (int i = 0; i < 8; ++i) spec.azimuths.push_back(22.5 + 45 * i);
    spec.leg_bend_deg = 20;
    const auto cam = camera(64);
    const auto scene = harness::synth_quadruped(spec);
    const auto vs = harness::generate_views(scene, spec, cam, 1);
    const auto bk = bank::random_bank(scene.mesh, 60, 7, 0.0, 10, bank::kKeyDim, bank::kValueDim,
                                      harness::reduced_features(scene.raw_features, vs.pca));
    fit::FitConfig c;
    c.camera = cam;
    c.share_articulation = true;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_fit(vs, bk, c);
    const double sec = seconds_since(t0);

    double min_iou = 1;
    for (std::size_t v = 0; v < r.views.size(); ++v)
        min_iou = std::min(min_iou, harness::eval_iou(fit::render_mask(r, v, cam), vs.views[v].mask));
    double worst_angle = 0;
    std::size_t bones = 0;
    for (std::size_t b = skeleton::kSpineBones; b < r.skeleton.size(); ++b) {
        double max_w = 0;
        for (std::size_t i = 0; i < r.skin.num_vertices; ++i) max_w = std::max(max_w, r.skin(i, b));
        if (max_w <= 0.5) continue;
        ++bones;
        for (const auto& vr : r.views)
            worst_angle = std::max(worst_angle, std::abs(vr.pose.joint_angles[b].x() - scene.pose.joint_angles[b].x()) *
                                                    180 / std::numbers::pi);
    }
    const bool pass = min_iou >= 0.9 && bones > 0 && worst_angle <= 15 && sec < 900;
    return {pass, format("min IoU %.3f, max leg x-angle error %.1f deg over %zu bones, %.0f s", min_iou, worst_angle,
                         bones, sec)};
}

Outcome discriminator_ablation() {
    const auto cam = camera(64);
    double sum_off = 0, sum_on = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        harness::SynthSpec spec;
        spec.frontal_bias = 0.8;
        spec.seed = seed;
        const auto scene = harness::synth_quadruped(spec);
        harness::SynthSpec longer = spec;
        longer.body_length *= 1.3;
        const auto templ = harness::synth_quadruped(longer);
        const auto vs = harness::generate_views(scene, spec, cam, 1);
        const auto bk = bank::random_bank(templ.mesh, 60, 7, 0.2, 10, bank::kKeyDim, bank::kValueDim,
                                          harness::reduced_features(templ.raw_features, vs.pca));
        double dev[2];
        for (int use = 0; use < 2; ++use) {
            fit::FitConfig c;
            c.camera = cam;
            c.seed = seed;
            c.share_articulation = true;
            c.use_discriminator = use == 1;
            const auto r = run_fit(vs, bk, c);
            dev[use] = std::abs(z_extent(r.base) / z_extent(scene.mesh) - 1);
        }
        sum_off += dev[0];
        sum_on += dev[1];
        detail += format("seed %d off %.3f on %.3f, ", static_cast<int>(seed), dev[0], dev[1]);
    }
    return {sum_on < sum_off, detail + format("mean off %.3f on %.3f", sum_off / 3, sum_on / 3)};
}

Outcome metric_sanity() {
    harness::SynthSpec spec;
    spec.azimuths = {10, 40, 80, 120, 160, 200, 240, 280, 320, 350};
    const auto cam = camera(64);
    const auto s = harness::synth_quadruped(spec);
    const auto vs = harness::generate_views(s, spec, cam, 1);
    std::vector<harness::Reconstruction> rec;
    for (const auto& v : vs.views) rec.push_back(harness::make_reconstruction(harness::posed_mesh(s, v.pose), cam));

    double self = 1, cross = 1;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        self = std::min(self, harness::eval_keypoint_transfer(rec[i], rec[i], vs.views[i].keypoints, vs.views[i].keypoints));
        for (std::size_t j = 0; j < rec.size(); ++j) {
            const double p = harness::eval_keypoint_transfer(rec[i], rec[j], vs.views[i].keypoints, vs.views[j].keypoints);
            if (!std::isnan(p)) cross = std::min(cross, p);
        }
    }
    std::vector<harness::KeypointSet> kps;
    for (const auto& r : rec) {
        harness::KeypointSet k;
        for (std::size_t id : s.keypoint_vertex) {
            k.xy.push_back(r.xy[id]);
            k.visible.push_back(true);
        }
        kps.push_back(k);
    }
    const double linear = harness::eval_pck_linear(rec, kps);
    return {self == 1.0 && cross == 1.0 && linear == 1.0,
            format("self-transfer %.3f, cross-view %.3f, linear %.3f", self, cross, linear)};
}

Outcome interpolation_linearity() {
    const auto s = harness::synth_quadruped(harness::SynthSpec{});
    const auto bk = bank::random_bank(s.mesh, 60, 11, 0.2);
    const auto wa = bank::random_fusion_weights(bk.size(), 5, 1);
    const auto wb = bank::random_fusion_weights(bk.size(), 5, 2);
    const Mesh a = bank::synthesize_base(bk, wa), b = bank::synthesize_base(bk, wb);
    double err = 0;
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        std::vector<double> w(wa.size());
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = (1 - alpha) * wa[k] + alpha * wb[k];
        const Mesh m = bank::synthesize_base(bk, w);
        for (std::size_t i = 0; i < m.num_vertices(); ++i)
            err = std::max(err, (m.vertices[i] - ((1 - alpha) * a.vertices[i] + alpha * b.vertices[i])).cwiseAbs().maxCoeff());
    }
    return {err <= 1e-9, format("max deviation %.1e", err)};
}

}  // namespace

std::vector<Criterion> criteria() {
    return {
        {1, "gradient suite", gradient_suite},
        {2, "rasterizer oracle", rasterizer_oracle},
        {3, "structural identities", structural_identities},
        {4, "distance transform oracle", distance_transform_oracle},
        {5, "rigid round trip", rigid_round_trip},
        {6, "articulated round trip", articulated_round_trip},
        {7, "discriminator ablation", discriminator_ablation},
        {8, "metric sanity", metric_sanity},
        {9, "interpolation linearity", interpolation_linearity},
    };
}

int run(const std::vector<int>& ids, std::ostream& out) {
    int failures = 0;
    for (const auto& c : criteria()) {
        if (!ids.empty() && std::ranges::find(ids, c.id) == ids.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        out << "criterion " << c.id << " " << c.name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")"
            << std::endl;
    }
    return failures;
}

}  // namespace acceptance
