#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "quadbank/fit.hpp"

namespace quadbank::fit {
namespace {

constexpr double kQuadrant = 90.0;
constexpr double kDeg = std::numbers::pi / 180.0;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double geometric(double from, double to, std::size_t iteration, std::size_t total) {
    if (total <= 1) return to;
    const double t = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(total - 1));
    return from * std::pow(to / from, t);
}

bool in_unit(double x) { return x >= 0 && x <= 1; }

}  // namespace

void Schedule::validate() const {
    for (double f : {articulation, discriminator_start, discriminator_end, late_weights, deformation, explore_uniform,
                     explore_end, explore_floor}) {
        if (!in_unit(f)) throw FitError("schedule fractions must lie in [0, 1]");
    }
    if (!(articulation <= discriminator_start && discriminator_start <= discriminator_end &&
          discriminator_end <= deformation)) {
        throw FitError("schedule: articulation <= discriminator window <= deformation required");
    }
    if (!(explore_uniform <= explore_end)) throw FitError("schedule: exploration must end after its uniform phase");
}

void LearningRates::validate() const {
    for (double r : {bank, offsets, features, viewpoint, translation, articulation, deformation, appearance, scores, discriminator}) {
        if (!(r >= 0) || !std::isfinite(r)) throw FitError("learning rates must be finite and non-negative");
    }
    if (!(final_factor > 0 && final_factor <= 1)) throw FitError("learning-rate final factor must lie in (0, 1]");
}

void FitConfig::validate() const {
    if (iterations == 0) throw FitError("fit: need at least one iteration");
    if (batch == 0) throw FitError("fit: batch size must be at least 1");
    camera.validate();
    schedule.validate();
    lr.validate();
    weights.validate();
    if (!(tau_start > 0 && tau_end > 0)) throw FitError("fit: hypothesis temperatures must be positive");
    if (!(sigma_start > 0 && sigma_end > 0)) throw FitError("fit: silhouette sharpness must be positive");
    if (offset_smoothing < 0) throw FitError("fit: offset smoothing rounds must be non-negative");
}

std::size_t FitConfig::boundary(double fraction) const {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(iterations)));
}

int stage_at(std::size_t iteration, const FitConfig& c) {
    if (iteration >= c.boundary(c.schedule.deformation)) return 3;
    if (iteration >= c.boundary(c.schedule.articulation)) return 2;
    return 1;
}

bool discriminator_active(std::size_t iteration, const FitConfig& c) {
    return iteration >= c.boundary(c.schedule.discriminator_start) && iteration < c.boundary(c.schedule.discriminator_end);
}

bool late_weights_active(std::size_t iteration, const FitConfig& c) {
    return iteration >= c.boundary(c.schedule.late_weights);
}

double exploration_probability(std::size_t iteration, const FitConfig& c) {
    const double it = static_cast<double>(iteration), n = static_cast<double>(c.iterations);
    const double a = c.schedule.explore_uniform * n, b = c.schedule.explore_end * n;
    if (it < a) return 1.0;
    if (it >= b) return c.schedule.explore_floor;
    return 1.0 + (c.schedule.explore_floor - 1.0) * (it - a) / (b - a);
}

double tau_at(std::size_t iteration, const FitConfig& c) { return geometric(c.tau_start, c.tau_end, iteration, c.iterations); }

double sigma_at(std::size_t iteration, const FitConfig& c) {
    return geometric(c.sigma_start, c.sigma_end, iteration, c.iterations);
}

double lr_factor_at(std::size_t iteration, const FitConfig& c) {
    return geometric(1.0, c.lr.final_factor, iteration, c.iterations);
}

// ---------------------------------------------------------------------------

double HypothesisSet::azimuth_deg(std::size_t k) const {
    return kQuadrant * (static_cast<double>(k) + sigmoid(azimuth_logit.at(k)));
}

double HypothesisSet::score(std::size_t k) const { return std::exp(log_score.at(k)); }

std::array<double, kNumHypotheses> HypothesisSet::scores() const {
    std::array<double, kNumHypotheses> s{};
    for (std::size_t k = 0; k < kNumHypotheses; ++k) s[k] = score(k);
    return s;
}

std::size_t HypothesisSet::best() const {
    return static_cast<std::size_t>(std::min_element(log_score.begin(), log_score.end()) - log_score.begin());
}

Eigen::Matrix3d HypothesisSet::rotation(std::size_t k) const {
    return (Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(elevation, Eigen::Vector3d::UnitX()) *
            Eigen::AngleAxisd(azimuth_deg(k) * kDeg, Eigen::Vector3d::UnitY()))
        .toRotationMatrix();
}

double HypothesisSet::logit_for(std::size_t k, double azimuth_deg) {
    if (k >= kNumHypotheses) throw FitError("hypothesis index out of range");
    const double u = std::clamp(azimuth_deg / kQuadrant - static_cast<double>(k), 1e-6, 1 - 1e-6);
    return std::log(u / (1 - u));
}

std::size_t quadrant_of(double azimuth_deg) {
    double a = std::fmod(azimuth_deg, 360.0);
    if (a < 0) a += 360.0;
    return std::min<std::size_t>(kNumHypotheses - 1, static_cast<std::size_t>(a / kQuadrant));
}

std::size_t sample_hypothesis(const HypothesisSet& h, std::size_t iteration, const FitConfig& c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const bool explore = coin(rng) < exploration_probability(iteration, c);
    if (!explore) return h.best();
    std::uniform_int_distribution<std::size_t> pick(0, kNumHypotheses - 1);
    return pick(rng);
}

ad::Var hypothesis_rotation(const ad::Var& logits, const ad::Var& elevation, const ad::Var& roll, std::size_t k) {
    if (logits.size() != kNumHypotheses || elevation.size() != 1 || roll.size() != 1 || k >= kNumHypotheses) {
        throw FitError("hypothesis_rotation: expected 4 logits, scalar elevation and roll, k < 4");
    }
    const double q = std::numbers::pi / 2;
    const ad::Var az = ad::add_scalar(ad::mul_scalar(ad::sigmoid(ad::slice(logits, k, {1})), q), q * static_cast<double>(k));
    return ad::matmul(skeleton::axis_rotation(roll, 2),
                      ad::matmul(skeleton::axis_rotation(elevation, 0), skeleton::axis_rotation(az, 1)));
}

// ---------------------------------------------------------------------------

DiscriminatorStep update_discriminator(DiscriminatorState& d, std::size_t iteration, const FitConfig& c,
                                       std::span<const std::vector<double>> real,
                                       std::span<const std::vector<double>> fake, std::span<const double> embedding) {
    DiscriminatorStep step;
    if (!c.use_discriminator || !discriminator_active(iteration, c) || real.empty() || fake.empty()) return step;
    const std::size_t px = objective::kDiscResolution * objective::kDiscResolution;
    ad::Tape tape;
    const objective::DiscriminatorVars dv = objective::bind(tape, d.model, true);
    std::vector<ad::Var> rl, fl;
    for (const auto& m : real) {
        if (m.size() != px) throw FitError("discriminator: real masks must be 32x32");
        rl.push_back(objective::discriminator_logit(dv, tape.constant(ad::Tensor({px}, m)), embedding));
    }
    for (const auto& m : fake) {
        if (m.size() != px) throw FitError("discriminator: fake masks must be 32x32");
        fl.push_back(objective::discriminator_logit(dv, tape.constant(ad::Tensor({px}, m)), embedding));
    }
    const ad::Var real_term = ad::neg(objective::generator_loss(rl));
    const ad::Var value = objective::adversarial_value(rl, fl);
    step.real_term = real_term.item();
    step.fake_term = value.item() - step.real_term;
    tape.backward(ad::neg(value));
    std::vector<ad::Tensor> grads;
    for (const auto& p : dv.params) grads.push_back(tape.grad(p));
    if (c.weights.r1 > 0) {
        step.r1 = objective::r1_penalty(d.model, real, embedding);
        const auto rg = objective::r1_gradient(d.model, real, embedding);
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += c.weights.r1 * rg[i][j];
    }
    std::vector<ad::Tensor*> ptrs;
    for (auto& p : d.model.params) ptrs.push_back(&p);
    ad::adam_step(d.adam, ptrs, grads);
    step.applied = true;
    return step;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const FitConfig& c) {
    const auto& s = c.schedule;
    const auto& r = c.lr;
    return {{"iterations", c.iterations},
            {"batch", c.batch},
            {"seed", c.seed},
            {"camera",
             {{"fov_deg", c.camera.fov_deg},
              {"position", {c.camera.position.x(), c.camera.position.y(), c.camera.position.z()}},
              {"width", c.camera.width},
              {"height", c.camera.height}}},
            {"schedule",
             {{"articulation", s.articulation},
              {"discriminator_start", s.discriminator_start},
              {"discriminator_end", s.discriminator_end},
              {"late_weights", s.late_weights},
              {"deformation", s.deformation},
              {"explore_uniform", s.explore_uniform},
              {"explore_end", s.explore_end},
              {"explore_floor", s.explore_floor}}},
            {"lr",
             {{"bank", r.bank},
              {"offsets", r.offsets},
              {"features", r.features},
              {"viewpoint", r.viewpoint},
              {"translation", r.translation},
              {"articulation", r.articulation},
              {"deformation", r.deformation},
              {"appearance", r.appearance},
              {"scores", r.scores},
              {"discriminator", r.discriminator},
              {"final_factor", r.final_factor}}},
            {"weights", objective::to_json(c.weights)},
            {"tau_start", c.tau_start},
            {"tau_end", c.tau_end},
            {"sigma_start", c.sigma_start},
            {"sigma_end", c.sigma_end},
            {"use_discriminator", c.use_discriminator},
            {"use_articulation", c.use_articulation},
            {"use_deformation", c.use_deformation},
            {"train_bank", c.train_bank},
            {"train_features", c.train_features},
            {"offset_smoothing", c.offset_smoothing},
            {"share_articulation", c.share_articulation},
            {"jobs", c.jobs}};
}

FitConfig fit_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FitError("fit config must be a JSON object");
    FitConfig c;
    try {
        c.iterations = j.value("iterations", c.iterations);
        c.batch = j.value("batch", c.batch);
        c.seed = j.value("seed", c.seed);
        if (j.contains("camera")) {
            const auto& jc = j["camera"];
            c.camera.fov_deg = jc.value("fov_deg", c.camera.fov_deg);
            if (jc.contains("position")) {
                const auto p = jc["position"].get<std::vector<double>>();
                if (p.size() != 3) throw FitError("fit config: camera position needs 3 entries");
                c.camera.position = geometry::Vec3(p[0], p[1], p[2]);
            }
            c.camera.width = jc.value("width", c.camera.width);
            c.camera.height = jc.value("height", c.camera.height);
        }
        if (j.contains("schedule")) {
            const auto& js = j["schedule"];
            auto& s = c.schedule;
            s.articulation = js.value("articulation", s.articulation);
            s.discriminator_start = js.value("discriminator_start", s.discriminator_start);
            s.discriminator_end = js.value("discriminator_end", s.discriminator_end);
            s.late_weights = js.value("late_weights", s.late_weights);
            s.deformation = js.value("deformation", s.deformation);
            s.explore_uniform = js.value("explore_uniform", s.explore_uniform);
            s.explore_end = js.value("explore_end", s.explore_end);
            s.explore_floor = js.value("explore_floor", s.explore_floor);
        }
        if (j.contains("lr")) {
            const auto& jl = j["lr"];
            auto& r = c.lr;
            r.bank = jl.value("bank", r.bank);
            r.offsets = jl.value("offsets", r.offsets);
            r.features = jl.value("features", r.features);
            r.viewpoint = jl.value("viewpoint", r.viewpoint);
            r.translation = jl.value("translation", r.translation);
            r.articulation = jl.value("articulation", r.articulation);
            r.deformation = jl.value("deformation", r.deformation);
            r.appearance = jl.value("appearance", r.appearance);
            r.scores = jl.value("scores", r.scores);
            r.discriminator = jl.value("discriminator", r.discriminator);
            r.final_factor = jl.value("final_factor", r.final_factor);
        }
        if (j.contains("weights")) c.weights = objective::loss_weights_from_json(j["weights"]);
        c.tau_start = j.value("tau_start", c.tau_start);
        c.tau_end = j.value("tau_end", c.tau_end);
        c.sigma_start = j.value("sigma_start", c.sigma_start);
        c.sigma_end = j.value("sigma_end", c.sigma_end);
        c.use_discriminator = j.value("use_discriminator", c.use_discriminator);
        c.use_articulation = j.value("use_articulation", c.use_articulation);
        c.use_deformation = j.value("use_deformation", c.use_deformation);
        c.train_bank = j.value("train_bank", c.train_bank);
        c.train_features = j.value("train_features", c.train_features);
        c.offset_smoothing = j.value("offset_smoothing", c.offset_smoothing);
        c.share_articulation = j.value("share_articulation", c.share_articulation);
        c.jobs = j.value("jobs", c.jobs);
    } catch (const nlohmann::json::exception& e) {
        throw FitError(std::string("fit config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace quadbank::fit
