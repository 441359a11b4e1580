#pragma once

// Staged analysis-by-synthesis fitting of one instance seen in several views.
// Every per-view and per-instance quantity is a free parameter optimized
// directly; the bank keys, offsets and canonical feature field are shared.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quadbank/autodiff.hpp"
#include "quadbank/bank.hpp"
#include "quadbank/geometry.hpp"
#include "quadbank/objective.hpp"
#include "quadbank/render.hpp"
#include "quadbank/skeleton.hpp"

namespace quadbank::fit {

inline constexpr std::size_t kNumHypotheses = 4;

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One observed view: H*W mask, H*W x 3 image, H*W x C features.
struct Target {
    std::vector<double> mask;
    std::vector<double> image;
    std::vector<double> features;
    bank::ImageEmbedding embedding;
};

/// Iteration fractions at which things switch on or off.
struct Schedule {
    double articulation = 0.025;
    double discriminator_start = 0.10;
    double discriminator_end = 0.375;
    double late_weights = 0.375;
    double deformation = 0.625;
    /// Hypotheses are drawn uniformly before this fraction, then the chance
    /// of a uniform draw falls linearly to `explore_floor` at `explore_end`.
    double explore_uniform = 0.0075;
    double explore_end = 0.10;
    double explore_floor = 0.2;

    void validate() const;
};

struct LearningRates {
    double bank = 1e-3;         // keys
    double offsets = 3e-5;      // bank offsets
    double features = 1e-3;     // canonical feature field
    double viewpoint = 1e-1;    // hypothesis azimuths, elevation, roll
    double translation = 5e-2;
    double articulation = 1e-2;
    double deformation = 1e-3;
    double appearance = 2e-2;   // albedo and light
    double scores = 5e-2;       // log hypothesis scores, not decayed
    double discriminator = 1e-3;
    /// Every other rate is scaled geometrically from 1 down to this factor over the run.
    double final_factor = 0.005;

    void validate() const;
};

struct FitConfig {
    std::size_t iterations = 800;
    std::size_t batch = 6;
    std::uint64_t seed = 1;
    render::Camera camera{25.0, geometry::Vec3(0, 0, 10), 64, 64};
    Schedule schedule;
    LearningRates lr;
    objective::LossWeights weights;
    /// Hypothesis temperature, annealed geometrically from start to end.
    double tau_start = 1.0;
    double tau_end = 0.01;
    /// Soft-silhouette sharpness, annealed geometrically from start to end.
    double sigma_start = 1e-3;
    double sigma_end = 1e-7;
    bool use_discriminator = true;
    bool use_articulation = true;
    bool use_deformation = true;
    /// One set of joint angles for every view (a single pose seen from
    /// several cameras) instead of one per view.
    bool share_articulation = false;
    /// Trainable bank keys/offsets; off pins the base shape to its initial query.
    bool train_bank = true;
    bool train_features = true;
    /// Neighbour-averaging rounds applied to the bank offset gradient.
    int offset_smoothing = 10;
    unsigned jobs = 1;

    void validate() const;
    std::size_t boundary(double fraction) const;
};

nlohmann::json to_json(const FitConfig& c);
/// Missing keys keep their defaults.
FitConfig fit_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Schedule queries

/// 1 (rigid), 2 (articulated) or 3 (articulated and deformed).
int stage_at(std::size_t iteration, const FitConfig& c);
bool discriminator_active(std::size_t iteration, const FitConfig& c);
bool late_weights_active(std::size_t iteration, const FitConfig& c);
double exploration_probability(std::size_t iteration, const FitConfig& c);
double tau_at(std::size_t iteration, const FitConfig& c);
double sigma_at(std::size_t iteration, const FitConfig& c);
double lr_factor_at(std::size_t iteration, const FitConfig& c);

// ---------------------------------------------------------------------------
// Viewpoint hypotheses

/// Four rotations, hypothesis k with azimuth in [90k, 90k + 90) degrees
/// reached through a sigmoid, sharing elevation and roll. Each carries a
/// score sigma_k = exp(log_score_k) estimating its reconstruction loss.
struct HypothesisSet {
    std::array<double, kNumHypotheses> azimuth_logit{};
    double elevation = 0;  // radians
    double roll = 0;       // radians
    std::array<double, kNumHypotheses> log_score{};

    double azimuth_deg(std::size_t k) const;
    double score(std::size_t k) const;
    std::array<double, kNumHypotheses> scores() const;
    /// argmin score, ties to the lower index.
    std::size_t best() const;
    /// Rz(roll) Rx(elevation) Ry(azimuth_k).
    Eigen::Matrix3d rotation(std::size_t k) const;
    /// Logit placing hypothesis k at `azimuth_deg` (clamped inside its quadrant).
    static double logit_for(std::size_t k, double azimuth_deg);
};

/// Quadrant containing an azimuth, taken modulo 360.
std::size_t quadrant_of(double azimuth_deg);

/// With probability exploration_probability(iteration), uniform over the
/// four hypotheses; otherwise the best one.
std::size_t sample_hypothesis(const HypothesisSet& h, std::size_t iteration, const FitConfig& c, std::mt19937_64& rng);

/// Differentiable rotation for hypothesis k: `logits` (4), `elevation` and
/// `roll` (1 each) -> (3 x 3).
ad::Var hypothesis_rotation(const ad::Var& logits, const ad::Var& elevation, const ad::Var& roll, std::size_t k);

// ---------------------------------------------------------------------------
// Discriminator alternation

struct DiscriminatorState {
    objective::Discriminator model;
    ad::AdamState adam;
};

struct DiscriminatorStep {
    bool applied = false;
    double real_term = 0;  // E[log D(real)]
    double fake_term = 0;  // E[log(1 - D(fake))]
    double r1 = 0;
};

/// One ascent step of the adversarial value (plus descent on the R1
/// penalty of the real masks) when the iteration lies in the window.
/// Masks are 32x32; the embedding is a constant.
DiscriminatorStep update_discriminator(DiscriminatorState& d, std::size_t iteration, const FitConfig& c,
                                       std::span<const std::vector<double>> real,
                                       std::span<const std::vector<double>> fake, std::span<const double> embedding);

// ---------------------------------------------------------------------------
// Fitting

struct Light {
    double ambient_raw = 0;  // k_a = sigmoid
    double diffuse_raw = 0;  // k_d = 0.5 + 0.5 sigmoid
    geometry::Vec3 direction = geometry::Vec3(0, 0, 1);

    render::Light resolve() const;
};

/// Translation inside (+-0.4, +-0.4, +-1).
geometry::Vec3 boxed_translation(const geometry::Vec3& raw);

struct IterationLog {
    std::size_t iteration = 0;
    int stage = 1;
    double sigma = 0;
    double total = 0;
    double mask = 0;
    double image = 0;
    double feature = 0;
    double deform = 0;
    double articulation = 0;
    double hyp = 0;
    double adversarial = 0;
    DiscriminatorStep discriminator;
    /// Gradient norms reaching the joint angles and deformation this step.
    double articulation_grad = 0;
    double deformation_grad = 0;
};

struct ViewResult {
    skeleton::Pose pose;  // best hypothesis
    std::size_t hypothesis = 0;
    std::array<double, kNumHypotheses> azimuths_deg{};
    std::array<double, kNumHypotheses> scores{};
    std::array<double, kNumHypotheses> probabilities{};
    /// Reconstruction loss of the best hypothesis at the final iterate.
    double reconstruction = 0;
    double mask_loss = 0;
    bool skipped = false;
};

struct FitResult {
    explicit FitResult(bank::SemanticBank b) : bank(std::move(b)) {}

    bank::SemanticBank bank;
    std::vector<double> bank_weights;
    bank::ShapeEmbedding shape;
    geometry::Mesh base;        // rest pose, before deformation
    geometry::VertexField deformation;  // N x 3, symmetric
    geometry::VertexField albedo;       // N x 3
    geometry::VertexField features;     // canonical feature field
    Light light;
    skeleton::Skeleton skeleton;
    skeleton::SkinWeights skin;
    std::vector<ViewResult> views;
    std::vector<IterationLog> history;
    std::vector<std::string> warnings;
    objective::Discriminator discriminator;

    /// Base plus deformation.
    geometry::Mesh instance() const;
    /// The instance articulated and placed for view i.
    geometry::Mesh posed(std::size_t view) const;
};

/// Runs the three-stage schedule. Views with empty masks are skipped with a
/// warning; a non-finite loss term aborts with FitError naming it.
FitResult fit_instance(const std::vector<Target>& targets, const bank::SemanticBank& bank, const FitConfig& config);

/// Hard-rendered mask of the fitted instance in view i.
std::vector<double> render_mask(const FitResult& r, std::size_t view, const render::Camera& cam);

/// poses.json, base.obj, deformed_<i>.obj, losses.csv, report.json.
void save_fit_result(const FitResult& r, const FitConfig& config, const std::filesystem::path& dir);

}  // namespace quadbank::fit
