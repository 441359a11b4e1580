#pragma once

// Reconstruction losses, regularizers, the viewpoint-hypothesis terms and the
// conditioned mask discriminator.
//
// Pixel buffers are flat row-major: masks have H*W entries, images H*W x 3,
// feature maps H*W x C. Pixel losses are means over pixels with channels
// summed per pixel.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quadbank/autodiff.hpp"

namespace quadbank::objective {

class ObjectiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DistanceField {
    std::vector<double> distance;  // H*W, Euclidean, in pixels
    bool empty_mask = false;       // no foreground: every entry is the image diagonal
};

/// Exact Euclidean distance to the nearest foreground pixel (value > 0.5),
/// by two passes of the 1D lower envelope of parabolas.
DistanceField distance_transform(std::span<const double> mask, std::size_t width, std::size_t height);

inline constexpr double kDefaultHuberDelta = 1e-6;

/// mean((pred - target)^2) + lambda_dt * mean(|pred * dt|). `huber_delta` = 0
/// gives the hard L1.
ad::Var mask_loss(const ad::Var& pred, const ad::Tensor& target, std::span<const double> dt, double lambda_dt,
                  double huber_delta = kDefaultHuberDelta);

/// L1 of the image residual over the mask intersection pred_mask * target_mask.
ad::Var image_loss(const ad::Var& pred, const ad::Tensor& target, const ad::Var& pred_mask,
                   const ad::Tensor& target_mask, double huber_delta = kDefaultHuberDelta);

/// Squared residual of feature maps over the mask intersection.
ad::Var feature_loss(const ad::Var& pred, const ad::Tensor& target, const ad::Var& pred_mask,
                     const ad::Tensor& target_mask);

/// (score - detach(rec))^2.
ad::Var hyp_loss(const ad::Var& score, const ad::Var& rec);

/// p_k proportional to exp(-score_k / tau).
std::vector<double> hypothesis_probs(std::span<const double> scores, double tau);

/// Mean squared norm of (N x 3) offsets.
ad::Var def_regularizer(const ad::Var& offsets);

// ---------------------------------------------------------------------------
// Discriminator

inline constexpr std::size_t kDiscResolution = 32;

/// Strided conv stack on a 32x32 mask concatenated with a spatially broadcast
/// shape embedding (1 + embed_dim channels), ending in one logit.
///   conv 4x4/2 -> 16, conv 4x4/2 -> 32, conv 4x4/2 -> 64 (leaky 0.2), linear.
/// The embedding half of the first conv is evaluated once per tap instead of
/// over a materialized broadcast image; the result is identical.
struct Discriminator {
    std::size_t embed_dim = 128;
    std::vector<ad::Tensor> params;

    static Discriminator zeros(std::size_t embed_dim = 128);
    /// He-normal weights, zero biases.
    static Discriminator random(std::uint64_t seed, std::size_t embed_dim = 128);

    std::size_t input_channels() const { return 1 + embed_dim; }
    void validate() const;
};

/// Discriminator parameters placed on a tape.
struct DiscriminatorVars {
    const Discriminator* model = nullptr;
    std::vector<ad::Var> params;
};

/// `trainable` = false puts the parameters on the tape as constants.
DiscriminatorVars bind(ad::Tape& tape, const Discriminator& d, bool trainable);

/// Logit for one 32x32 mask (1024 entries). The embedding is a constant.
ad::Var discriminator_logit(const DiscriminatorVars& d, const ad::Var& mask, std::span<const double> embedding);
double discriminator_logit(const Discriminator& d, std::span<const double> mask, std::span<const double> embedding);

/// Box-filter downsampling of an H*W mask by an integer factor.
ad::Var downsample(const ad::Var& mask, std::size_t width, std::size_t height, std::size_t factor);

inline constexpr double kLogClamp = 1e-7;

/// E[log D(real)] + E[log(1 - D(fake))] with D = sigmoid(logit) clamped below
/// at 1e-7 before the log. Non-positive.
ad::Var adversarial_value(std::span<const ad::Var> real_logits, std::span<const ad::Var> fake_logits);
/// Non-saturating generator loss -E[log D(fake)].
ad::Var generator_loss(std::span<const ad::Var> fake_logits);

/// 1/2 |d logit / d mask|^2 averaged over the masks.
double r1_penalty(const Discriminator& d, std::span<const std::vector<double>> masks, std::span<const double> embedding);
/// Parameter gradient of r1_penalty. For each mask with input gradient g,
/// grad_theta (g . grad_x D) is taken by central differences of
/// grad_theta D along x +- h g.
std::vector<ad::Tensor> r1_gradient(const Discriminator& d, std::span<const std::vector<double>> masks,
                                    std::span<const double> embedding, double h = 1e-4);

// ---------------------------------------------------------------------------

struct LossWeights {
    double mask = 10;
    double image = 1;
    double feature = 10;
    double feature_late = 1;
    double deform = 10;
    double articulation = 0.2;
    double hyp = 50;
    double hyp_late = 500;
    double adversarial = 0.1;
    double dt = 0.1;
    double r1 = 10;
    double huber_delta = kDefaultHuberDelta;

    void validate() const;
    /// Copy with the late-stage feature and hypothesis weights swapped in.
    LossWeights late() const;
};

nlohmann::json to_json(const LossWeights& w);
/// Missing keys keep their defaults.
LossWeights loss_weights_from_json(const nlohmann::json& j);

/// Unset (invalid) parts are inactive.
struct LossParts {
    ad::Var mask, image, feature, deform, articulation, hyp, adversarial;
};

/// rec + hyp*L_hyp + adv*L_adv + art*R_art + def*R_def with
/// rec = mask*L_m + image*L_im + feature*L_feat.
ad::Var total_loss(const LossParts& parts, const LossWeights& w);
/// The reconstruction part alone.
ad::Var reconstruction_loss(const LossParts& parts, const LossWeights& w);

}  // namespace quadbank::objective
