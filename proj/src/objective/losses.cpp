#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "quadbank/objective.hpp"

namespace quadbank::objective {
namespace {

ad::Tensor negated(const ad::Tensor& t) {
    ad::Tensor out = t;
    for (double& v : out.data) v = -v;
    return out;
}

// (P x C) residual pred - target scaled per pixel by pred_mask * target_mask.
ad::Var masked_residual(const ad::Var& pred, const ad::Tensor& target, const ad::Var& pred_mask,
                        const ad::Tensor& target_mask, const char* what) {
    const std::size_t np = pred_mask.size();
    if (target_mask.size() != np) throw ObjectiveError(std::string(what) + ": mask sizes disagree");
    if (np == 0 || pred.size() != target.size() || pred.size() % np != 0) {
        throw ObjectiveError(std::string(what) + ": buffer sizes disagree");
    }
    const std::size_t ch = pred.size() / np;
    const ad::Var both = ad::reshape(ad::mul_const(pred_mask, target_mask), {np, 1});
    const ad::Var diff = ad::reshape(ad::add_const(pred, negated(target)), {np, ch});
    return ad::mul_rows(diff, both);
}

}  // namespace

ad::Var mask_loss(const ad::Var& pred, const ad::Tensor& target, std::span<const double> dt, double lambda_dt,
                  double huber_delta) {
    const std::size_t np = pred.size();
    if (np == 0 || target.size() != np || dt.size() != np) throw ObjectiveError("mask loss: buffer sizes disagree");
    if (!(lambda_dt >= 0)) throw ObjectiveError("mask loss: lambda_dt must be non-negative");
    const ad::Var fit = ad::mean(ad::square(ad::add_const(pred, negated(target))));
    if (lambda_dt == 0) return fit;
    const ad::Tensor dist({np}, std::vector<double>(dt.begin(), dt.end()));
    const ad::Var far = ad::mean(ad::smooth_abs(ad::mul_const(pred, dist), huber_delta));
    return ad::add(fit, ad::mul_scalar(far, lambda_dt));
}

ad::Var image_loss(const ad::Var& pred, const ad::Tensor& target, const ad::Var& pred_mask,
                   const ad::Tensor& target_mask, double huber_delta) {
    const ad::Var r = masked_residual(pred, target, pred_mask, target_mask, "image loss");
    return ad::mul_scalar(ad::sum(ad::smooth_abs(r, huber_delta)), 1.0 / static_cast<double>(pred_mask.size()));
}

ad::Var feature_loss(const ad::Var& pred, const ad::Tensor& target, const ad::Var& pred_mask,
                     const ad::Tensor& target_mask) {
    const ad::Var r = masked_residual(pred, target, pred_mask, target_mask, "feature loss");
    return ad::mul_scalar(ad::sum(ad::square(r)), 1.0 / static_cast<double>(pred_mask.size()));
}

ad::Var hyp_loss(const ad::Var& score, const ad::Var& rec) {
    if (score.size() != 1 || rec.size() != 1) throw ObjectiveError("hypothesis loss: expected scalars");
    return ad::square(ad::sub(score, ad::detach(rec)));
}

std::vector<double> hypothesis_probs(std::span<const double> scores, double tau) {
    if (!(tau > 0)) throw ObjectiveError("hypothesis temperature must be positive");
    if (scores.empty()) throw ObjectiveError("no hypothesis scores");
    const double lo = *std::min_element(scores.begin(), scores.end());
    std::vector<double> p(scores.size());
    double total = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) total += p[k] = std::exp(-(scores[k] - lo) / tau);
    for (double& v : p) v /= total;
    return p;
}

ad::Var def_regularizer(const ad::Var& offsets) {
    const std::size_t n = offsets.size() / 3;
    if (n == 0 || offsets.size() != 3 * n) throw ObjectiveError("deformation regularizer: expected (N x 3) offsets");
    return ad::mul_scalar(ad::sum(ad::square(offsets)), 1.0 / static_cast<double>(n));
}

void LossWeights::validate() const {
    for (double v : {mask, image, feature, feature_late, deform, articulation, hyp, hyp_late, adversarial, dt, r1,
                     huber_delta}) {
        if (!(v >= 0) || !std::isfinite(v)) throw ObjectiveError("loss weights must be finite and non-negative");
    }
}

LossWeights LossWeights::late() const {
    LossWeights w = *this;
    w.feature = feature_late;
    w.hyp = hyp_late;
    return w;
}

nlohmann::json to_json(const LossWeights& w) {
    return {{"mask", w.mask},
            {"image", w.image},
            {"feature", w.feature},
            {"feature_late", w.feature_late},
            {"deform", w.deform},
            {"articulation", w.articulation},
            {"hyp", w.hyp},
            {"hyp_late", w.hyp_late},
            {"adversarial", w.adversarial},
            {"dt", w.dt},
            {"r1", w.r1},
            {"huber_delta", w.huber_delta}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
    LossWeights w;
    if (!j.is_object()) throw ObjectiveError("loss weights must be a JSON object");
    auto get = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number()) throw ObjectiveError(std::string("loss weight '") + key + "' is not a number");
        field = j.at(key).get<double>();
    };
    get("mask", w.mask);
    get("image", w.image);
    get("feature", w.feature);
    get("feature_late", w.feature_late);
    get("deform", w.deform);
    get("articulation", w.articulation);
    get("hyp", w.hyp);
    get("hyp_late", w.hyp_late);
    get("adversarial", w.adversarial);
    get("dt", w.dt);
    get("r1", w.r1);
    get("huber_delta", w.huber_delta);
    w.validate();
    return w;
}

namespace {

void add_term(ad::Var& acc, const ad::Var& part, double weight) {
    if (!part.valid()) return;
    const ad::Var term = ad::mul_scalar(part, weight);
    acc = acc.valid() ? ad::add(acc, term) : term;
}

}  // namespace

ad::Var reconstruction_loss(const LossParts& parts, const LossWeights& w) {
    ad::Var acc;
    add_term(acc, parts.mask, w.mask);
    add_term(acc, parts.image, w.image);
    add_term(acc, parts.feature, w.feature);
    if (!acc.valid()) throw ObjectiveError("reconstruction loss: no active terms");
    return acc;
}

ad::Var total_loss(const LossParts& parts, const LossWeights& w) {
    ad::Var acc;
    add_term(acc, parts.mask, w.mask);
    add_term(acc, parts.image, w.image);
    add_term(acc, parts.feature, w.feature);
    add_term(acc, parts.hyp, w.hyp);
    add_term(acc, parts.adversarial, w.adversarial);
    add_term(acc, parts.articulation, w.articulation);
    add_term(acc, parts.deform, w.deform);
    if (!acc.valid()) throw ObjectiveError("total loss: no active terms");
    return acc;
}

}  // namespace quadbank::objective
