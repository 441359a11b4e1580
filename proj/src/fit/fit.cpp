#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <tuple>

#include "quadbank/fit.hpp"

namespace quadbank::fit {
namespace {

std::vector<std::vector<std::size_t>> vertex_neighbours(const geometry::Mesh& m) {
    std::vector<std::vector<std::size_t>> nb(m.num_vertices());
    for (const auto& f : m.faces)
        for (int a = 0; a < 3; ++a) {
            const std::size_t i = f[a], j = f[(a + 1) % 3];
            nb[i].push_back(j);
            nb[j].push_back(i);
        }
    for (auto& v : nb) {
        std::ranges::sort(v);
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return nb;
}

// Mirror projection followed by `iterations` rounds of neighbour averaging,
// applied to each stacked (N x 3) field. Keeps per-vertex updates smooth.
void smooth_fields(std::span<double> fields, const std::vector<std::vector<std::size_t>>& nb,
                   const geometry::MirrorMap& mirror, int iterations) {
    geometry::symmetrize_in_place(fields, mirror);
    const std::size_t n = nb.size();
    std::vector<double> tmp(3 * n);
    for (std::size_t off = 0; off + 3 * n <= fields.size(); off += 3 * n) {
        double* g = fields.data() + off;
        for (int it = 0; it < iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c) {
                    double acc = 0;
                    for (std::size_t j : nb[i]) acc += g[3 * j + c];
                    tmp[3 * i + c] = nb[i].empty() ? g[3 * i + c] : 0.5 * g[3 * i + c] + 0.5 * acc / nb[i].size();
                }
            std::copy(tmp.begin(), tmp.end(), g);
        }
    }
}

// log_score of a hypothesis that has never been evaluated.
constexpr double kUnscored = -1e3;
constexpr double kMaxTranslation[3] = {0.4, 0.4, 1.0};

using ad::Tensor;
using ad::Var;

struct PreparedTarget {
    Tensor mask, image, features;
    std::vector<double> dt;
    std::vector<double> mask32;
    bool skipped = false;
};

struct ViewParams {
    Tensor logits{{kNumHypotheses}};
    Tensor elevation{{1}};
    Tensor roll{{1}};
    Tensor translation{{3}};
    Tensor log_scores{{kNumHypotheses}, kUnscored};
    Tensor angles;
    ad::AdamState viewpoint, trans, scores, articulation;
};

struct SharedVars {
    Var keys, offsets, features, albedo_raw, light_a, light_b, light_dir, deformation, angles;
    Var weights, base, instance, albedo, ambient, diffuse, direction, sym_deformation;
};

struct ViewVars {
    Var logits, elevation, roll, translation, log_scores, angles;
};

struct ViewTerms {
    objective::LossParts parts;
    Var rec, total;
    std::vector<double> fake32;
};

Tensor tensor_of(const std::vector<double>& v) { return Tensor({v.size()}, v); }

double norm(const Tensor& t) {
    double s = 0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

void check_finite(const char* name, const Var& v) {
    if (!v.valid()) return;
    for (double x : v.value().data) {
        if (!std::isfinite(x)) throw FitError(std::string("non-finite ") + name + " loss");
    }
}

void check_parts(const objective::LossParts& p) {
    check_finite("mask", p.mask);
    check_finite("image", p.image);
    check_finite("feature", p.feature);
    check_finite("deformation", p.deform);
    check_finite("articulation", p.articulation);
    check_finite("hypothesis", p.hyp);
    check_finite("adversarial", p.adversarial);
}

double value_or_zero(const Var& v) { return v.valid() ? v.item() : 0.0; }

class Fitter {
public:
    Fitter(const std::vector<Target>& targets, const bank::SemanticBank& bank, const FitConfig& config)
        : cfg_(config), bank_(bank), rng_(config.seed) {
        cfg_.validate();
        if (targets.empty()) throw FitError("fit: no targets");
        const std::size_t np = cfg_.camera.pixels(), n = bank_.num_vertices();
        feature_dim_ = targets.front().features.size() / np;
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const Target& t = targets[i];
            if (t.mask.size() != np || t.image.size() != 3 * np || t.features.size() != feature_dim_ * np) {
                throw FitError("fit: target " + std::to_string(i) + " does not match the camera size");
            }
            if (t.embedding.values.size() != bank_.key_dim()) {
                throw FitError("fit: target " + std::to_string(i) + " embedding does not match the bank key size");
            }
        }

        if (cfg_.use_discriminator && (cfg_.camera.width % objective::kDiscResolution != 0 ||
                                       cfg_.camera.width != cfg_.camera.height)) {
            warnings_.push_back("discriminator disabled: image must be square with a side divisible by 32");
            cfg_.use_discriminator = false;
        }
        factor_ = cfg_.camera.width / objective::kDiscResolution;

        phi_.values.assign(bank_.key_dim(), 0.0);
        std::size_t active = 0;
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const Target& t = targets[i];
            PreparedTarget p;
            const double covered = std::accumulate(t.mask.begin(), t.mask.end(), 0.0);
            if (!(covered > 0)) {
                warnings_.push_back("view " + std::to_string(i) + " skipped: empty target mask");
                p.skipped = true;
            } else {
                p.mask = tensor_of(t.mask);
                p.image = Tensor({np, 3}, t.image);
                if (feature_dim_) p.features = Tensor({np, feature_dim_}, t.features);
                p.dt = objective::distance_transform(t.mask, cfg_.camera.width, cfg_.camera.height).distance;
                if (cfg_.use_discriminator) {
                    ad::Tape tape;
                    p.mask32 = objective::downsample(tape.constant(p.mask), cfg_.camera.width, cfg_.camera.height, factor_)
                                   .value()
                                   .data;
                    real32_.push_back(p.mask32);
                }
                for (std::size_t k = 0; k < phi_.values.size(); ++k) phi_.values[k] += t.embedding.values[k];
                ++active;
            }
            prepared_.push_back(std::move(p));
        }
        if (active == 0) throw FitError("fit: every target mask is empty");
        for (double& v : phi_.values) v /= static_cast<double>(active);

        views_.resize(targets.size());
        // Scores chase a shrinking target; a short second-moment memory keeps
        // their steps from being damped by early large gradients.
        for (ViewParams& vp : views_) vp.scores.options.beta2 = 0.9;
        keys_ = bank_.keys();
        offsets_ = bank_.offsets();
        neighbours_ = vertex_neighbours(bank_.templ());
        if (feature_dim_) {
            if (bank_.features().dim == feature_dim_ && bank_.features().num_vertices() == n) {
                features_ = bank_.features().tensor();
            } else {
                if (bank_.features().dim != 0) warnings_.push_back("bank feature field ignored: dimension mismatch");
                features_ = Tensor({n, feature_dim_});
            }
        }
        albedo_raw_ = Tensor({n, 3});
        light_a_ = Tensor({1});
        light_b_ = Tensor({1});
        light_dir_ = Tensor({1, 3}, std::vector<double>{0, 0, 1});
        deformation_ = Tensor({n, 3});

        disc_.model = objective::Discriminator::random(cfg_.seed ^ 0xd15c, bank_.value_dim());
        set_learning_rates(1.0);
    }

    FitResult run() {
        for (std::size_t it = 0; it < cfg_.iterations; ++it) step(it);
        return finish();
    }

private:
    int stage_ = 1;

    void instantiate_skeleton() {
        const geometry::Mesh base = current_base();
        skeleton_ = skeleton::instantiate_quadruped(base);
        skin_ = skeleton::skinning_weights(base, skeleton_);
        limits_ = skeleton::quadruped_limits(skeleton_);
        for (auto& v : views_) v.angles = Tensor({skeleton_.size(), 3});
        shared_angles_ = Tensor({skeleton_.size(), 3});
    }

    geometry::Mesh current_base() const {
        ad::Tape tape;
        const Var w = bank::query_weights(tape.constant(keys_), phi_, bank_.top_m());
        geometry::Mesh m = bank_.templ();
        m.vertices = geometry::Mesh::vertices_from(bank::base_vertices(w, tape.constant(offsets_), bank_.templ()).value());
        return m;
    }

    bool articulated() const { return stage_ >= 2 && cfg_.use_articulation && !skeleton_.bones.empty(); }
    bool deforming() const { return stage_ >= 3 && cfg_.use_deformation; }

    SharedVars build_shared(ad::Tape& tape, bool train) const {
        SharedVars s;
        const bool tb = train && cfg_.train_bank;
        s.keys = tb ? tape.param(keys_) : tape.constant(keys_);
        s.offsets = tb ? tape.param(offsets_) : tape.constant(offsets_);
        s.weights = bank::query_weights(s.keys, phi_, bank_.top_m());
        s.base = bank::base_vertices(s.weights, s.offsets, bank_.templ());
        if (feature_dim_) s.features = train && cfg_.train_features ? tape.param(features_) : tape.constant(features_);
        auto p = [&](const Tensor& t) { return train ? tape.param(t) : tape.constant(t); };
        s.albedo_raw = p(albedo_raw_);
        s.light_a = p(light_a_);
        s.light_b = p(light_b_);
        s.light_dir = p(light_dir_);
        s.albedo = ad::sigmoid(s.albedo_raw);
        s.ambient = ad::sigmoid(s.light_a);
        s.diffuse = ad::add_scalar(ad::mul_scalar(ad::sigmoid(s.light_b), 0.5), 0.5);
        s.direction = ad::reshape(ad::normalize_rows(s.light_dir), {3});
        s.instance = s.base;
        if (articulated() && cfg_.share_articulation) s.angles = p(shared_angles_);
        if (deforming()) {
            s.deformation = p(deformation_);
            s.sym_deformation = geometry::symmetrize(s.deformation, bank_.mirror());
            s.instance = ad::add(s.base, s.sym_deformation);
        }
        return s;
    }

    // Forward pass of one view under hypothesis k. `adv_alpha` < 0 skips the
    // random-view render.
    ViewTerms forward_view(ad::Tape& tape, const SharedVars& s, std::size_t v, std::size_t k, double sigma,
                           const objective::LossWeights& w, bool train, bool explore, double adv_alpha,
                           const objective::DiscriminatorVars* dvars, std::span<const double> phi_tilde, ViewVars& vv) {
        ViewParams& vp = views_[v];
        const PreparedTarget& tgt = prepared_[v];
        auto p = [&](const Tensor& t) { return train ? tape.param(t) : tape.constant(t); };
        // An explored hypothesis trains only its own azimuth and score.
        auto q = [&](const Tensor& t) { return train && !explore ? tape.param(t) : tape.constant(t); };
        vv.logits = p(vp.logits);
        vv.elevation = q(vp.elevation);
        vv.roll = q(vp.roll);
        vv.translation = q(vp.translation);
        vv.log_scores = p(vp.log_scores);
        const Var rot = hypothesis_rotation(vv.logits, vv.elevation, vv.roll, k);
        const Var trans = ad::mul_const(ad::tanh(vv.translation),
                                        Tensor({3}, std::vector<double>(kMaxTranslation, kMaxTranslation + 3)));

        ViewTerms out;
        Var canon = s.instance;
        if (articulated()) {
            vv.angles = cfg_.share_articulation ? s.angles : q(vp.angles);
            const Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
            canon = skeleton::lbs(s.instance, skeleton_, skin_, tape.constant(eye), tape.constant(Tensor({3})),
                                  skeleton::euler_rotations(vv.angles));
            out.parts.articulation = skeleton::art_regularizer(vv.angles);
        }
        if (deforming()) out.parts.deform = objective::def_regularizer(s.sym_deformation);

        const auto& faces = bank_.templ().faces;
        const auto& cam = cfg_.camera;
        const Var posed = skeleton::rigid_transform(canon, rot, trans);
        const Var proj = render::project(cam, posed);
        const Var soft = render::soft_silhouette(proj, faces, cam, sigma);
        const auto plain = render::project(cam, geometry::Mesh::vertices_from(posed.value()));
        const render::Fragments frags = render::rasterize_fragments(plain, faces, cam.width, cam.height, cfg_.jobs);

        out.parts.mask = objective::mask_loss(soft, tgt.mask, tgt.dt, w.dt, w.huber_delta);
        // Appearance terms are restricted by the hard coverage, so they
        // never move the silhouette.
        Tensor covered({frags.face.size()});
        for (std::size_t px = 0; px < covered.size(); ++px) covered[px] = frags.covered(px) ? 1.0 : 0.0;
        const Var hard = tape.constant(std::move(covered));
        const Var normals = ad::normalize_rows(render::interpolate(frags, proj, geometry::vertex_normals(posed, faces), faces));
        const Var albedo = render::interpolate(frags, proj, s.albedo, faces);
        const Var image = render::shade_lambertian(normals, albedo, s.ambient, s.diffuse, s.direction);
        out.parts.image = objective::image_loss(image, tgt.image, hard, tgt.mask, w.huber_delta);
        if (feature_dim_) {
            const Var feats = render::interpolate(frags, proj, s.features, faces);
            out.parts.feature = objective::feature_loss(feats, tgt.features, hard, tgt.mask);
        }
        out.rec = objective::reconstruction_loss(out.parts, w);

        if (vp.log_scores[k] <= kUnscored) {
            vp.log_scores[k] = std::log(std::max(out.rec.item(), 1e-12));
        } else {
            const Var score = ad::exp(ad::slice(vv.log_scores, k, {1}));
            out.parts.hyp = objective::hyp_loss(score, out.rec);
        }

        if (adv_alpha >= 0 && dvars) {
            const Eigen::Matrix3d ry(Eigen::AngleAxisd(adv_alpha, Eigen::Vector3d::UnitY()));
            Tensor ryt({3, 3});
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) ryt[static_cast<std::size_t>(3 * i + j)] = ry(i, j);
            const Var rv = skeleton::rigid_transform(canon, ad::matmul(rot, tape.constant(ryt)), trans);
            const Var soft_rv = render::soft_silhouette(render::project(cam, rv), faces, cam, sigma);
            const Var m32 = objective::downsample(soft_rv, cam.width, cam.height, factor_);
            out.fake32 = m32.value().data;
            const Var logit = objective::discriminator_logit(*dvars, m32, phi_tilde);
            out.parts.adversarial = objective::generator_loss(std::span<const Var>(&logit, 1));
        }
        check_parts(out.parts);
        out.total = objective::total_loss(out.parts, w);
        return out;
    }

    void set_learning_rates(double f) {
        const LearningRates& r = cfg_.lr;
        for (auto& v : views_) {
            v.viewpoint.options.lr = f * r.viewpoint;
            v.trans.options.lr = f * r.translation;
            v.scores.options.lr = r.scores;
            v.articulation.options.lr = f * r.articulation;
        }
        shared_art_opt_.options.lr = f * r.articulation;
        bank_opt_.options.lr = f * r.bank;
        offset_opt_.options.lr = f * r.offsets;
        feature_opt_.options.lr = f * r.features;
        deform_opt_.options.lr = f * r.deformation;
        appearance_opt_.options.lr = f * r.appearance;
        disc_.adam.options.lr = f * r.discriminator;
    }

    objective::LossWeights weights_at(std::size_t it) const {
        return late_weights_active(it, cfg_) ? cfg_.weights.late() : cfg_.weights;
    }

    void step(std::size_t it) {
        const int stage = stage_at(it, cfg_);
        if (stage >= 2 && skeleton_.bones.empty() && cfg_.use_articulation) {
            stage_ = stage;
            instantiate_skeleton();
        }
        stage_ = stage;
        const double sigma = sigma_at(it, cfg_);
        const objective::LossWeights w = weights_at(it);
        set_learning_rates(lr_factor_at(it, cfg_));
        const bool adv = cfg_.use_discriminator && discriminator_active(it, cfg_) && w.adversarial > 0;

        std::vector<std::size_t> batch;
        for (std::size_t v = 0; v < views_.size(); ++v)
            if (!prepared_[v].skipped) batch.push_back(v);
        std::shuffle(batch.begin(), batch.end(), rng_);
        batch.resize(std::min(batch.size(), cfg_.batch));
        std::sort(batch.begin(), batch.end());

        ad::Tape tape;
        const SharedVars s = build_shared(tape, true);
        const bank::ShapeEmbedding phi_tilde = bank::shape_embedding(bank_, s.weights.value().data);
        objective::DiscriminatorVars dvars;
        if (adv) dvars = objective::bind(tape, disc_.model, false);

        IterationLog log;
        log.iteration = it;
        log.stage = stage;
        log.sigma = sigma;
        std::vector<ViewVars> vvs(batch.size());
        std::vector<bool> explored(batch.size(), false);
        std::optional<SharedVars> frozen;
        std::vector<std::vector<double>> fakes;
        Var total;
        std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const std::size_t v = batch[b];
            const HypothesisSet h = hypotheses(v);
            const std::size_t k = sample_hypothesis(h, it, cfg_, rng_);
            const double alpha = adv ? angle(rng_) : -1.0;
            explored[b] = k != h.best();
            if (explored[b] && !frozen) frozen = build_shared(tape, false);
            ViewTerms t = forward_view(tape, explored[b] ? *frozen : s, v, k, sigma, w, true, explored[b], alpha,
                                       adv ? &dvars : nullptr, phi_tilde.values, vvs[b]);
            total = total.valid() ? ad::add(total, t.total) : t.total;
            log.mask += value_or_zero(t.parts.mask);
            log.image += value_or_zero(t.parts.image);
            log.feature += value_or_zero(t.parts.feature);
            log.deform += value_or_zero(t.parts.deform);
            log.articulation += value_or_zero(t.parts.articulation);
            log.hyp += value_or_zero(t.parts.hyp);
            log.adversarial += value_or_zero(t.parts.adversarial);
            if (!t.fake32.empty()) fakes.push_back(std::move(t.fake32));
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        total = ad::mul_scalar(total, inv);
        check_finite("total", total);
        log.total = total.item();
        for (double* f : {&log.mask, &log.image, &log.feature, &log.deform, &log.articulation, &log.hyp, &log.adversarial})
            *f *= inv;
        tape.backward(total);

        if (cfg_.train_bank) {
            std::vector<Tensor*> kp{&keys_}, op{&offsets_};
            const std::vector<Tensor> kg{tape.grad(s.keys)};
            std::vector<Tensor> og{tape.grad(s.offsets)};
            smooth_fields(og[0].data, neighbours_, bank_.mirror(), cfg_.offset_smoothing);
            ad::adam_step(bank_opt_, kp, kg);
            ad::adam_step(offset_opt_, op, og);
            bank_.set_keys(keys_);
            bank_.set_offsets(offsets_);
            keys_ = bank_.keys();
            offsets_ = bank_.offsets();
        }
        if (feature_dim_ && cfg_.train_features) {
            std::vector<Tensor*> ps{&features_};
            const std::vector<Tensor> gs{tape.grad(s.features)};
            ad::adam_step(feature_opt_, ps, gs);
        }
        {
            std::vector<Tensor*> ps{&albedo_raw_, &light_a_, &light_b_, &light_dir_};
            const std::vector<Tensor> gs{tape.grad(s.albedo_raw), tape.grad(s.light_a), tape.grad(s.light_b),
                                         tape.grad(s.light_dir)};
            ad::adam_step(appearance_opt_, ps, gs);
            const double n = std::sqrt(light_dir_[0] * light_dir_[0] + light_dir_[1] * light_dir_[1] +
                                       light_dir_[2] * light_dir_[2]);
            if (n > 0)
                for (double& d : light_dir_.data) d /= n;
        }
        if (s.angles.valid()) {
            const Tensor g = tape.grad(s.angles);
            log.articulation_grad = norm(g);
            std::vector<Tensor*> ps{&shared_angles_};
            ad::adam_step(shared_art_opt_, ps, std::span<const Tensor>(&g, 1));
            skeleton::clamp_angles_in_place(shared_angles_.data, limits_);
        }
        if (deforming()) {
            const Tensor g = tape.grad(s.deformation);
            log.deformation_grad = norm(g);
            std::vector<Tensor*> ps{&deformation_};
            ad::adam_step(deform_opt_, ps, std::span<const Tensor>(&g, 1));
            geometry::symmetrize_in_place(deformation_.data, bank_.mirror());
        }
        for (std::size_t b = 0; b < batch.size(); ++b) {
            ViewParams& vp = views_[batch[b]];
            const ViewVars& vv = vvs[b];
            {
                std::vector<Tensor*> ps{&vp.logits, &vp.elevation, &vp.roll};
                const std::vector<Tensor> gs{tape.grad(vv.logits), tape.grad(vv.elevation), tape.grad(vv.roll)};
                ad::adam_step(vp.viewpoint, ps, gs);
            }
            if (!explored[b]) {
                const Tensor g = tape.grad(vv.translation);
                std::vector<Tensor*> ps{&vp.translation};
                ad::adam_step(vp.trans, ps, std::span<const Tensor>(&g, 1));
            }
            {
                // Freshly scored entries were set during the forward pass.
                const Tensor g = tape.grad(vv.log_scores);
                std::vector<Tensor*> ps{&vp.log_scores};
                ad::adam_step(vp.scores, ps, std::span<const Tensor>(&g, 1));
            }
            if (vv.angles.valid() && !explored[b] && !cfg_.share_articulation) {
                const Tensor g = tape.grad(vv.angles);
                log.articulation_grad += norm(g);
                std::vector<Tensor*> ps{&vp.angles};
                ad::adam_step(vp.articulation, ps, std::span<const Tensor>(&g, 1));
                skeleton::clamp_angles_in_place(vp.angles.data, limits_);
            }
        }

        if (adv && !fakes.empty()) {
            log.discriminator = update_discriminator(disc_, it, cfg_, real32_, fakes, phi_tilde.values);
        }
        history_.push_back(log);
    }

    HypothesisSet hypotheses(std::size_t v) const {
        const ViewParams& vp = views_[v];
        HypothesisSet h;
        for (std::size_t k = 0; k < kNumHypotheses; ++k) {
            h.azimuth_logit[k] = vp.logits[k];
            h.log_score[k] = vp.log_scores[k];
        }
        h.elevation = vp.elevation[0];
        h.roll = vp.roll[0];
        return h;
    }

    // Reconstruction and mask loss of view v under hypothesis k at the final
    // sharpness. Scores an unscored hypothesis as a side effect.
    std::pair<double, double> evaluate(std::size_t v, std::size_t k) {
        ad::Tape tape;
        const SharedVars s = build_shared(tape, false);
        ViewVars vv;
        const ViewTerms t = forward_view(tape, s, v, k, cfg_.sigma_end, weights_at(cfg_.iterations - 1), false, false, -1.0,
                                         nullptr, {}, vv);
        return {t.rec.item(), t.parts.mask.item()};
    }

    FitResult finish() {
        stage_ = stage_at(cfg_.iterations - 1, cfg_);
        FitResult r(bank_);
        const std::size_t n = bank_.num_vertices();
        {
            ad::Tape tape;
            const SharedVars s = build_shared(tape, false);
            r.bank_weights = s.weights.value().data;
        }
        r.shape = bank::shape_embedding(bank_, r.bank_weights);
        r.base = current_base();
        r.deformation = geometry::VertexField::from_tensor(deformation_);
        if (!deforming()) r.deformation = geometry::VertexField(n, 3);
        r.albedo = geometry::VertexField(n, 3);
        for (std::size_t i = 0; i < albedo_raw_.size(); ++i) r.albedo.data[i] = 1.0 / (1.0 + std::exp(-albedo_raw_[i]));
        if (feature_dim_) r.features = geometry::VertexField::from_tensor(features_);
        r.light.ambient_raw = light_a_[0];
        r.light.diffuse_raw = light_b_[0];
        r.light.direction = geometry::Vec3(light_dir_[0], light_dir_[1], light_dir_[2]);
        r.skeleton = skeleton_;
        r.skin = skin_;
        r.discriminator = disc_.model;

        const double tau = tau_at(cfg_.iterations - 1, cfg_);
        for (std::size_t v = 0; v < views_.size(); ++v) {
            ViewResult vr;
            vr.skipped = prepared_[v].skipped;
            ViewParams& vp = views_[v];
            if (!vr.skipped) {
                for (std::size_t k = 0; k < kNumHypotheses; ++k)
                    if (vp.log_scores[k] <= kUnscored) evaluate(v, k);
            }
            const HypothesisSet h = hypotheses(v);
            vr.hypothesis = h.best();
            vr.scores = h.scores();
            for (std::size_t k = 0; k < kNumHypotheses; ++k) vr.azimuths_deg[k] = h.azimuth_deg(k);
            const auto probs = objective::hypothesis_probs(vr.scores, tau);
            std::copy(probs.begin(), probs.end(), vr.probabilities.begin());
            vr.pose.rotation = Eigen::Quaterniond(h.rotation(vr.hypothesis));
            const geometry::Vec3 raw(vp.translation[0], vp.translation[1], vp.translation[2]);
            vr.pose.translation = boxed_translation(raw);
            vr.pose.joint_angles.assign(skeleton_.size(), geometry::Vec3::Zero());
            if (articulated()) {
                const Tensor& a = cfg_.share_articulation ? shared_angles_ : vp.angles;
                for (std::size_t b = 0; b < skeleton_.size(); ++b)
                    vr.pose.joint_angles[b] = geometry::Vec3(a[3 * b], a[3 * b + 1], a[3 * b + 2]);
            }
            if (!vr.skipped) {
                std::tie(vr.reconstruction, vr.mask_loss) = evaluate(v, vr.hypothesis);
            }
            r.views.push_back(vr);
        }
        r.history = std::move(history_);
        r.warnings = std::move(warnings_);
        return r;
    }

    FitConfig cfg_;
    bank::SemanticBank bank_;
    std::mt19937_64 rng_;
    std::size_t feature_dim_ = 0;
    std::size_t factor_ = 1;
    bank::ImageEmbedding phi_;
    std::vector<PreparedTarget> prepared_;
    std::vector<std::vector<double>> real32_;
    std::vector<ViewParams> views_;
    std::vector<std::vector<std::size_t>> neighbours_;
    Tensor shared_angles_;
    ad::AdamState shared_art_opt_;
    Tensor keys_, offsets_, features_, albedo_raw_, light_a_, light_b_, light_dir_, deformation_;
    ad::AdamState bank_opt_, offset_opt_, feature_opt_, deform_opt_, appearance_opt_;
    skeleton::Skeleton skeleton_;
    skeleton::SkinWeights skin_;
    skeleton::AngleLimits limits_;
    DiscriminatorState disc_;
    std::vector<IterationLog> history_;
    std::vector<std::string> warnings_;
};

}  // namespace

render::Light Light::resolve() const {
    render::Light l;
    l.ambient = 1.0 / (1.0 + std::exp(-ambient_raw));
    l.diffuse = 0.5 + 0.5 / (1.0 + std::exp(-diffuse_raw));
    l.direction = direction.norm() > 0 ? direction.normalized() : geometry::Vec3(0, 0, 1);
    return l;
}

geometry::Vec3 boxed_translation(const geometry::Vec3& raw) {
    return geometry::Vec3(kMaxTranslation[0] * std::tanh(raw.x()), kMaxTranslation[1] * std::tanh(raw.y()),
                          kMaxTranslation[2] * std::tanh(raw.z()));
}

geometry::Mesh FitResult::instance() const {
    geometry::Mesh m = base;
    for (std::size_t i = 0; i < m.num_vertices(); ++i) m.vertices[i] += deformation.vec3(i);
    return m;
}

geometry::Mesh FitResult::posed(std::size_t view) const {
    const skeleton::Pose& pose = views.at(view).pose;
    geometry::Mesh m = instance();
    if (!skeleton.bones.empty()) return skeleton::lbs_pose(m, skeleton, skin, pose);
    const Eigen::Matrix3d r = pose.rotation.toRotationMatrix();
    for (auto& v : m.vertices) v = r * v + pose.translation;
    return m;
}

FitResult fit_instance(const std::vector<Target>& targets, const bank::SemanticBank& bank, const FitConfig& config) {
    Fitter f(targets, bank, config);
    return f.run();
}

std::vector<double> render_mask(const FitResult& r, std::size_t view, const render::Camera& cam) {
    return render::rasterize(r.posed(view), {}, cam, 1).mask;
}

}  // namespace quadbank::fit
