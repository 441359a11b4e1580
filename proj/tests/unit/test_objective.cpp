#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "quadbank/objective.hpp"

using namespace quadbank;
using objective::Discriminator;

namespace {

std::vector<double> random_mask(std::mt19937_64& rng, std::size_t w, std::size_t h, double density) {
    std::bernoulli_distribution b(density);
    std::vector<double> m(w * h);
    for (double& v : m) v = b(rng) ? 1.0 : 0.0;
    return m;
}

ad::Tensor tensor(std::vector<double> v) {
    const std::size_t n = v.size();
    return ad::Tensor({n}, std::move(v));
}

// Straight conv stack on the materialized (1 + E) x 32 x 32 input.
double naive_logit(const Discriminator& d, const std::vector<double>& mask, const std::vector<double>& phi) {
    const std::size_t e = d.embed_dim;
    auto conv = [](const std::vector<double>& x, std::size_t cin, std::size_t h, const std::vector<double>& w,
                   const std::vector<double>& b, std::size_t cout) {
        const std::size_t ho = h / 2;
        std::vector<double> out(cout * ho * ho);
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t xo = 0; xo < ho; ++xo) {
                    double s = b[o];
                    for (std::size_t c = 0; c < cin; ++c)
                        for (int ky = 0; ky < 4; ++ky)
                            for (int kx = 0; kx < 4; ++kx) {
                                const long iy = 2 * static_cast<long>(y) + ky - 1;
                                const long ix = 2 * static_cast<long>(xo) + kx - 1;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(h)) continue;
                                s += w[((o * cin + c) * 4 + ky) * 4 + kx] * x[(c * h + iy) * h + ix];
                            }
                    out[(o * ho + y) * ho + xo] = s > 0 ? s : 0.2 * s;
                }
        return out;
    };
    std::vector<double> x((1 + e) * 1024);
    std::copy(mask.begin(), mask.end(), x.begin());
    for (std::size_t c = 0; c < e; ++c) std::fill(x.begin() + (1 + c) * 1024, x.begin() + (2 + c) * 1024, phi[c]);
    std::vector<double> w1((16 * (1 + e)) * 16);
    for (std::size_t o = 0; o < 16; ++o) {
        for (std::size_t k = 0; k < 16; ++k) w1[(o * (1 + e)) * 16 + k] = d.params[0][o * 16 + k];
        for (std::size_t c = 0; c < e; ++c)
            for (std::size_t k = 0; k < 16; ++k) w1[(o * (1 + e) + 1 + c) * 16 + k] = d.params[1][(o * e + c) * 16 + k];
    }
    auto h1 = conv(x, 1 + e, 32, w1, d.params[2].data, 16);
    auto h2 = conv(h1, 16, 16, d.params[3].data, d.params[4].data, 32);
    auto h3 = conv(h2, 32, 8, d.params[5].data, d.params[6].data, 64);
    double s = d.params[8][0];
    for (std::size_t i = 0; i < h3.size(); ++i) s += h3[i] * d.params[7][i];
    return s;
}

std::vector<double> smooth_mask(double cx, double cy, double r) {
    std::vector<double> m(1024);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) m[y * 32 + x] = 1 / (1 + std::exp((std::hypot(x - cx, y - cy) - r)));
    return m;
}

}  // namespace

TEST_CASE("distance transform examples") {
    const auto all = objective::distance_transform(std::vector<double>(12, 1.0), 4, 3);
    CHECK_FALSE(all.empty_mask);
    CHECK(std::all_of(all.distance.begin(), all.distance.end(), [](double d) { return d == 0; }));

    const auto one = objective::distance_transform(std::vector<double>{1, 0, 0, 0}, 2, 2);
    CHECK(one.distance == std::vector<double>{0, 1, 1, std::sqrt(2.0)});

    const auto none = objective::distance_transform(std::vector<double>(6, 0.0), 3, 2);
    CHECK(none.empty_mask);
    CHECK(none.distance[0] == doctest::Approx(std::sqrt(13.0)));

    CHECK_THROWS_AS(objective::distance_transform(std::vector<double>(5, 0.0), 3, 2), objective::ObjectiveError);
}

TEST_CASE("distance transform equals the exhaustive oracle on random masks") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dens(0.002, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = random_mask(rng, 32, 32, dens(rng));
        if (std::none_of(m.begin(), m.end(), [](double v) { return v > 0; })) m[rng() % m.size()] = 1;
        const auto dt = objective::distance_transform(m, 32, 32);
        const auto ref = oracle::edt_bruteforce(m, 32, 32, 1.0);
        for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(dt.distance[i] == std::sqrt(ref[i]));
    }
    // Non-square images.
    auto m = random_mask(rng, 23, 9, 0.05);
    m[4] = 1;
    const auto dt = objective::distance_transform(m, 23, 9);
    const auto ref = oracle::edt_bruteforce(m, 23, 9, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(dt.distance[i] == std::sqrt(ref[i]));
}

TEST_CASE("mask loss values") {
    ad::Tape t;
    const ad::Tensor target = tensor({1, 0, 0, 0});
    const auto dt = objective::distance_transform(target.data, 2, 2).distance;

    CHECK(objective::mask_loss(t.constant(target), target, dt, 0.1).item() == 0.0);

    const ad::Var full = t.constant(tensor({1, 1, 1, 1}));
    const double expected = 0.75 + (0 + 1 + 1 + std::sqrt(2.0)) / 4;
    // Independent scalar evaluation.
    double scalar = 0;
    for (int i = 0; i < 4; ++i) scalar += (1 - target[i]) * (1 - target[i]) / 4 + std::abs(1 * dt[i]) / 4;
    CHECK(scalar == doctest::Approx(expected).epsilon(1e-15));
    CHECK(objective::mask_loss(full, target, dt, 1.0, 0.0).item() == doctest::Approx(expected).epsilon(1e-15));
    CHECK(objective::mask_loss(full, target, dt, 1.0).item() == doctest::Approx(expected).epsilon(1e-6));

    // Moving the prediction toward the target decreases the loss.
    double prev = std::numeric_limits<double>::infinity();
    for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        ad::Tensor p({4});
        for (int i = 0; i < 4; ++i) p[i] = (1 - a) * 1.0 + a * target[i];
        const double v = objective::mask_loss(t.constant(p), target, dt, 1.0).item();
        CHECK(v < prev);
        prev = v;
    }
    CHECK_THROWS_AS(objective::mask_loss(full, tensor({1, 0, 0}), dt, 1.0), objective::ObjectiveError);
}

TEST_CASE("image and feature losses on the mask intersection") {
    ad::Tape t;
    const std::size_t np = 6;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t ch : {3u, 16u}) {
        ad::Tensor img({np, ch});
        for (double& v : img.data) v = u(rng);
        ad::Tensor shifted = img;
        for (double& v : shifted.data) v += 0.1;
        const ad::Tensor ones({np}, 1.0);
        const ad::Var pm = t.constant(ones);
        auto loss = [&](const ad::Tensor& pred, const ad::Var& pmask, const ad::Tensor& tmask) {
            if (ch == 3) return objective::image_loss(t.constant(pred), img, pmask, tmask, 0.0).item();
            return objective::feature_loss(t.constant(pred), img, pmask, tmask).item();
        };
        CHECK(loss(img, pm, ones) == 0.0);
        const ad::Tensor left = tensor({1, 1, 1, 0, 0, 0}), right = tensor({0, 0, 0, 1, 1, 1});
        CHECK(loss(shifted, t.constant(left), right) == 0.0);
        const double expected = ch == 3 ? 0.1 * 3 : 0.01 * 16;
        CHECK(loss(shifted, pm, ones) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS(objective::image_loss(t.constant(ad::Tensor({6, 3})), ad::Tensor({5, 3}), t.constant(ad::Tensor({6})),
                                          ad::Tensor({6})),
                    objective::ObjectiveError);
}

TEST_CASE("pixel loss gradients") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const std::size_t w = 5, h = 4, np = w * h;
    const auto target_mask = random_mask(rng, w, h, 0.5);
    const auto dt = objective::distance_transform(target_mask, w, h).distance;
    ad::Tensor tm({np}, target_mask), pm({np}), img({np, 3}), pimg({np, 3}), feat({np, 4}), pfeat({np, 4});
    for (double& v : pm.data) v = u(rng);
    for (double& v : img.data) v = u(rng);
    for (double& v : pimg.data) v = u(rng);
    for (double& v : feat.data) v = u(rng);
    for (double& v : pfeat.data) v = u(rng);
    ad::ScalarFn f = [&](ad::Tape&, const std::vector<ad::Var>& p) {
        ad::Var l = objective::mask_loss(p[0], tm, dt, 0.1);
        l = ad::add(l, objective::image_loss(p[1], img, p[0], tm));
        return ad::add(l, objective::feature_loss(p[2], feat, p[0], tm));
    };
    const auto rep = ad::finite_diff_check(f, {pm, pimg, pfeat});
    CHECK(rep.checked > 100);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("hypothesis loss detaches the reconstruction term") {
    ad::Tape t;
    const ad::Var mesh = t.param(tensor({0.5, -1.0, 0.25}));
    const ad::Var rec = ad::mul_scalar(ad::sum(ad::square(mesh)), 2.0 / 1.3125);  // = 2
    const ad::Var sigma = t.param(ad::Tensor::scalar(0.0));
    const ad::Var l = objective::hyp_loss(sigma, rec);
    CHECK(l.item() == doctest::Approx(4).epsilon(1e-14));
    t.backward(l);
    CHECK(t.grad(sigma)[0] == doctest::Approx(-4).epsilon(1e-14));
    for (double g : t.grad(mesh).data) CHECK(g == 0.0);

    const ad::Var same = t.param(ad::Tensor::scalar(rec.item()));
    CHECK(objective::hyp_loss(same, rec).item() == 0.0);

    ad::ScalarFn f = [](ad::Tape& tape, const std::vector<ad::Var>& p) {
        return objective::hyp_loss(p[0], tape.constant(1.7));
    };
    CHECK(ad::finite_diff_check(f, {ad::Tensor::scalar(0.3)}).max_rel_error < 1e-9);
}

TEST_CASE("hypothesis probabilities") {
    const auto eq = objective::hypothesis_probs(std::vector<double>{0.3, 0.3, 0.3, 0.3}, 0.5);
    for (double p : eq) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
    const auto sharp = objective::hypothesis_probs(std::vector<double>{0.7, 0.5, 0.6, 0.9}, 0.01);
    CHECK(sharp[1] > 0.999);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 5), tau(0.01, 1);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> s = {u(rng), u(rng), u(rng), u(rng)};
        const auto p = objective::hypothesis_probs(s, tau(rng));
        CHECK(p[0] + p[1] + p[2] + p[3] == doctest::Approx(1).epsilon(1e-14));
    }
    CHECK_THROWS_AS(objective::hypothesis_probs(std::vector<double>{1, 2}, 0.0), objective::ObjectiveError);
}

TEST_CASE("deformation regularizer") {
    ad::Tape t;
    CHECK(objective::def_regularizer(t.constant(ad::Tensor({5, 3}))).item() == 0.0);
    ad::Tensor shift({4, 3});
    for (int i = 0; i < 4; ++i) shift[3 * i] = 0.1;
    CHECK(objective::def_regularizer(t.constant(shift)).item() == doctest::Approx(0.01).epsilon(1e-14));

    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 0.2);
    ad::Tensor field({37, 3});
    for (double& v : field.data) v = n(rng);
    double loop = 0;
    for (int i = 0; i < 37; ++i) {
        double sq = 0;
        for (int k = 0; k < 3; ++k) sq += field[3 * i + k] * field[3 * i + k];
        loop += sq;
    }
    CHECK(objective::def_regularizer(t.constant(field)).item() == doctest::Approx(loop / 37).epsilon(1e-14));
    ad::ScalarFn f = [](ad::Tape&, const std::vector<ad::Var>& p) { return objective::def_regularizer(p[0]); };
    CHECK(ad::finite_diff_check(f, {field}).max_rel_error < 1e-8);
}

TEST_CASE("discriminator matches a materialized-broadcast conv stack") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0, 1);
    for (std::size_t e : {3u, 128u}) {
        const Discriminator d = Discriminator::random(5, e);
        std::vector<double> phi(e);
        for (double& v : phi) v = n(rng);
        for (int trial = 0; trial < 3; ++trial) {
            const auto mask = random_mask(rng, 32, 32, 0.4);
            const double ref = naive_logit(d, mask, phi);
            CHECK(objective::discriminator_logit(d, mask, phi) == doctest::Approx(ref).epsilon(1e-12));
        }
    }
    const Discriminator z = Discriminator::zeros();
    CHECK(objective::discriminator_logit(z, random_mask(rng, 32, 32, 0.5), std::vector<double>(128, 0.3)) == 0.0);
    CHECK(Discriminator::random(2).input_channels() == 129);
}

TEST_CASE("discriminator logits are per sample") {
    std::mt19937_64 rng(12);
    const Discriminator d = Discriminator::random(3, 8);
    const std::vector<double> phi(8, 0.2);
    std::vector<std::vector<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_mask(rng, 32, 32, 0.3));
    std::vector<double> logits;
    for (const auto& m : batch) logits.push_back(objective::discriminator_logit(d, m, phi));
    std::vector<int> order = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) CHECK(objective::discriminator_logit(d, batch[order[i]], phi) == logits[order[i]]);
}

TEST_CASE("discriminator gradients") {
    const Discriminator d = Discriminator::random(9, 6);
    const std::vector<double> phi = {0.3, -0.2, 0.5, 0.1, 0.0, -0.4};
    const auto mask = smooth_mask(15.3, 16.7, 7.0);

    ad::ScalarFn wrt_mask = [&](ad::Tape& t, const std::vector<ad::Var>& p) {
        return objective::discriminator_logit(objective::bind(t, d, false), p[0], phi);
    };
    ad::FiniteDiffOptions opt;
    opt.max_coords = 10;
    opt.seed = 4;
    const auto rep = ad::finite_diff_check(wrt_mask, {ad::Tensor({1024}, mask)}, opt);
    CHECK(rep.checked + rep.skipped == 10);
    CHECK(rep.max_rel_error < 1e-4);

    ad::ScalarFn wrt_params = [&](ad::Tape& t, const std::vector<ad::Var>& p) {
        objective::DiscriminatorVars v;
        v.model = &d;
        v.params = p;
        return objective::discriminator_logit(v, t.constant(ad::Tensor({1024}, mask)), phi);
    };
    opt.max_coords = 20;
    const auto rp = ad::finite_diff_check(wrt_params, d.params, opt);
    CHECK(rp.checked > 100);
    CHECK(rp.max_rel_error < 1e-4);

    // The embedding is a constant: a parameter feeding it receives nothing.
    ad::Tape t;
    const ad::Var source = t.param(ad::Tensor({6}, phi));
    const ad::Var logit = objective::discriminator_logit(objective::bind(t, d, true), t.constant(ad::Tensor({1024}, mask)),
                                                         ad::mul_scalar(source, 1.0).value().data);
    t.backward(logit);
    for (double g : t.grad(source).data) CHECK(g == 0.0);
}

TEST_CASE("adversarial values") {
    ad::Tape t;
    std::vector<ad::Var> zero = {t.constant(0.0), t.constant(0.0)};
    CHECK(objective::adversarial_value(zero, zero).item() == doctest::Approx(-2 * std::log(2.0)).epsilon(1e-15));
    CHECK(objective::generator_loss(zero).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    std::vector<ad::Var> real = {t.constant(60.0)}, fake = {t.constant(-60.0)};
    const double perfect = objective::adversarial_value(real, fake).item();
    CHECK(perfect <= 0);
    CHECK(perfect > -1e-12);

    std::vector<ad::Var> wrong_real = {t.constant(-60.0)}, wrong_fake = {t.constant(60.0)};
    CHECK(objective::adversarial_value(wrong_real, wrong_fake).item() == doctest::Approx(2 * std::log(1e-7)).epsilon(1e-6));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 3);
    for (int i = 0; i < 50; ++i) {
        std::vector<ad::Var> r = {t.constant(n(rng)), t.constant(n(rng))}, f = {t.constant(n(rng))};
        CHECK(objective::adversarial_value(r, f).item() <= 0);
        CHECK(objective::generator_loss(f).item() >= 0);
    }
}

TEST_CASE("R1 penalty and its parameter gradient") {
    Discriminator constant = Discriminator::zeros(4);
    constant.params[8][0] = 1.5;
    std::vector<std::vector<double>> masks = {smooth_mask(10, 12, 6), smooth_mask(20, 18, 5)};
    const std::vector<double> phi = {0.2, -0.1, 0.4, 0.3};
    CHECK(objective::r1_penalty(constant, masks, phi) == 0.0);
    for (const auto& g : objective::r1_gradient(constant, masks, phi))
        for (double v : g.data) CHECK(v == 0.0);

    const Discriminator d = Discriminator::random(21, 4);
    const auto grad = objective::r1_gradient(d, masks, phi);
    std::mt19937_64 rng(5);
    int compared = 0;
    double worst = 0;
    for (int trial = 0; trial < 40 && compared < 12; ++trial) {
        const std::size_t k = rng() % d.params.size();
        const std::size_t i = rng() % d.params[k].size();
        const double eps = 1e-5;
        Discriminator p = d, m = d;
        p.params[k][i] += eps;
        m.params[k][i] -= eps;
        const double numeric = (objective::r1_penalty(p, masks, phi) - objective::r1_penalty(m, masks, phi)) / (2 * eps);
        if (std::abs(numeric) < 1e-6 && std::abs(grad[k][i]) < 1e-6) continue;
        worst = std::max(worst, ad::relative_error(grad[k][i], numeric));
        ++compared;
    }
    CHECK(compared >= 8);
    CHECK(worst < 1e-3);
}

TEST_CASE("downsample averages blocks and passes gradients") {
    ad::Tape t;
    ad::Tensor m({16});
    for (int i = 0; i < 16; ++i) m[i] = i;
    const ad::Var d = objective::downsample(t.constant(m), 4, 4, 2);
    CHECK(d.value().data == std::vector<double>{2.5, 4.5, 10.5, 12.5});
    ad::Tensor probe({4}, std::vector<double>{1, -2, 0.5, 3});
    ad::ScalarFn f = [&](ad::Tape&, const std::vector<ad::Var>& p) {
        return ad::sum(ad::mul_const(objective::downsample(p[0], 4, 4, 2), probe));
    };
    CHECK(ad::finite_diff_check(f, {m}).max_rel_error < 1e-8);
    CHECK_THROWS_AS(objective::downsample(t.constant(m), 4, 4, 3), objective::ObjectiveError);
}

TEST_CASE("loss weights and the total loss") {
    const objective::LossWeights w;
    CHECK(w.mask == 10);
    CHECK(w.image == 1);
    CHECK(w.feature == 10);
    CHECK(w.late().feature == 1);
    CHECK(w.deform == 10);
    CHECK(w.articulation == 0.2);
    CHECK(w.hyp == 50);
    CHECK(w.late().hyp == 500);
    CHECK(w.adversarial == 0.1);

    const auto back = objective::loss_weights_from_json(nlohmann::json::parse(objective::to_json(w).dump()));
    CHECK(objective::to_json(back) == objective::to_json(w));
    auto partial = objective::loss_weights_from_json(nlohmann::json{{"dt", 0.5}});
    CHECK(partial.dt == 0.5);
    CHECK(partial.mask == 10);
    CHECK_THROWS_AS(objective::loss_weights_from_json(nlohmann::json{{"mask", -1}}), objective::ObjectiveError);

    ad::Tape t;
    objective::LossParts zero{t.constant(0.0), t.constant(0.0), t.constant(0.0), t.constant(0.0),
                              t.constant(0.0), t.constant(0.0), t.constant(0.0)};
    CHECK(objective::total_loss(zero, w).item() == 0.0);
    objective::LossParts unit{t.constant(1.0), t.constant(1.0), t.constant(1.0), t.constant(1.0),
                              t.constant(1.0), t.constant(1.0), t.constant(1.0)};
    CHECK(objective::total_loss(unit, w).item() == doctest::Approx(10 + 1 + 10 + 10 + 0.2 + 50 + 0.1).epsilon(1e-14));
    CHECK(objective::reconstruction_loss(unit, w).item() == doctest::Approx(21).epsilon(1e-14));

    objective::LossParts parts{t.constant(0.3), t.constant(0.2), t.constant(0.1), t.constant(0.05),
                               t.constant(0.4), t.constant(0.02), t.constant(-1.0)};
    objective::LossWeights w2 = w;
    w2.mask *= 2;
    const double diff = objective::total_loss(parts, w2).item() - objective::total_loss(parts, w).item();
    CHECK(diff == doctest::Approx(10 * 0.3).epsilon(1e-12));

    objective::LossParts only_mask;
    only_mask.mask = t.constant(0.5);
    CHECK(objective::total_loss(only_mask, w).item() == 5.0);
    CHECK_THROWS_AS(objective::total_loss(objective::LossParts{}, w), objective::ObjectiveError);
}
