#include <cmath>
#include <random>

#include "quadbank/objective.hpp"

namespace quadbank::objective {
namespace {

constexpr std::size_t kKernel = 4;
constexpr std::size_t kTaps = kKernel * kKernel;
constexpr double kSlope = 0.2;
constexpr std::size_t kWidths[3] = {16, 32, 64};

// Input row/column of kernel offset `k` for output index `o` (stride 2, pad 1).
inline long tap_index(std::size_t o, std::size_t k) { return static_cast<long>(2 * o + k) - 1; }

// x: (cin x h x w), weight: (cout x cin x 4 x 4), bias: (cout). Output
// (cout x h/2 x w/2).
ad::Var conv(const ad::Var& x, const ad::Var& weight, const ad::Var& bias, std::size_t cin, std::size_t h,
             std::size_t w) {
    const std::size_t cout = bias.size(), ho = h / 2, wo = w / 2;
    const ad::Tensor& xv = x.value();
    const ad::Tensor& wv = weight.value();
    const ad::Tensor& bv = bias.value();
    ad::Tensor out({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xo = 0; xo < wo; ++xo) {
                double s = bv[o];
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* wk = wv.data.data() + (o * cin + c) * kTaps;
                    const double* xc = xv.data.data() + c * h * w;
                    for (std::size_t ky = 0; ky < kKernel; ++ky) {
                        const long iy = tap_index(y, ky);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < kKernel; ++kx) {
                            const long ix = tap_index(xo, kx);
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            s += wk[ky * kKernel + kx] * xc[iy * static_cast<long>(w) + ix];
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = s;
            }
        }
    }
    return x.tape()->custom(std::move(out), {x, weight, bias},
                            [x, weight, bias, cin, cout, h, w, ho, wo](ad::Tape& t, std::span<const double> g) {
                                const ad::Tensor& xv = t.value(x);
                                const ad::Tensor& wv = t.value(weight);
                                std::vector<double> gx(xv.size(), 0.0), gw(wv.size(), 0.0), gb(cout, 0.0);
                                for (std::size_t o = 0; o < cout; ++o) {
                                    for (std::size_t y = 0; y < ho; ++y) {
                                        for (std::size_t xo = 0; xo < wo; ++xo) {
                                            const double go = g[(o * ho + y) * wo + xo];
                                            if (go == 0) continue;
                                            gb[o] += go;
                                            for (std::size_t c = 0; c < cin; ++c) {
                                                const std::size_t wbase = (o * cin + c) * kTaps;
                                                const std::size_t xbase = c * h * w;
                                                for (std::size_t ky = 0; ky < kKernel; ++ky) {
                                                    const long iy = tap_index(y, ky);
                                                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                                    for (std::size_t kx = 0; kx < kKernel; ++kx) {
                                                        const long ix = tap_index(xo, kx);
                                                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                                        const std::size_t xi = xbase + static_cast<std::size_t>(iy) * w +
                                                                               static_cast<std::size_t>(ix);
                                                        gw[wbase + ky * kKernel + kx] += go * xv[xi];
                                                        gx[xi] += go * wv[wbase + ky * kKernel + kx];
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                                if (t.requires_grad(x)) t.accumulate(x, gx);
                                t.accumulate(weight, gw);
                                t.accumulate(bias, gb);
                            });
}

// First-layer response to a constant embedding broadcast over an h x w image:
// per output pixel, the sum over in-bounds taps of weight[:, :, tap] . phi.
ad::Var broadcast_conv(const ad::Var& weight, std::span<const double> phi, std::size_t cout, std::size_t h,
                       std::size_t w) {
    const std::size_t e = phi.size(), ho = h / 2, wo = w / 2;
    const ad::Tensor& wv = weight.value();
    std::vector<double> per_tap(cout * kTaps, 0.0);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < e; ++c)
            for (std::size_t k = 0; k < kTaps; ++k) per_tap[o * kTaps + k] += wv[(o * e + c) * kTaps + k] * phi[c];
    auto valid = [h, w](std::size_t y, std::size_t xo, std::size_t k) {
        const long iy = tap_index(y, k / kKernel), ix = tap_index(xo, k % kKernel);
        return iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w);
    };
    ad::Tensor out({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xo = 0; xo < wo; ++xo) {
                double s = 0;
                for (std::size_t k = 0; k < kTaps; ++k)
                    if (valid(y, xo, k)) s += per_tap[o * kTaps + k];
                out[(o * ho + y) * wo + xo] = s;
            }
    std::vector<double> emb(phi.begin(), phi.end());
    return weight.tape()->custom(std::move(out), {weight},
                                 [weight, emb, valid, cout, ho, wo](ad::Tape& t, std::span<const double> g) {
                                     const std::size_t e = emb.size();
                                     std::vector<double> g_tap(cout * kTaps, 0.0);
                                     for (std::size_t o = 0; o < cout; ++o)
                                         for (std::size_t y = 0; y < ho; ++y)
                                             for (std::size_t xo = 0; xo < wo; ++xo)
                                                 for (std::size_t k = 0; k < kTaps; ++k)
                                                     if (valid(y, xo, k)) g_tap[o * kTaps + k] += g[(o * ho + y) * wo + xo];
                                     std::vector<double> gw(cout * e * kTaps);
                                     for (std::size_t o = 0; o < cout; ++o)
                                         for (std::size_t c = 0; c < e; ++c)
                                             for (std::size_t k = 0; k < kTaps; ++k)
                                                 gw[(o * e + c) * kTaps + k] = g_tap[o * kTaps + k] * emb[c];
                                     t.accumulate(weight, gw);
                                 });
}

std::vector<ad::Shape> param_shapes(std::size_t embed_dim) {
    const std::size_t final_in = kWidths[2] * (kDiscResolution / 8) * (kDiscResolution / 8);
    return {{kWidths[0], 1, kKernel, kKernel},
            {kWidths[0], embed_dim, kKernel, kKernel},
            {kWidths[0]},
            {kWidths[1], kWidths[0], kKernel, kKernel},
            {kWidths[1]},
            {kWidths[2], kWidths[1], kKernel, kKernel},
            {kWidths[2]},
            {final_in},
            {1}};
}

}  // namespace

Discriminator Discriminator::zeros(std::size_t embed_dim) {
    Discriminator d;
    d.embed_dim = embed_dim;
    for (const auto& s : param_shapes(embed_dim)) d.params.emplace_back(s, 0.0);
    return d;
}

Discriminator Discriminator::random(std::uint64_t seed, std::size_t embed_dim) {
    Discriminator d = zeros(embed_dim);
    std::mt19937_64 rng(seed);
    const double fan_in[] = {static_cast<double>((1 + embed_dim) * kTaps), static_cast<double>(kWidths[0] * kTaps),
                             static_cast<double>(kWidths[1] * kTaps), static_cast<double>(d.params[7].size())};
    const int weight_index[] = {0, 1, 3, 5, 7};
    const int fan_of[] = {0, 0, 1, 2, 3};
    for (int i = 0; i < 5; ++i) {
        std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in[fan_of[i]]));
        for (double& v : d.params[weight_index[i]].data) v = n(rng);
    }
    return d;
}

void Discriminator::validate() const {
    const auto shapes = param_shapes(embed_dim);
    if (params.size() != shapes.size()) throw ObjectiveError("discriminator: wrong parameter count");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (params[i].shape != shapes[i]) throw ObjectiveError("discriminator: parameter shape mismatch");
        for (double v : params[i].data)
            if (!std::isfinite(v)) throw ObjectiveError("discriminator: non-finite parameter");
    }
}

DiscriminatorVars bind(ad::Tape& tape, const Discriminator& d, bool trainable) {
    d.validate();
    DiscriminatorVars out;
    out.model = &d;
    for (const auto& p : d.params) out.params.push_back(trainable ? tape.param(p) : tape.constant(p));
    return out;
}

ad::Var discriminator_logit(const DiscriminatorVars& d, const ad::Var& mask, std::span<const double> embedding) {
    const std::size_t r = kDiscResolution;
    if (mask.size() != r * r) throw ObjectiveError("discriminator: expected a 32x32 mask");
    if (embedding.size() != d.model->embed_dim) throw ObjectiveError("discriminator: embedding size mismatch");
    const auto& p = d.params;
    ad::Var h = ad::add(conv(mask, p[0], p[2], 1, r, r), broadcast_conv(p[1], embedding, kWidths[0], r, r));
    h = ad::leaky_relu(h, kSlope);
    h = ad::leaky_relu(conv(h, p[3], p[4], kWidths[0], r / 2, r / 2), kSlope);
    h = ad::leaky_relu(conv(h, p[5], p[6], kWidths[1], r / 4, r / 4), kSlope);
    return ad::add(ad::dot(ad::reshape(h, {h.size()}), p[7]), p[8]);
}

double discriminator_logit(const Discriminator& d, std::span<const double> mask, std::span<const double> embedding) {
    ad::Tape tape;
    const auto vars = bind(tape, d, false);
    const ad::Var m = tape.constant(ad::Tensor({mask.size()}, std::vector<double>(mask.begin(), mask.end())));
    return discriminator_logit(vars, m, embedding).item();
}

ad::Var downsample(const ad::Var& mask, std::size_t width, std::size_t height, std::size_t factor) {
    if (factor == 0 || width % factor || height % factor) throw ObjectiveError("downsample: factor must divide the size");
    if (mask.size() != width * height) throw ObjectiveError("downsample: mask size does not match");
    if (factor == 1) return mask;
    const std::size_t wo = width / factor, ho = height / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    const ad::Tensor& mv = mask.value();
    ad::Tensor out({ho * wo});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) out[(y / factor) * wo + x / factor] += mv[y * width + x] * inv;
    return mask.tape()->custom(std::move(out), {mask}, [mask, width, height, factor, wo, inv](ad::Tape& t, std::span<const double> g) {
        std::vector<double> gm(width * height);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) gm[y * width + x] = g[(y / factor) * wo + x / factor] * inv;
        t.accumulate(mask, gm);
    });
}

namespace {

ad::Var mean_log_clamped(std::span<const ad::Var> logits, bool positive) {
    if (logits.empty()) throw ObjectiveError("adversarial loss: no logits");
    const ad::Var l = ad::concat(std::vector<ad::Var>(logits.begin(), logits.end()));
    const ad::Var p = ad::sigmoid(positive ? l : ad::neg(l));
    const ad::Var clamped = ad::add_scalar(ad::relu(ad::add_scalar(p, -kLogClamp)), kLogClamp);
    return ad::mean(ad::log(clamped));
}

std::vector<double> input_gradient(const Discriminator& d, const std::vector<double>& mask,
                                   std::span<const double> embedding) {
    ad::Tape tape;
    const auto vars = bind(tape, d, false);
    const ad::Var m = tape.param(ad::Tensor({mask.size()}, mask));
    tape.backward(discriminator_logit(vars, m, embedding));
    return tape.grad(m).data;
}

std::vector<ad::Tensor> param_gradient(const Discriminator& d, const std::vector<double>& mask,
                                       std::span<const double> embedding) {
    ad::Tape tape;
    const auto vars = bind(tape, d, true);
    const ad::Var m = tape.constant(ad::Tensor({mask.size()}, mask));
    tape.backward(discriminator_logit(vars, m, embedding));
    std::vector<ad::Tensor> out;
    for (const auto& v : vars.params) out.push_back(tape.grad(v));
    return out;
}

}  // namespace

ad::Var adversarial_value(std::span<const ad::Var> real_logits, std::span<const ad::Var> fake_logits) {
    return ad::add(mean_log_clamped(real_logits, true), mean_log_clamped(fake_logits, false));
}

ad::Var generator_loss(std::span<const ad::Var> fake_logits) { return ad::neg(mean_log_clamped(fake_logits, true)); }

double r1_penalty(const Discriminator& d, std::span<const std::vector<double>> masks, std::span<const double> embedding) {
    if (masks.empty()) return 0.0;
    double total = 0;
    for (const auto& m : masks) {
        for (double g : input_gradient(d, m, embedding)) total += 0.5 * g * g;
    }
    return total / static_cast<double>(masks.size());
}

std::vector<ad::Tensor> r1_gradient(const Discriminator& d, std::span<const std::vector<double>> masks,
                                    std::span<const double> embedding, double h) {
    std::vector<ad::Tensor> out;
    for (const auto& p : d.params) out.emplace_back(p.shape, 0.0);
    if (masks.empty()) return out;
    const double scale = 1.0 / static_cast<double>(masks.size());
    for (const auto& m : masks) {
        const std::vector<double> g = input_gradient(d, m, embedding);
        double norm = 0;
        for (double v : g) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0) continue;
        const double step = h / norm;
        std::vector<double> plus = m, minus = m;
        for (std::size_t i = 0; i < m.size(); ++i) {
            plus[i] += step * g[i];
            minus[i] -= step * g[i];
        }
        const auto gp = param_gradient(d, plus, embedding);
        const auto gm = param_gradient(d, minus, embedding);
        for (std::size_t k = 0; k < out.size(); ++k)
            for (std::size_t i = 0; i < out[k].size(); ++i) out[k][i] += scale * (gp[k][i] - gm[k][i]) / (2 * step);
    }
    return out;
}

}  // namespace quadbank::objective
