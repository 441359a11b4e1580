#include <doctest.h>

#include <cmath>
#include <random>

#include "quadbank/autodiff.hpp"

using namespace quadbank::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : t.data) v = n(rng);
    return t;
}

}  // namespace

TEST_CASE("square gradient") {
    Tape t;
    Var x = t.param(Tensor::scalar(3.0));
    Var y = square(x);
    t.backward(y);
    CHECK(t.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("product plus sine gradient") {
    Tape t;
    Var x = t.param(Tensor::scalar(1.0));
    Var y = t.param(Tensor::scalar(2.0));
    Var f = add(mul(x, y), sin(x));
    t.backward(f);
    CHECK(t.grad(x)[0] == doctest::Approx(2.0 + std::cos(1.0)).epsilon(1e-14));
    CHECK(t.grad(y)[0] == doctest::Approx(1.0));
}

TEST_CASE("detach blocks gradient but keeps the value") {
    Tape t;
    Var x = t.param(Tensor::scalar(3.0));
    Var d = detach(x);
    CHECK(d.item() == 3.0);
    Var f = mul(d, x);
    t.backward(f);
    CHECK(t.grad(x)[0] == 3.0);
}

TEST_CASE("non-scalar root is rejected") {
    Tape t;
    Var x = t.param(Tensor({3}, 1.0));
    CHECK_THROWS(t.backward(x));
}

TEST_CASE("backward twice gives the same gradients") {
    Tape t;
    Var x = t.param(Tensor({2}, std::vector<double>{0.5, -1.5}));
    Var f = sum(exp(x));
    t.backward(f);
    const Tensor g1 = t.grad(x);
    t.backward(f);
    CHECK(t.grad(x).data == g1.data);
}

TEST_CASE("gradient of a sum equals the sum of gradients") {
    std::mt19937_64 rng(7);
    const Tensor xv = random_tensor({4, 3}, rng);
    const Tensor wv = random_tensor({3, 2}, rng);
    auto f1 = [&](Tape& t, Var x) { return sum(tanh(matmul(x, t.constant(wv)))); };
    auto f2 = [&](Tape&, Var x) { return mean(square(sigmoid(x))); };

    Tape ta;
    Var xa = ta.param(xv);
    ta.backward(add(f1(ta, xa), f2(ta, xa)));
    const Tensor ga = ta.grad(xa);

    Tape tb;
    Var xb = tb.param(xv);
    tb.backward(f1(tb, xb));
    Tensor g1 = tb.grad(xb);
    tb.backward(f2(tb, xb));
    Tensor g2 = tb.grad(xb);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("result does not depend on the order independent branches are recorded") {
    const Tensor xv({3}, std::vector<double>{0.3, -0.7, 1.1});
    auto run = [&](bool swap) {
        Tape t;
        Var x = t.param(xv);
        Var a, b;
        if (swap) {
            b = log(add_scalar(square(x), 1.0));
            a = mul(sin(x), x);
        } else {
            a = mul(sin(x), x);
            b = log(add_scalar(square(x), 1.0));
        }
        t.backward(sum(add(a, b)));
        return t.grad(x);
    };
    CHECK(run(false).data == run(true).data);
}

TEST_CASE("elementwise and matrix ops match finite differences") {
    std::mt19937_64 rng(3);
    const std::vector<Tensor> params{random_tensor({3, 4}, rng, 0.5), random_tensor({4, 2}, rng, 0.5),
                                     random_tensor({4}, rng, 0.5), random_tensor({3, 1}, rng, 0.5)};
    ScalarFn f = [](Tape& t, const std::vector<Var>& p) {
        Var h = matmul(add_rowvec(p[0], p[2]), p[1]);
        Var z = add(sigmoid(h), tanh(mul_scalar(h, 0.5)));
        Var r = mul_rows(normalize_rows(p[0]), exp(p[3]));
        Var s = concat({reshape(z, {6}), slice(r, 2, {5}), sum_cols(transpose(p[1]))});
        Var q = div(sqrt(add_scalar(square(s), 1.0)), add_scalar(exp(neg(s)), 1.0));
        Var w = log_sigmoid(gather_rows(p[0], {2, 0}));
        return add(add(mean(q), dot(s, s)), scale(sum(w), t.constant(0.3)));
    };
    const FiniteDiffReport rep = finite_diff_check(f, params);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_error < 1e-7);
}

TEST_CASE("quadratic form passes the gradient check to 1e-9") {
    std::mt19937_64 rng(5);
    Tensor a = random_tensor({5, 5}, rng);
    ScalarFn f = [a](Tape& t, const std::vector<Var>& p) {
        Var x = reshape(p[0], {5, 1});
        return sum(mul(x, matmul(t.constant(a), x)));
    };
    const FiniteDiffReport rep = finite_diff_check(f, {random_tensor({5}, rng)});
    CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("kinks are skipped by the checker") {
    ScalarFn f = [](Tape&, const std::vector<Var>& p) { return sum(relu(p[0])); };
    const FiniteDiffReport rep = finite_diff_check(f, {Tensor({3}, std::vector<double>{0.0, 1.0, -1.0})});
    CHECK(rep.skipped == 1);
    CHECK(rep.checked == 2);
    CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("smooth_abs is quadratic inside delta and shifted abs outside") {
    Tape t;
    Var x = t.param(Tensor({3}, std::vector<double>{0.5e-6, -3.0, 2.0}));
    Var y = smooth_abs(x, 1e-6);
    CHECK(y.value()[0] == doctest::Approx(0.25e-12 / 2e-6));
    CHECK(y.value()[1] == doctest::Approx(3.0 - 0.5e-6));
    t.backward(sum(y));
    CHECK(t.grad(x)[0] == doctest::Approx(0.5));
    CHECK(t.grad(x)[1] == -1.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    AdamState st;
    Tensor p({3}, std::vector<double>{1, 2, 3});
    Tensor* ptrs[] = {&p};
    const Tensor g({3}, 0.0);
    adam_step(st, ptrs, std::span(&g, 1));
    CHECK(p.data == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam: first step moves by lr * g / (|g| + eps)") {
    AdamState st(AdamOptions{.lr = 0.01});
    Tensor p({2}, std::vector<double>{0.0, 0.0});
    Tensor* ptrs[] = {&p};
    const Tensor g({2}, std::vector<double>{0.3, -2.0});
    adam_step(st, ptrs, std::span(&g, 1));
    CHECK(p[0] == doctest::Approx(-0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: separate groups honour their learning rates") {
    AdamState bank(AdamOptions{.lr = 1e-3});
    AdamState other(AdamOptions{.lr = 1e-4});
    Tensor a({1}, 0.0), b({1}, 0.0);
    Tensor* pa[] = {&a};
    Tensor* pb[] = {&b};
    const Tensor g({1}, 1.0);
    adam_step(bank, pa, std::span(&g, 1));
    adam_step(other, pb, std::span(&g, 1));
    CHECK(a[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(b[0] == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("operations across tapes are rejected") {
    Tape t1, t2;
    Var a = t1.param(Tensor::scalar(1.0));
    Var b = t2.param(Tensor::scalar(1.0));
    CHECK_THROWS(add(a, b));
}
