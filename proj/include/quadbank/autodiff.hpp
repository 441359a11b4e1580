#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every operation applied to its Vars in insertion order.
// Insertion order is a topological order, so backward() is a single reverse
// sweep. Domain modules add their own operations through Tape::custom(),
// supplying the forward value and a vector-Jacobian product.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadbank::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> d);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    std::size_t dim(std::size_t axis) const { return shape.at(axis); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t size() const { return value().size(); }
    double item() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Backward closure: receives the node's output gradient and accumulates
/// into its parents through Tape::accumulate().
using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var constant(double v) { return constant(Tensor::scalar(v)); }
    Var param(Tensor value);

    /// Records an operation. `parents` are the Vars the backward closure may
    /// accumulate into; the node requires grad iff any parent does.
    Var custom(Tensor value, std::vector<Var> parents, BackwardFn backward);

    const Tensor& value(const Var& v) const;
    bool requires_grad(const Var& v) const;

    /// Adds `g` into the gradient buffer of `v` (no-op for constants).
    void accumulate(const Var& v, std::span<const double> g);
    void accumulate_at(const Var& v, std::size_t index, double g);

    /// Reverse sweep from a scalar root. Clears previous gradients first.
    void backward(const Var& root);

    /// Gradient of the last backward root w.r.t. `v`; zeros if untouched.
    Tensor grad(const Var& v) const;

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Node& node(const Var& v);
    const Node& node(const Var& v) const;

    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Generic operations. Binary elementwise ops require equal sizes unless noted.

Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);

Var add_scalar(const Var& x, double c);
Var mul_scalar(const Var& x, double c);
/// x * s where s is a size-1 Var.
Var scale(const Var& x, const Var& s);
/// x + s where s is a size-1 Var.
Var shift(const Var& x, const Var& s);

Var square(const Var& x);
Var sqrt(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
/// Subgradient 0 at the kink.
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
/// Huber-smoothed |x|: x^2/(2 delta) inside [-delta, delta], |x| - delta/2 outside.
/// delta = 0 gives the hard absolute value.
Var smooth_abs(const Var& x, double delta);
/// log(sigmoid(x)) computed stably.
Var log_sigmoid(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var dot(const Var& a, const Var& b);

Var reshape(const Var& x, Shape shape);
/// Contiguous flat range [offset, offset + count) reshaped to `shape`.
Var slice(const Var& x, std::size_t offset, Shape shape);
Var concat(const std::vector<Var>& parts);
/// Rows `index` of a (R x C) tensor -> (index.size() x C).
Var gather_rows(const Var& x, std::vector<std::size_t> index);

/// (m x k) * (k x n) -> (m x n).
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
/// (R x C) -> (R x 1) row sums.
Var sum_cols(const Var& x);
/// (R x C) * (R x 1): scale each row.
Var mul_rows(const Var& x, const Var& r);
/// (R x C) + (C): add a row vector to every row.
Var add_rowvec(const Var& x, const Var& v);
/// Normalize each row of (R x C) to unit length; zero rows stay zero.
Var normalize_rows(const Var& x);
/// Elementwise product with a constant tensor of the same size.
Var mul_const(const Var& x, const Tensor& c);
Var add_const(const Var& x, const Tensor& c);

// ---------------------------------------------------------------------------

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators for one parameter group.
struct AdamState {
    AdamOptions options;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;

    explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

/// Bias-corrected Adam update, in place. `params` and `grads` pair up by index.
void adam_step(AdamState& state, std::span<Tensor* const> params,
               std::span<const Tensor> grads);

// ---------------------------------------------------------------------------

struct FiniteDiffOptions {
    double eps = 1e-5;
    /// Max coordinates checked per parameter (0 = all). Chosen with `seed`.
    std::size_t max_coords = 0;
    std::uint64_t seed = 1;
    /// Skip coordinates whose one-sided slopes disagree by more than this
    /// relative amount (a kink or discontinuity within eps).
    double kink_tolerance = 1e-2;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    /// Parameter and coordinate of the worst error.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares backward() against central differences. Relative error per
/// coordinate is |a - n| / max(1e-8, |a| + |n|).
FiniteDiffReport finite_diff_check(const ScalarFn& f, std::vector<Tensor> params,
                                   const FiniteDiffOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace quadbank::ad
