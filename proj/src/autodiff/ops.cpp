#include "quadbank/autodiff.hpp"

#include <cmath>

namespace quadbank::ad {
namespace {

Tape& tape_of(const Var& v) {
    if (!v.valid()) throw std::logic_error("use of an unbound Var");
    return *v.tape();
}

void require_same_size(const Var& a, const Var& b, const char* op) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(op) + ": size mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

void require_matrix(const Var& x, const char* op) {
    if (x.shape().size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
    }
}

// Elementwise unary op; `deriv(x)` is dy/dx.
template <class F, class D>
Var unary(const Var& x, F f, D deriv) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return t.custom(std::move(out), {x}, [x, deriv](Tape& tape, std::span<const double> g) {
        const Tensor& xv = tape.value(x);
        std::vector<double> gx(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = g[i] * deriv(xv[i]);
        tape.accumulate(x, gx);
    });
}

double sigmoid_value(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var detach(const Var& x) { return tape_of(x).constant(x.value()); }

Var add(const Var& a, const Var& b) {
    require_same_size(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return tape_of(a).custom(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_size(a, b, "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return tape_of(a).custom(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) {
            std::vector<double> gb(g.begin(), g.end());
            for (double& v : gb) v = -v;
            t.accumulate(b, gb);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_size(a, b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return tape_of(a).custom(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        std::vector<double> tmp(g.size());
        if (t.requires_grad(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * bv[i];
            t.accumulate(a, tmp);
        }
        if (t.requires_grad(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * av[i];
            t.accumulate(b, tmp);
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_size(a, b, "div");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    return tape_of(a).custom(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        std::vector<double> tmp(g.size());
        if (t.requires_grad(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] / bv[i];
            t.accumulate(a, tmp);
        }
        if (t.requires_grad(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = -g[i] * av[i] / (bv[i] * bv[i]);
            t.accumulate(b, tmp);
        }
    });
}

Var neg(const Var& x) { return mul_scalar(x, -1.0); }

Var add_scalar(const Var& x, double c) {
    return unary(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Var mul_scalar(const Var& x, double c) {
    return unary(x, [c](double v) { return v * c; }, [c](double) { return c; });
}

Var scale(const Var& x, const Var& s) {
    if (s.size() != 1) throw std::invalid_argument("scale: factor must have size 1");
    const Tensor& xv = x.value();
    const double sv = s.item();
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
    return tape_of(x).custom(std::move(out), {x, s}, [x, s](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(x);
        const double sv = t.value(s)[0];
        if (t.requires_grad(x)) {
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * sv;
            t.accumulate(x, gx);
        }
        long double acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<long double>(g[i]) * xv[i];
        t.accumulate_at(s, 0, static_cast<double>(acc));
    });
}

Var shift(const Var& x, const Var& s) {
    if (s.size() != 1) throw std::invalid_argument("shift: offset must have size 1");
    const Tensor& xv = x.value();
    const double sv = s.item();
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + sv;
    return tape_of(x).custom(std::move(out), {x, s}, [x, s](Tape& t, std::span<const double> g) {
        t.accumulate(x, g);
        long double acc = 0;
        for (double v : g) acc += v;
        t.accumulate_at(s, 0, static_cast<double>(acc));
    });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
    return unary(x, [](double v) { return std::sqrt(v); },
                 [](double v) { return v > 0 ? 0.5 / std::sqrt(v) : 0.0; });
}

Var exp(const Var& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var log(const Var& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var sin(const Var& x) {
    return unary(x, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Var cos(const Var& x) {
    return unary(x, [](double v) { return std::cos(v); }, [](double v) { return -std::sin(v); });
}

Var sigmoid(const Var& x) {
    return unary(x, sigmoid_value, [](double v) {
        const double s = sigmoid_value(v);
        return s * (1.0 - s);
    });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
    });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
                 [slope](double v) { return v > 0 ? 1.0 : slope; });
}

Var smooth_abs(const Var& x, double delta) {
    if (delta <= 0) {
        return unary(x, [](double v) { return std::abs(v); },
                     [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    }
    return unary(
        x,
        [delta](double v) {
            const double a = std::abs(v);
            return a <= delta ? v * v / (2.0 * delta) : a - 0.5 * delta;
        },
        [delta](double v) {
            if (std::abs(v) <= delta) return v / delta;
            return v > 0 ? 1.0 : -1.0;
        });
}

Var log_sigmoid(const Var& x) {
    return unary(
        x, [](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
        [](double v) { return sigmoid_value(-v); });
}

Var sum(const Var& x) {
    const Tensor& xv = x.value();
    long double acc = 0;
    for (double v : xv.data) acc += v;
    return tape_of(x).custom(Tensor::scalar(static_cast<double>(acc)), {x},
                             [x](Tape& t, std::span<const double> g) {
                                 std::vector<double> gx(t.value(x).size(), g[0]);
                                 t.accumulate(x, gx);
                             });
}

Var mean(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.size() == 0) throw std::invalid_argument("mean of an empty tensor");
    long double acc = 0;
    for (double v : xv.data) acc += v;
    const double n = static_cast<double>(xv.size());
    return tape_of(x).custom(Tensor::scalar(static_cast<double>(acc / n)), {x},
                             [x, n](Tape& t, std::span<const double> g) {
                                 std::vector<double> gx(t.value(x).size(), g[0] / n);
                                 t.accumulate(x, gx);
                             });
}

Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

Var reshape(const Var& x, Shape shape) {
    const Tensor& xv = x.value();
    if (shape_size(shape) != xv.size()) {
        throw std::invalid_argument("reshape " + shape_str(xv.shape) + " -> " + shape_str(shape));
    }
    return tape_of(x).custom(Tensor(std::move(shape), xv.data), {x},
                             [x](Tape& t, std::span<const double> g) { t.accumulate(x, g); });
}

Var slice(const Var& x, std::size_t offset, Shape shape) {
    const Tensor& xv = x.value();
    const std::size_t count = shape_size(shape);
    if (offset + count > xv.size()) throw std::out_of_range("slice past end of tensor");
    std::vector<double> d(xv.data.begin() + static_cast<std::ptrdiff_t>(offset),
                          xv.data.begin() + static_cast<std::ptrdiff_t>(offset + count));
    return tape_of(x).custom(Tensor(std::move(shape), std::move(d)), {x},
                             [x, offset](Tape& t, std::span<const double> g) {
                                 if (!t.requires_grad(x)) return;
                                 std::vector<double> gx(t.value(x).size(), 0.0);
                                 std::copy(g.begin(), g.end(), gx.begin() + static_cast<std::ptrdiff_t>(offset));
                                 t.accumulate(x, gx);
                             });
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat of nothing");
    std::vector<double> d;
    for (const Var& p : parts) d.insert(d.end(), p.value().data.begin(), p.value().data.end());
    const std::size_t n = d.size();
    return tape_of(parts[0]).custom(Tensor({n}, std::move(d)), parts,
                                    [parts](Tape& t, std::span<const double> g) {
                                        std::size_t off = 0;
                                        for (const Var& p : parts) {
                                            const std::size_t n = t.value(p).size();
                                            t.accumulate(p, g.subspan(off, n));
                                            off += n;
                                        }
                                    });
}

Var gather_rows(const Var& x, std::vector<std::size_t> index) {
    require_matrix(x, "gather_rows");
    const Tensor& xv = x.value();
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    Tensor out({index.size(), cols});
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= rows) throw std::out_of_range("gather_rows index out of range");
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[index[r] * cols + c];
    }
    return tape_of(x).custom(std::move(out), {x}, [x, index = std::move(index), cols](Tape& t, std::span<const double> g) {
        if (!t.requires_grad(x)) return;
        std::vector<double> gx(t.value(x).size(), 0.0);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t c = 0; c < cols; ++c) gx[index[r] * cols + c] += g[r * cols + c];
        t.accumulate(x, gx);
    });
}

Var matmul(const Var& a, const Var& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) {
        throw std::invalid_argument("matmul: " + shape_str(av.shape) + " * " + shape_str(bv.shape));
    }
    Tensor out({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    return tape_of(a).custom(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.requires_grad(a)) {
            std::vector<double> ga(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                    ga[i * k + p] = acc;
                }
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            std::vector<double> gb(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
            t.accumulate(b, gb);
        }
    });
}

Var transpose(const Var& x) {
    require_matrix(x, "transpose");
    const Tensor& xv = x.value();
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    return tape_of(x).custom(std::move(out), {x}, [x, r, c](Tape& t, std::span<const double> g) {
        std::vector<double> gx(r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[j * r + i];
        t.accumulate(x, gx);
    });
}

Var sum_cols(const Var& x) {
    require_matrix(x, "sum_cols");
    const Tensor& xv = x.value();
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    Tensor out({r, 1});
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j];
        out[i] = acc;
    }
    return tape_of(x).custom(std::move(out), {x}, [x, r, c](Tape& t, std::span<const double> g) {
        std::vector<double> gx(r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i];
        t.accumulate(x, gx);
    });
}

Var mul_rows(const Var& x, const Var& rvec) {
    require_matrix(x, "mul_rows");
    const Tensor& xv = x.value();
    const Tensor& rv = rvec.value();
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    if (rv.size() != r) throw std::invalid_argument("mul_rows: row factor size mismatch");
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * rv[i];
    return tape_of(x).custom(std::move(out), {x, rvec}, [x, rvec, r, c](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(x);
        const Tensor& rv = t.value(rvec);
        if (t.requires_grad(x)) {
            std::vector<double> gx(r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i * c + j] * rv[i];
            t.accumulate(x, gx);
        }
        if (t.requires_grad(rvec)) {
            std::vector<double> gr(r, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gr[i] += g[i * c + j] * xv[i * c + j];
            t.accumulate(rvec, gr);
        }
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    require_matrix(x, "add_rowvec");
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    if (vv.size() != c) throw std::invalid_argument("add_rowvec: row vector size mismatch");
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + vv[j];
    return tape_of(x).custom(std::move(out), {x, v}, [x, v, r, c](Tape& t, std::span<const double> g) {
        t.accumulate(x, g);
        if (t.requires_grad(v)) {
            std::vector<double> gv(c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
            t.accumulate(v, gv);
        }
    });
}

Var normalize_rows(const Var& x) {
    require_matrix(x, "normalize_rows");
    const Tensor& xv = x.value();
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    Tensor out(xv.shape, 0.0);
    std::vector<double> norms(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
        norms[i] = std::sqrt(s);
        if (norms[i] > 0)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
    }
    Tensor unit = out;
    return tape_of(x).custom(std::move(out), {x},
                             [x, r, c, norms = std::move(norms), unit = std::move(unit)](Tape& t,
                                                                                       std::span<const double> g) {
                                 std::vector<double> gx(r * c, 0.0);
                                 for (std::size_t i = 0; i < r; ++i) {
                                     if (norms[i] <= 0) continue;
                                     double ng = 0;
                                     for (std::size_t j = 0; j < c; ++j) ng += unit[i * c + j] * g[i * c + j];
                                     for (std::size_t j = 0; j < c; ++j)
                                         gx[i * c + j] = (g[i * c + j] - unit[i * c + j] * ng) / norms[i];
                                 }
                                 t.accumulate(x, gx);
                             });
}

Var mul_const(const Var& x, const Tensor& c) {
    const Tensor& xv = x.value();
    if (c.size() != xv.size()) throw std::invalid_argument("mul_const: size mismatch");
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c[i];
    return tape_of(x).custom(std::move(out), {x}, [x, c](Tape& t, std::span<const double> g) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * c[i];
        t.accumulate(x, gx);
    });
}

Var add_const(const Var& x, const Tensor& c) {
    const Tensor& xv = x.value();
    if (c.size() != xv.size()) throw std::invalid_argument("add_const: size mismatch");
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c[i];
    return tape_of(x).custom(std::move(out), {x}, [x](Tape& t, std::span<const double> g) { t.accumulate(x, g); });
}

}  // namespace quadbank::ad
