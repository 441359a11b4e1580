#include "quadbank/autodiff.hpp"

#include <algorithm>
#include <sstream>

namespace quadbank::ad {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size()) {
        throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

const Tensor& Var::value() const {
    if (!tape_) throw std::logic_error("use of an unbound Var");
    return tape_->value(*this);
}

double Var::item() const {
    const Tensor& t = value();
    if (t.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(t.shape));
    return t.data[0];
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::custom(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape_ != this) throw std::invalid_argument("operand belongs to another tape");
        n.parents.push_back(p.id_);
        n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tape::Node& Tape::node(const Var& v) {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw std::invalid_argument("Var not on this tape");
    return nodes_[v.id_];
}

const Tape::Node& Tape::node(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw std::invalid_argument("Var not on this tape");
    return nodes_[v.id_];
}

const Tensor& Tape::value(const Var& v) const { return node(v).value; }

bool Tape::requires_grad(const Var& v) const { return node(v).requires_grad; }

void Tape::accumulate(const Var& v, std::span<const double> g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) {
        throw std::logic_error("gradient size " + std::to_string(g.size()) + " for node of shape " +
                               shape_str(n.value.shape));
    }
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate_at(const Var& v, std::size_t index, double g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    n.grad.at(index) += g;
}

void Tape::backward(const Var& root) {
    const Node& r = node(root);
    if (r.value.size() != 1) {
        throw std::invalid_argument("backward() needs a scalar root, got shape " + shape_str(r.value.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!r.requires_grad) return;
    nodes_[root.id_].grad.assign(1, 1.0);
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.backward) continue;
        // Closures accumulate into parents only, never into n itself.
        n.backward(*this, std::span<const double>(n.grad));
    }
}

Tensor Tape::grad(const Var& v) const {
    const Node& n = node(v);
    Tensor out(n.value.shape, 0.0);
    if (!n.grad.empty()) out.data = n.grad;
    return out;
}

}  // namespace quadbank::ad
