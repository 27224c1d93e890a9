#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mibench/errors.hpp"

namespace mibench {

enum class OpTag : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  exp,
  log,
  relu,
  softplus,
  clamp,
  sum,
  log_sum_exp,
};

class Tape;

// Handle to a scalar node. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  double value() const;
  double grad() const;
};

// Scalar reverse-mode tape. Nodes are appended in evaluation order, so every
// parent has a smaller index than its child and one reverse sweep is a valid
// topological traversal. Edges are stored contiguously (CSR style) so n-ary
// reductions over thousands of scores cost one node.
class Tape {
 public:
  struct Node {
    double value = 0.0;
    double grad = 0.0;
    std::uint32_t edge_begin = 0;
    std::uint32_t edge_count = 0;
    OpTag op = OpTag::leaf;
  };
  struct Edge {
    std::uint32_t parent;
    double local;  // d(node)/d(parent)
  };

  void reserve(std::size_t nodes, std::size_t edges) {
    nodes_.reserve(nodes);
    edges_.reserve(edges);
  }

  void clear() {
    nodes_.clear();
    edges_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

  Var leaf(double value) { return push(value, OpTag::leaf, {}); }

  std::vector<Var> leaves(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(leaf(v));
    return out;
  }

  Var unary(double value, OpTag op, Var a, double da) {
    return push(value, op, {Edge{a.id, da}});
  }

  Var binary(double value, OpTag op, Var a, double da, Var b, double db) {
    return push(value, op, {Edge{a.id, da}, Edge{b.id, db}});
  }

  Var nary(double value, OpTag op, std::span<const Var> parents, std::span<const double> locals) {
    const auto begin = static_cast<std::uint32_t>(edges_.size());
    for (std::size_t i = 0; i < parents.size(); ++i) edges_.push_back(Edge{parents[i].id, locals[i]});
    Node n;
    n.value = value;
    n.op = op;
    n.edge_begin = begin;
    n.edge_count = static_cast<std::uint32_t>(parents.size());
    nodes_.push_back(n);
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  // Populates d(root)/d(node) for every node at or below the root.
  void backward(Var root) {
    require(root.tape == this && root.id < nodes_.size(), "backward: root is not on this tape");
    for (auto& n : nodes_) n.grad = 0.0;
    nodes_[root.id].grad = 1.0;
    for (std::int64_t i = root.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad == 0.0) continue;
      for (std::uint32_t e = n.edge_begin; e < n.edge_begin + n.edge_count; ++e)
        nodes_[edges_[e].parent].grad += edges_[e].local * n.grad;
    }
  }

  // Vector-valued roots are rejected: gradients are defined for scalars only.
  void backward(std::span<const Var> root) {
    require(root.size() == 1, "backward: root must be a scalar (got " + std::to_string(root.size()) +
                                  " outputs)");
    backward(root[0]);
  }

  std::vector<double> gradients(std::span<const Var> vars) const {
    std::vector<double> out;
    out.reserve(vars.size());
    for (const Var& v : vars) out.push_back(nodes_[v.id].grad);
    return out;
  }

  const Node& node(Var v) const { return nodes_[v.id]; }

 private:
  Var push(double value, OpTag op, std::initializer_list<Edge> edges) {
    Node n;
    n.value = value;
    n.op = op;
    n.edge_begin = static_cast<std::uint32_t>(edges_.size());
    n.edge_count = static_cast<std::uint32_t>(edges.size());
    edges_.insert(edges_.end(), edges.begin(), edges.end());
    nodes_.push_back(n);
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
};

inline double Var::value() const { return tape->node(*this).value; }
inline double Var::grad() const { return tape->node(*this).grad; }

inline Var operator+(Var a, Var b) { return a.tape->binary(a.value() + b.value(), OpTag::add, a, 1.0, b, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape->binary(a.value() - b.value(), OpTag::sub, a, 1.0, b, -1.0); }
inline Var operator*(Var a, Var b) {
  return a.tape->binary(a.value() * b.value(), OpTag::mul, a, b.value(), b, a.value());
}
inline Var operator/(Var a, Var b) {
  const double bv = b.value();
  return a.tape->binary(a.value() / bv, OpTag::div, a, 1.0 / bv, b, -a.value() / (bv * bv));
}
inline Var operator-(Var a) { return a.tape->unary(-a.value(), OpTag::neg, a, -1.0); }

inline Var operator+(Var a, double c) { return a.tape->unary(a.value() + c, OpTag::add, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a.tape->unary(a.value() - c, OpTag::sub, a, 1.0); }
inline Var operator-(double c, Var a) { return a.tape->unary(c - a.value(), OpTag::sub, a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape->unary(a.value() * c, OpTag::mul, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a.tape->unary(a.value() / c, OpTag::div, a, 1.0 / c); }

inline Var exp(Var a) {
  const double e = std::exp(a.value());
  return a.tape->unary(e, OpTag::exp, a, e);
}

inline Var log(Var a) { return a.tape->unary(std::log(a.value()), OpTag::log, a, 1.0 / a.value()); }

inline Var relu(Var a) {
  const double v = a.value();
  return a.tape->unary(v > 0.0 ? v : 0.0, OpTag::relu, a, v > 0.0 ? 1.0 : 0.0);
}

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var softplus(Var a) { return a.tape->unary(softplus(a.value()), OpTag::softplus, a, sigmoid(a.value())); }

// Zero gradient where the clamp binds.
inline Var clamp(Var a, double lo, double hi) {
  const double v = a.value();
  const bool inside = v >= lo && v <= hi;
  return a.tape->unary(std::clamp(v, lo, hi), OpTag::clamp, a, inside ? 1.0 : 0.0);
}

inline Var sum(std::span<const Var> xs) {
  require(!xs.empty(), "sum: empty input");
  double total = 0.0;
  for (const Var& x : xs) total += x.value();
  std::vector<double> ones(xs.size(), 1.0);
  return xs.front().tape->nary(total, OpTag::sum, xs, ones);
}

inline Var mean(std::span<const Var> xs) {
  require(!xs.empty(), "mean: empty input");
  const double w = 1.0 / static_cast<double>(xs.size());
  double total = 0.0;
  for (const Var& x : xs) total += x.value();
  std::vector<double> locals(xs.size(), w);
  return xs.front().tape->nary(total * w, OpTag::sum, xs, locals);
}

// log(sum_i exp(x_i)), stabilized by the running maximum.
inline Var log_sum_exp(std::span<const Var> xs) {
  require(!xs.empty(), "log_sum_exp: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (const Var& x : xs) m = std::max(m, x.value());
  double s = 0.0;
  for (const Var& x : xs) s += std::exp(x.value() - m);
  std::vector<double> locals(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) locals[i] = std::exp(xs[i].value() - m) / s;
  return xs.front().tape->nary(m + std::log(s), OpTag::log_sum_exp, xs, locals);
}

inline Var log_mean_exp(std::span<const Var> xs) {
  return log_sum_exp(xs) - std::log(static_cast<double>(xs.size()));
}

}  // namespace mibench
