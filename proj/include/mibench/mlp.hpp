#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/rng.hpp"
#include "mibench/tape.hpp"

namespace mibench {

enum class Activation : std::uint8_t {
  relu,
  softplus,
  identity,
  exp_half,  // exp(z / 2): turns a log-variance output into a standard deviation
};

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::identity: return "identity";
    case Activation::exp_half: return "exp_half";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "identity") return Activation::identity;
  if (s == "exp_half") return Activation::exp_half;
  throw ContractViolation("unknown activation '" + s + "'");
}

// Fully connected network. `widths` lists every layer including input and
// output, e.g. {2, 256, 128, 1}. Hidden layers use `hidden`, the last layer
// uses `output`.
struct MlpSpec {
  std::vector<int> widths;
  Activation hidden = Activation::relu;
  Activation output = Activation::identity;
  std::uint64_t seed = 0;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }

  void validate() const {
    require(widths.size() >= 2, "MlpSpec: need at least input and output widths");
    for (int w : widths) require(w > 0, "MlpSpec: layer widths must be positive");
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      n += static_cast<std::size_t>(widths[l + 1]) * (static_cast<std::size_t>(widths[l]) + 1);
    return n;
  }

  // Offset of layer l's weight block; its bias block follows immediately.
  std::size_t layer_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i)
      off += static_cast<std::size_t>(widths[i + 1]) * (static_cast<std::size_t>(widths[i]) + 1);
    return off;
  }
};

// Default hidden widths used by every learned critic and proposal.
inline std::vector<int> default_hidden() { return {256, 128}; }

inline MlpSpec make_mlp(int in, const std::vector<int>& hidden, int out, std::uint64_t seed,
                        Activation output = Activation::identity) {
  MlpSpec s;
  s.widths.push_back(in);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  s.widths.push_back(out);
  s.output = output;
  s.seed = seed;
  s.validate();
  return s;
}

// Fan-in scaled uniform init: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// zero biases. Deterministic in spec.seed.
inline std::vector<double> init_params(const MlpSpec& spec) {
  spec.validate();
  std::vector<double> p(spec.param_count(), 0.0);
  Rng rng(spec.seed);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double bound = 1.0 / std::sqrt(in);
    const std::size_t off = spec.layer_offset(l);
    for (std::size_t i = 0; i < static_cast<std::size_t>(in) * out; ++i) p[off + i] = rng.uniform(-bound, bound);
  }
  return p;
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::softplus: return softplus(z);
    case Activation::identity: return z;
    case Activation::exp_half: return std::exp(0.5 * z);
  }
  return z;
}

// Derivative expressed through the pre-activation z and activation value h.
inline double activate_grad(Activation a, double z, double h) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::softplus: return sigmoid(z);
    case Activation::identity: return 1.0;
    case Activation::exp_half: return 0.5 * h;
  }
  return 1.0;
}

inline Var activate(Activation a, Var z) {
  switch (a) {
    case Activation::relu: return relu(z);
    case Activation::softplus: return softplus(z);
    case Activation::identity: return z;
    case Activation::exp_half: return exp(z * 0.5);
  }
  return z;
}

// Single-input forward pass.
inline std::vector<double> mlp_apply(const MlpSpec& spec, std::span<const double> params,
                                     std::span<const double> input) {
  require(params.size() == spec.param_count(), "mlp_apply: parameter vector has wrong length");
  require(input.size() == static_cast<std::size_t>(spec.input_dim()),
          "mlp_apply: input length " + std::to_string(input.size()) + " does not match first layer width " +
              std::to_string(spec.input_dim()));
  std::vector<double> h(input.begin(), input.end());
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double* w = params.data() + spec.layer_offset(l);
    const double* b = w + static_cast<std::size_t>(in) * out;
    const Activation act = l + 1 == spec.layers() ? spec.output : spec.hidden;
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double z = b[o];
      for (int i = 0; i < in; ++i) z += w[static_cast<std::size_t>(o) * in + i] * h[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = activate(act, z);
    }
    h = std::move(next);
  }
  return h;
}

// Forward pass recorded on a tape; params and input are tape variables.
inline std::vector<Var> mlp_apply([[maybe_unused]] Tape& tape, const MlpSpec& spec, std::span<const Var> params,
                                  std::span<const Var> input) {
  require(params.size() == spec.param_count(), "mlp_apply: parameter vector has wrong length");
  require(input.size() == static_cast<std::size_t>(spec.input_dim()), "mlp_apply: input dimension mismatch");
  std::vector<Var> h(input.begin(), input.end());
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const std::size_t off = spec.layer_offset(l);
    const Activation act = l + 1 == spec.layers() ? spec.output : spec.hidden;
    std::vector<Var> next;
    next.reserve(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      Var z = params[off + static_cast<std::size_t>(in) * out + o];
      for (int i = 0; i < in; ++i) z = z + params[off + static_cast<std::size_t>(o) * in + i] * h[static_cast<std::size_t>(i)];
      next.push_back(activate(act, z));
    }
    h = std::move(next);
  }
  return h;
}

// Activations retained by the batched forward pass for the backward pass.
struct MlpCache {
  std::vector<Matrix> pre;   // pre-activations per layer
  std::vector<Matrix> post;  // post[0] is the input, post[l+1] the output of layer l
};

// Row-batched forward pass: x is n x input_dim, result n x output_dim.
inline Matrix mlp_forward(const MlpSpec& spec, std::span<const double> params, const Matrix& x,
                          MlpCache* cache = nullptr) {
  require(params.size() == spec.param_count(), "mlp_forward: parameter vector has wrong length");
  require(x.cols() == spec.input_dim(), "mlp_forward: input has " + std::to_string(x.cols()) +
                                            " columns, network expects " + std::to_string(spec.input_dim()));
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(x);
  }
  Matrix h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double* wp = params.data() + spec.layer_offset(l);
    const Matrix w = Eigen::Map<const Matrix>(wp, out, in);
    const Eigen::RowVectorXd b = Eigen::Map<const Eigen::RowVectorXd>(wp + static_cast<std::size_t>(in) * out, out);
    Matrix z(h.rows(), out);
    z.noalias() = h * w.transpose();
    z.rowwise() += b;
    const Activation act = l + 1 == spec.layers() ? spec.output : spec.hidden;
    Matrix a;
    if (act == Activation::relu)
      a = z.cwiseMax(0.0);
    else if (act == Activation::identity)
      a = z;
    else
      a = z.unaryExpr([act](double v) { return activate(act, v); });
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
    h = std::move(a);
  }
  return h;
}

// Backpropagates d(loss)/d(output) through a cached forward pass. Parameter
// gradients are accumulated into `grad`; the input gradient is returned
// unless want_input_grad is false.
inline Matrix mlp_backward(const MlpSpec& spec, std::span<const double> params, const MlpCache& cache,
                           const Matrix& d_out, std::span<double> grad, bool want_input_grad = true) {
  require(grad.size() == spec.param_count(), "mlp_backward: gradient vector has wrong length");
  require(cache.pre.size() == spec.layers(), "mlp_backward: cache does not match network");
  Matrix delta = d_out;
  for (std::size_t li = spec.layers(); li-- > 0;) {
    const int in = spec.widths[li];
    const int out = spec.widths[li + 1];
    const Activation act = li + 1 == spec.layers() ? spec.output : spec.hidden;
    const Matrix& z = cache.pre[li];
    const Matrix& a = cache.post[li + 1];
    if (act == Activation::relu) {
      delta.array() *= (z.array() > 0.0).cast<double>();
    } else if (act != Activation::identity) {
      for (Eigen::Index r = 0; r < delta.rows(); ++r)
        for (Eigen::Index c = 0; c < delta.cols(); ++c) delta(r, c) *= activate_grad(act, z(r, c), a(r, c));
    }
    const std::size_t off = spec.layer_offset(li);
    Eigen::Map<Matrix> gw(grad.data() + off, out, in);
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data() + off + static_cast<std::size_t>(in) * out, out);
    Matrix dw(out, in);
    dw.noalias() = delta.transpose() * cache.post[li];
    gw += dw;
    const Eigen::RowVectorXd db = delta.colwise().sum();
    gb += db;
    if (li == 0 && !want_input_grad) break;
    const Matrix w = Eigen::Map<const Matrix>(params.data() + off, out, in);
    Matrix next(delta.rows(), in);
    next.noalias() = delta * w;
    delta = std::move(next);
  }
  return delta;
}

}  // namespace mibench
