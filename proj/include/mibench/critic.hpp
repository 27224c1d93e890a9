#pragma once

#include <span>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/mlp.hpp"

namespace mibench {

enum class CriticKind { joint, separable };

inline std::string to_string(CriticKind k) { return k == CriticKind::joint ? "joint" : "separable"; }

using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unnormalized score f(x, y). A joint critic is one MLP over concat(x, y); a
// separable critic scores g(x) . h(y) with e-dimensional embeddings. All
// parameters live in one flat vector (g before h for separable critics).
struct CriticModel {
  CriticKind kind = CriticKind::separable;
  int x_dim = 0;
  int y_dim = 0;
  int embed_dim = 0;
  MlpSpec joint_net;
  MlpSpec g_net;
  MlpSpec h_net;
  std::vector<double> params;

  static CriticModel joint(int dx, int dy, const std::vector<int>& hidden, std::uint64_t seed) {
    CriticModel c;
    c.kind = CriticKind::joint;
    c.x_dim = dx;
    c.y_dim = dy;
    c.joint_net = make_mlp(dx + dy, hidden, 1, seed);
    c.params = init_params(c.joint_net);
    return c;
  }

  static CriticModel separable(int dx, int dy, const std::vector<int>& hidden, int embed, std::uint64_t seed) {
    require(embed >= 1, "CriticModel: embedding dimension must be positive");
    CriticModel c;
    c.kind = CriticKind::separable;
    c.x_dim = dx;
    c.y_dim = dy;
    c.embed_dim = embed;
    c.g_net = make_mlp(dx, hidden, embed, seed);
    c.h_net = make_mlp(dy, hidden, embed, seed ^ 0x9e3779b97f4a7c15ULL);
    c.params = init_params(c.g_net);
    const auto h = init_params(c.h_net);
    c.params.insert(c.params.end(), h.begin(), h.end());
    return c;
  }

  std::size_t g_size() const { return g_net.param_count(); }

  std::span<const double> g_params() const { return std::span<const double>(params).first(g_size()); }
  std::span<const double> h_params() const { return std::span<const double>(params).subspan(g_size()); }

  // Sets every parameter to zero except output biases, so the score is the
  // constant k for every input.
  void make_constant(double k) {
    std::fill(params.begin(), params.end(), 0.0);
    if (kind == CriticKind::joint) {
      params.back() = k;
      return;
    }
    const std::size_t g_bias = g_net.layer_offset(g_net.layers() - 1) +
                               static_cast<std::size_t>(g_net.widths[g_net.layers() - 1]) * embed_dim;
    const std::size_t h_bias = g_size() + h_net.layer_offset(h_net.layers() - 1) +
                               static_cast<std::size_t>(h_net.widths[h_net.layers() - 1]) * embed_dim;
    params[g_bias] = k;
    params[h_bias] = 1.0;
  }
};

// Proposal pairs for a batch: x_i is paired with y.row(index(i, j)).
struct NegativeSet {
  Matrix y;
  IndexMatrix index;           // B x K
  bool pool_is_batch = false;  // y holds the batch's own y rows, in order

  Eigen::Index k() const { return index.cols(); }
};

struct ScoreTable {
  Vector joint;      // f(x_i, y_i)
  Matrix negatives;  // B x K, f(x_i, y'_ij)
};

struct CriticCache {
  MlpCache net;      // joint critic, or g for separable
  MlpCache h_batch;  // separable: h over batch y
  MlpCache h_pool;   // separable: h over the proposal pool (unless shared)
  Matrix g;
  Matrix h_y;
  Matrix h_neg;
};

inline double critic_score(const CriticModel& c, std::span<const double> x, std::span<const double> y) {
  require(static_cast<int>(x.size()) == c.x_dim && static_cast<int>(y.size()) == c.y_dim,
          "critic_score: dimension mismatch");
  if (c.kind == CriticKind::joint) {
    std::vector<double> in(x.begin(), x.end());
    in.insert(in.end(), y.begin(), y.end());
    return mlp_apply(c.joint_net, c.params, in)[0];
  }
  const auto g = mlp_apply(c.g_net, c.g_params(), x);
  const auto h = mlp_apply(c.h_net, c.h_params(), y);
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * h[i];
  return s;
}

// Scores for row-aligned pairs (x_i, y_i).
inline Vector critic_score_rows(const CriticModel& c, const Matrix& x, const Matrix& y) {
  require(x.rows() == y.rows() && x.cols() == c.x_dim && y.cols() == c.y_dim,
          "critic_score_rows: dimension mismatch");
  if (c.kind == CriticKind::joint) {
    Matrix in(x.rows(), x.cols() + y.cols());
    in << x, y;
    return mlp_forward(c.joint_net, c.params, in).col(0);
  }
  const Matrix g = mlp_forward(c.g_net, c.g_params(), x);
  const Matrix h = mlp_forward(c.h_net, c.h_params(), y);
  return g.cwiseProduct(h).rowwise().sum();
}

inline ScoreTable critic_scores(const CriticModel& c, const SampleBatch& batch, const NegativeSet& neg,
                                CriticCache* cache = nullptr) {
  batch.validate();
  const Eigen::Index b = batch.size();
  const Eigen::Index k = neg.k();
  require(b > 0, "critic_scores: empty batch");
  require(neg.index.rows() == b, "critic_scores: negative index must have one row per batch element");
  require(batch.x_dim() == c.x_dim && batch.y_dim() == c.y_dim && neg.y.cols() == c.y_dim,
          "critic_scores: dimension mismatch");
  ScoreTable out;
  out.negatives.resize(b, k);
  if (c.kind == CriticKind::joint) {
    Matrix in(b + b * k, c.x_dim + c.y_dim);
    for (Eigen::Index i = 0; i < b; ++i) {
      in.row(i) << batch.x.row(i), batch.y.row(i);
      for (Eigen::Index j = 0; j < k; ++j) in.row(b + i * k + j) << batch.x.row(i), neg.y.row(neg.index(i, j));
    }
    const Matrix s = mlp_forward(c.joint_net, c.params, in, cache ? &cache->net : nullptr);
    out.joint = s.col(0).head(b);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < k; ++j) out.negatives(i, j) = s(b + i * k + j, 0);
    return out;
  }
  CriticCache local;
  CriticCache& cc = cache ? *cache : local;
  cc.g = mlp_forward(c.g_net, c.g_params(), batch.x, &cc.net);
  cc.h_y = mlp_forward(c.h_net, c.h_params(), batch.y, &cc.h_batch);
  cc.h_neg = neg.pool_is_batch ? cc.h_y : mlp_forward(c.h_net, c.h_params(), neg.y, &cc.h_pool);
  out.joint = cc.g.cwiseProduct(cc.h_y).rowwise().sum();
  if (neg.pool_is_batch) {
    const Matrix all = cc.g * cc.h_neg.transpose();
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < k; ++j) out.negatives(i, j) = all(i, neg.index(i, j));
  } else {
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < k; ++j) out.negatives(i, j) = cc.g.row(i).dot(cc.h_neg.row(neg.index(i, j)));
  }
  return out;
}

// Accumulates d(loss)/d(params) given d(loss)/d(scores) from a cached
// critic_scores call.
inline void critic_backward(const CriticModel& c, const SampleBatch& batch, const NegativeSet& neg,
                            const CriticCache& cache, const Vector& d_joint, const Matrix& d_neg,
                            std::span<double> grad) {
  require(grad.size() == c.params.size(), "critic_backward: gradient vector has wrong length");
  const Eigen::Index b = batch.size();
  const Eigen::Index k = neg.k();
  if (c.kind == CriticKind::joint) {
    Matrix d_out(b + b * k, 1);
    d_out.col(0).head(b) = d_joint;
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < k; ++j) d_out(b + i * k + j, 0) = d_neg(i, j);
    mlp_backward(c.joint_net, c.params, cache.net, d_out, grad, false);
    return;
  }
  const Eigen::Index e = c.embed_dim;
  Matrix d_g = cache.h_y.array().colwise() * d_joint.array();
  Matrix d_hy = cache.g.array().colwise() * d_joint.array();
  Matrix d_hn = Matrix::Zero(cache.h_neg.rows(), e);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = d_neg(i, j);
      if (d == 0.0) continue;
      const int r = neg.index(i, j);
      d_g.row(i) += d * cache.h_neg.row(r);
      d_hn.row(r) += d * cache.g.row(i);
    }
  }
  std::span<double> gg = grad.first(c.g_size());
  std::span<double> gh = grad.subspan(c.g_size());
  mlp_backward(c.g_net, c.g_params(), cache.net, d_g, gg, false);
  if (neg.pool_is_batch) {
    d_hy += d_hn;
    mlp_backward(c.h_net, c.h_params(), cache.h_batch, d_hy, gh, false);
  } else {
    mlp_backward(c.h_net, c.h_params(), cache.h_batch, d_hy, gh, false);
    mlp_backward(c.h_net, c.h_params(), cache.h_pool, d_hn, gh, false);
  }
}

}  // namespace mibench
