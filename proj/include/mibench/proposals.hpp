#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mibench/adam.hpp"
#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/mlp.hpp"
#include "mibench/quantizer.hpp"
#include "mibench/rng.hpp"

namespace mibench {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

inline double gaussian_log_density(double y, double mu, double log_var) {
  const double d = y - mu;
  return -0.5 * (std::log(2.0 * std::numbers::pi) + log_var + d * d * std::exp(-log_var));
}

// Diagonal Gaussian density over y, fitted by maximum likelihood (DoE
// marginal s_xi). Held fixed once fitted.
struct DiagonalGaussian {
  Vector mean;
  Vector log_var;

  static DiagonalGaussian fit(const Matrix& y) {
    require(y.rows() >= 2, "DiagonalGaussian::fit: need at least two rows");
    DiagonalGaussian g;
    g.mean = y.colwise().mean().transpose();
    g.log_var.resize(y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double var = (y.col(j).array() - g.mean[j]).square().mean();
      g.log_var[j] = std::clamp(std::log(var), kLogVarMin, kLogVarMax);
    }
    return g;
  }

  Vector log_prob_rows(const Matrix& y) const {
    require(y.cols() == mean.size(), "DiagonalGaussian: dimension mismatch");
    Vector out = Vector::Zero(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index j = 0; j < y.cols(); ++j) out[i] += gaussian_log_density(y(i, j), mean[j], log_var[j]);
    return out;
  }
};

// r(y|x) = N(y | mu(x), diag exp(logvar(x))), one MLP emitting [mu, logvar].
// The log-variance is clamped to [-10, 10].
struct ConditionalGaussian {
  MlpSpec net;
  std::vector<double> params;
  int x_dim = 0;
  int y_dim = 0;

  static ConditionalGaussian make(int dx, int dy, const std::vector<int>& hidden, std::uint64_t seed) {
    ConditionalGaussian c;
    c.x_dim = dx;
    c.y_dim = dy;
    c.net = make_mlp(dx, hidden, 2 * dy, seed);
    c.params = init_params(c.net);
    return c;
  }

  struct Moments {
    Matrix mu;
    Matrix log_var;
    Matrix raw_log_var;
  };

  Moments moments(const Matrix& x, MlpCache* cache = nullptr) const {
    require(x.cols() == x_dim, "ConditionalGaussian: x dimension mismatch");
    const Matrix out = mlp_forward(net, params, x, cache);
    Moments m;
    m.mu = out.leftCols(y_dim);
    m.raw_log_var = out.rightCols(y_dim);
    m.log_var = m.raw_log_var.unaryExpr([](double v) { return std::clamp(v, kLogVarMin, kLogVarMax); });
    return m;
  }

  Vector log_prob_rows(const Matrix& x, const Matrix& y) const {
    require(x.rows() == y.rows() && y.cols() == y_dim, "ConditionalGaussian::log_prob: dimension mismatch");
    const Moments m = moments(x);
    Vector out = Vector::Zero(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < y_dim; ++j) out[i] += gaussian_log_density(y(i, j), m.mu(i, j), m.log_var(i, j));
    return out;
  }

  double log_prob(std::span<const double> x, std::span<const double> y) const {
    require(static_cast<int>(x.size()) == x_dim && static_cast<int>(y.size()) == y_dim,
            "cond_gauss_log_prob: dimension mismatch");
    const Matrix xm = Eigen::Map<const Matrix>(x.data(), 1, x_dim);
    const Matrix ym = Eigen::Map<const Matrix>(y.data(), 1, y_dim);
    return log_prob_rows(xm, ym)[0];
  }

  // `draws` reparameterized samples mu + sigma * eta per row of x; row
  // i * draws + d belongs to x_i.
  Matrix sample(const Matrix& x, Rng& rng, int draws = 1) const {
    const Moments m = moments(x);
    Matrix out(x.rows() * draws, y_dim);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int d = 0; d < draws; ++d)
        for (Eigen::Index j = 0; j < y_dim; ++j)
          out(i * draws + d, j) = m.mu(i, j) + std::exp(0.5 * m.log_var(i, j)) * rng.normal();
    return out;
  }

  // One Adam step on the mean negative log-likelihood; returns the NLL
  // before the step.
  double train_step(const SampleBatch& batch, AdamState& adam) {
    require(batch.size() > 0, "cond_gauss_train_step: empty batch");
    MlpCache cache;
    const Moments m = moments(batch.x, &cache);
    const Eigen::Index b = batch.size();
    const double inv_b = 1.0 / static_cast<double>(b);
    Matrix d_out(b, 2 * y_dim);
    double nll = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = 0; j < y_dim; ++j) {
        const double lv = m.log_var(i, j);
        const double inv_var = std::exp(-lv);
        const double diff = batch.y(i, j) - m.mu(i, j);
        nll -= gaussian_log_density(batch.y(i, j), m.mu(i, j), lv);
        d_out(i, j) = -diff * inv_var * inv_b;
        const bool live = m.raw_log_var(i, j) >= kLogVarMin && m.raw_log_var(i, j) <= kLogVarMax;
        d_out(i, y_dim + j) = live ? 0.5 * (1.0 - diff * diff * inv_var) * inv_b : 0.0;
      }
    }
    nll *= inv_b;
    if (!std::isfinite(nll)) throw TrainingAbort("cond_gauss_train_step: non-finite negative log-likelihood");
    std::vector<double> grad(params.size(), 0.0);
    mlp_backward(net, params, cache, d_out, grad, false);
    adam_step(adam, params, grad);
    return nll;
  }

  double mean_nll(const SampleBatch& batch) const { return -log_prob_rows(batch.x, batch.y).mean(); }
};

// BA: E[log r(y|x)] + H(y), with H(y) from a benchmark oracle.
inline double ba_ir_estimate(const ConditionalGaussian& r, const SampleBatch& batch, double h_y) {
  return r.log_prob_rows(batch.x, batch.y).mean() + h_y;
}

// DoE: E[log r(y|x) - log s(y)].
inline double doe_ir_estimate(const ConditionalGaussian& r, const DiagonalGaussian& s, const SampleBatch& batch) {
  return (r.log_prob_rows(batch.x, batch.y) - s.log_prob_rows(batch.y)).mean();
}

// Predictive Quantization: classifier s_psi(code | y) over the codes of a
// fixed quantizer. I_r = E[log s_psi(Q(x)|y)] + H(Q(x)).
struct PqModel {
  Quantizer quantizer;
  MlpSpec classifier;
  std::vector<double> params;

  static PqModel make(Quantizer q, int y_dim, std::uint64_t seed, const std::vector<int>& hidden = {128}) {
    PqModel m;
    m.quantizer = std::move(q);
    m.classifier = make_mlp(y_dim, hidden, m.quantizer.n_codes, seed);
    m.params = init_params(m.classifier);
    return m;
  }

  int n_codes() const { return quantizer.n_codes; }
  double code_entropy() const { return quantizer.code_entropy(); }

  // Row-wise log-softmax over codes.
  Matrix log_probs(const Matrix& y, MlpCache* cache = nullptr) const {
    Matrix logits = mlp_forward(classifier, params, y, cache);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double m = logits.row(i).maxCoeff();
      const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
      logits.row(i).array() -= lse;
    }
    return logits;
  }

  double log_prob(int code, std::span<const double> y) const {
    require(code >= 0 && code < n_codes(), "pq_classifier_log_prob: code out of range");
    const Matrix ym = Eigen::Map<const Matrix>(y.data(), 1, static_cast<Eigen::Index>(y.size()));
    return log_probs(ym)(0, code);
  }

  double mean_log_prob(const SampleBatch& batch) const {
    require(batch.codes.size() == static_cast<std::size_t>(batch.size()), "PqModel: batch carries no codes");
    const Matrix lp = log_probs(batch.y);
    double s = 0.0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      const int c = batch.codes[static_cast<std::size_t>(i)];
      require(c >= 0 && c < n_codes(), "PqModel: code out of range");
      s += lp(i, c);
    }
    return s / static_cast<double>(batch.size());
  }

  // One Adam step on the cross-entropy of the batch codes; returns the mean
  // log-probability before the step.
  double train_step(const SampleBatch& batch, AdamState& adam) {
    require(batch.codes.size() == static_cast<std::size_t>(batch.size()), "PqModel: batch carries no codes");
    MlpCache cache;
    const Matrix lp = log_probs(batch.y, &cache);
    const Eigen::Index b = batch.size();
    Matrix d_out = lp.array().exp().matrix() / static_cast<double>(b);
    double mean_lp = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const int c = batch.codes[static_cast<std::size_t>(i)];
      mean_lp += lp(i, c);
      d_out(i, c) -= 1.0 / static_cast<double>(b);
    }
    mean_lp /= static_cast<double>(b);
    if (!std::isfinite(mean_lp)) throw TrainingAbort("pq_train_step: non-finite classifier log-probability");
    std::vector<double> grad(params.size(), 0.0);
    mlp_backward(classifier, params, cache, d_out, grad, false);
    adam_step(adam, params, grad);
    return mean_lp;
  }
};

inline double pq_ir_estimate(const PqModel& m, const SampleBatch& batch) {
  return m.mean_log_prob(batch) + m.code_entropy();
}

enum class ProposalKind { marginal, cond_gaussian, pq };
enum class GaussianIr { ba, doe };

inline std::string to_string(ProposalKind k) {
  switch (k) {
    case ProposalKind::marginal: return "none";
    case ProposalKind::cond_gaussian: return "cond-gaussian";
    case ProposalKind::pq: return "pq";
  }
  return "?";
}

inline ProposalKind proposal_from_string(const std::string& s) {
  if (s == "none" || s == "marginal") return ProposalKind::marginal;
  if (s == "cond-gaussian") return ProposalKind::cond_gaussian;
  if (s == "pq") return ProposalKind::pq;
  throw ConfigError("unknown proposal '" + s + "' (none, cond-gaussian, pq)");
}

// The normalized proposal r(x, y) and its generative bound I_r.
struct ProposalModel {
  ProposalKind kind = ProposalKind::marginal;
  std::optional<ConditionalGaussian> cond;
  GaussianIr gaussian_ir = GaussianIr::doe;
  std::optional<DiagonalGaussian> marginal;   // DoE
  std::optional<double> known_marginal_entropy;  // BA
  std::optional<PqModel> pq;

  static ProposalModel marginal_product() { return {}; }

  static ProposalModel conditional_gaussian(ConditionalGaussian c, const Matrix& y_data, GaussianIr ir,
                                            std::optional<double> h_y = std::nullopt) {
    ProposalModel p;
    p.kind = ProposalKind::cond_gaussian;
    p.cond = std::move(c);
    p.gaussian_ir = ir;
    if (ir == GaussianIr::doe) p.marginal = DiagonalGaussian::fit(y_data);
    if (ir == GaussianIr::ba) {
      require(h_y.has_value(), "ProposalModel: BA needs the marginal entropy H(y)");
      p.known_marginal_entropy = h_y;
    }
    return p;
  }

  static ProposalModel predictive_quantization(PqModel m) {
    ProposalModel p;
    p.kind = ProposalKind::pq;
    p.pq = std::move(m);
    return p;
  }

  double ir_estimate(const SampleBatch& batch) const {
    switch (kind) {
      case ProposalKind::marginal: return 0.0;
      case ProposalKind::cond_gaussian:
        return gaussian_ir == GaussianIr::ba ? ba_ir_estimate(*cond, batch, *known_marginal_entropy)
                                             : doe_ir_estimate(*cond, *marginal, batch);
      case ProposalKind::pq: return pq_ir_estimate(*pq, batch);
    }
    return 0.0;
  }

  std::size_t param_count() const {
    if (kind == ProposalKind::cond_gaussian) return cond->params.size();
    if (kind == ProposalKind::pq) return pq->params.size();
    return 0;
  }

  std::span<const double> params() const {
    if (kind == ProposalKind::cond_gaussian) return cond->params;
    if (kind == ProposalKind::pq) return pq->params;
    return {};
  }

  // One step on the proposal's own objective. No-op for the marginal
  // product, which has no parameters.
  double train_step(const SampleBatch& batch, AdamState& adam) {
    if (kind == ProposalKind::cond_gaussian) return cond->train_step(batch, adam);
    if (kind == ProposalKind::pq) return pq->train_step(batch, adam);
    return 0.0;
  }
};

}  // namespace mibench
