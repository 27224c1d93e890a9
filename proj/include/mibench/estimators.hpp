#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/critic.hpp"
#include "mibench/errors.hpp"
#include "mibench/tape.hpp"

namespace mibench {

enum class EstimatorKind { nwj, mine, infonce, js, smile, interp };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::nwj: return "nwj";
    case EstimatorKind::mine: return "mine";
    case EstimatorKind::infonce: return "infonce";
    case EstimatorKind::js: return "js";
    case EstimatorKind::smile: return "smile";
    case EstimatorKind::interp: return "nwj-infonce";
  }
  return "?";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "nwj") return EstimatorKind::nwj;
  if (s == "mine") return EstimatorKind::mine;
  if (s == "infonce") return EstimatorKind::infonce;
  if (s == "js") return EstimatorKind::js;
  if (s == "smile") return EstimatorKind::smile;
  if (s == "nwj-infonce" || s == "interp") return EstimatorKind::interp;
  throw ConfigError("unknown estimator '" + s + "' (nwj, mine, infonce, js, smile, nwj-infonce)");
}

inline const std::vector<EstimatorKind>& all_estimators() {
  static const std::vector<EstimatorKind> k{EstimatorKind::nwj, EstimatorKind::mine, EstimatorKind::infonce,
                                            EstimatorKind::js, EstimatorKind::smile, EstimatorKind::interp};
  return k;
}

// InfoNCE pairs every x_i with every y_j of its batch (including j = i).
inline bool uses_in_batch_negatives(EstimatorKind k) { return k == EstimatorKind::infonce; }

struct EstimatorParams {
  double tau = 5.0;
  double alpha = 0.5;
  double ema_decay = 0.99;
  bool appendix_b_literal = false;  // NWJ without the +1 constant
  double score_clip = 50.0;

  void validate() const {
    require(tau > 0.0, "EstimatorParams: tau must be positive");
    require(alpha >= 0.0 && alpha <= 1.0, "EstimatorParams: alpha must lie in [0, 1]");
    require(ema_decay >= 0.0 && ema_decay < 1.0, "EstimatorParams: ema decay must lie in [0, 1)");
    require(score_clip > 0.0, "EstimatorParams: score clip must be positive");
  }
};

struct Diagnostics {
  long long clamped_scores = 0;
  double last_max_score = 0.0;
  double last_min_score = 0.0;
};

// Bias-corrected exponential moving average of the MINE partition term.
struct EmaState {
  double decay = 0.99;
  double average = 0.0;
  long long updates = 0;

  explicit EmaState(double d = 0.99) : decay(d) {}

  void update(double v) {
    average = decay * average + (1.0 - decay) * v;
    ++updates;
  }

  double value() const {
    require(updates > 0, "EmaState: no updates yet");
    return average / (1.0 - std::pow(decay, static_cast<double>(updates)));
  }
};

namespace detail {

inline double log_mean_exp(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s / static_cast<double>(n));
}

inline void check_scores(const Vector& joint, const Matrix& neg) {
  require(joint.size() > 0, "estimator: empty batch");
  require(neg.rows() == joint.size() && neg.cols() > 0, "estimator: need K >= 1 proposal scores per joint row");
}

}  // namespace detail

// Score-level evaluation formulas. `joint` holds f(x_i, y_i) and `neg` the
// B x K proposal scores f(x_i, y'_ij).

inline double dv_value(const Vector& joint, const Matrix& neg) {
  detail::check_scores(joint, neg);
  return joint.mean() - detail::log_mean_exp(neg.data(), static_cast<std::size_t>(neg.size()));
}

inline double mine_value(const Vector& joint, const Matrix& neg) { return dv_value(joint, neg); }

inline double nwj_value(const Vector& joint, const Matrix& neg, bool appendix_b_literal = false) {
  detail::check_scores(joint, neg);
  return joint.mean() + (appendix_b_literal ? 0.0 : 1.0) - neg.array().exp().mean();
}

inline double infonce_value(const Vector& joint, const Matrix& neg) {
  detail::check_scores(joint, neg);
  require(joint.size() >= 2, "infonce: batch size must be at least 2");
  double total = 0.0;
  for (Eigen::Index i = 0; i < neg.rows(); ++i)
    total += joint[i] - detail::log_mean_exp(neg.row(i).data(), static_cast<std::size_t>(neg.cols()));
  return total / static_cast<double>(joint.size());
}

inline double js_loss_value(const Vector& joint, const Matrix& neg) {
  detail::check_scores(joint, neg);
  const double a = joint.unaryExpr([](double g) { return softplus(-g); }).mean();
  const double b = neg.unaryExpr([](double g) { return softplus(g); }).mean();
  return a + b;
}

inline double smile_value(const Vector& joint, const Matrix& neg, double tau) {
  detail::check_scores(joint, neg);
  require(tau > 0.0, "smile: tau must be positive");
  const Matrix clipped = neg.unaryExpr([tau](double g) { return std::clamp(g, -tau, tau); });
  return joint.mean() - detail::log_mean_exp(clipped.data(), static_cast<std::size_t>(clipped.size()));
}

inline double interp_value(const Vector& joint, const Matrix& neg, double alpha) {
  detail::check_scores(joint, neg);
  require(alpha >= 0.0 && alpha <= 1.0, "interp: alpha must lie in [0, 1]");
  const Eigen::Index b = neg.rows();
  const Eigen::Index k = neg.cols();
  double first = 0.0;
  double second = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mean_e = neg.row(i).array().exp().mean();
    const double base = alpha + (1.0 - alpha) * mean_e;
    first += joint[i] - std::log(base);
    second += neg.row(i).array().exp().sum() / base;
  }
  return first / static_cast<double>(b) - second / static_cast<double>(b * k) + 1.0;
}

// The reported L_f value. JS is reported with the NWJ formula.
inline double estimate_value(EstimatorKind kind, const EstimatorParams& p, const Vector& joint, const Matrix& neg) {
  switch (kind) {
    case EstimatorKind::nwj:
    case EstimatorKind::js: return nwj_value(joint, neg, p.appendix_b_literal);
    case EstimatorKind::mine: return mine_value(joint, neg);
    case EstimatorKind::infonce: return infonce_value(joint, neg);
    case EstimatorKind::smile: return smile_value(joint, neg, p.tau);
    case EstimatorKind::interp: return interp_value(joint, neg, p.alpha);
  }
  return 0.0;
}

// Training loss (to minimize) and its gradient with respect to the scores,
// together with the evaluation value on the same scores.
struct Objective {
  double value = 0.0;
  double loss = 0.0;
  Vector d_joint;
  Matrix d_neg;
};

inline Objective estimator_objective(EstimatorKind kind, const EstimatorParams& p, const ScoreTable& scores,
                                     EmaState* ema = nullptr, Diagnostics* diag = nullptr) {
  detail::check_scores(scores.joint, scores.negatives);
  const Eigen::Index b = scores.joint.size();
  const Eigen::Index k = scores.negatives.cols();
  const double clip = p.score_clip;

  Vector joint = scores.joint;
  Matrix neg = scores.negatives;
  long long clamped = 0;
  auto clamp_all = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double& v = m.data()[i];
      if (!std::isfinite(v)) throw TrainingAbort("estimator: non-finite critic score");
      if (v > clip || v < -clip) {
        ++clamped;
        v = std::clamp(v, -clip, clip);
      }
    }
  };
  clamp_all(joint);
  clamp_all(neg);
  if (diag) {
    diag->clamped_scores += clamped;
    diag->last_max_score = std::max(scores.joint.maxCoeff(), scores.negatives.maxCoeff());
    diag->last_min_score = std::min(scores.joint.minCoeff(), scores.negatives.minCoeff());
  }

  Objective out;
  out.value = estimate_value(kind, p, joint, neg);

  Tape tape;
  tape.reserve(static_cast<std::size_t>(8 * (b + b * k)), static_cast<std::size_t>(12 * (b + b * k)));
  std::vector<Var> jv = tape.leaves(std::span<const double>(joint.data(), static_cast<std::size_t>(b)));
  std::vector<Var> nv = tape.leaves(std::span<const double>(neg.data(), static_cast<std::size_t>(b * k)));
  Var loss;
  switch (kind) {
    case EstimatorKind::nwj: {
      std::vector<Var> e;
      e.reserve(nv.size());
      for (const Var& v : nv) e.push_back(exp(v));
      loss = mean(e) - mean(jv) - (p.appendix_b_literal ? 0.0 : 1.0);
      break;
    }
    case EstimatorKind::mine: {
      const double batch_mean = neg.array().exp().mean();
      double denom = batch_mean;
      if (ema) {
        ema->update(batch_mean);
        denom = ema->value();
      }
      std::vector<Var> e;
      e.reserve(nv.size());
      for (const Var& v : nv) e.push_back(exp(v));
      loss = mean(e) / denom - mean(jv);
      break;
    }
    case EstimatorKind::infonce: {
      std::vector<Var> terms;
      terms.reserve(static_cast<std::size_t>(b));
      for (Eigen::Index i = 0; i < b; ++i) {
        std::span<const Var> row(nv.data() + i * k, static_cast<std::size_t>(k));
        terms.push_back(log_mean_exp(row) - jv[static_cast<std::size_t>(i)]);
      }
      loss = mean(terms);
      break;
    }
    case EstimatorKind::js:
    case EstimatorKind::smile: {
      std::vector<Var> a;
      a.reserve(jv.size());
      for (const Var& v : jv) a.push_back(softplus(-v));
      std::vector<Var> c;
      c.reserve(nv.size());
      for (const Var& v : nv) c.push_back(softplus(v));
      loss = mean(a) + mean(c);
      break;
    }
    case EstimatorKind::interp: {
      std::vector<Var> first;
      std::vector<Var> second;
      first.reserve(static_cast<std::size_t>(b));
      second.reserve(static_cast<std::size_t>(b * k));
      for (Eigen::Index i = 0; i < b; ++i) {
        std::vector<Var> e;
        e.reserve(static_cast<std::size_t>(k));
        for (Eigen::Index j = 0; j < k; ++j) e.push_back(exp(nv[static_cast<std::size_t>(i * k + j)]));
        const Var base = mean(e) * (1.0 - p.alpha) + p.alpha;
        first.push_back(jv[static_cast<std::size_t>(i)] - log(base));
        for (const Var& ej : e) second.push_back(ej / base);
      }
      loss = mean(second) - mean(first) - 1.0;
      break;
    }
  }
  tape.backward(loss);
  out.loss = loss.value();
  if (!std::isfinite(out.loss)) throw TrainingAbort("estimator: non-finite training loss");
  // Straight-through clamp: the gradient taken at the clamped score is passed
  // on to the raw score, so a critic pushed past the clip can come back.
  out.d_joint.resize(b);
  out.d_neg.resize(b, k);
  for (Eigen::Index i = 0; i < b; ++i) out.d_joint[i] = jv[static_cast<std::size_t>(i)].grad();
  for (Eigen::Index i = 0; i < b * k; ++i) out.d_neg.data()[i] = nv[static_cast<std::size_t>(i)].grad();
  return out;
}

// Critic-level estimates on a batch and its proposal pairs.

inline double dv_estimate(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  return dv_value(s.joint, s.negatives);
}

inline double nwj_estimate(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal,
                           bool appendix_b_literal = false) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  return nwj_value(s.joint, s.negatives, appendix_b_literal);
}

inline double mine_estimate(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal,
                            EmaState& ema) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  ema.update(s.negatives.array().exp().mean());
  return mine_value(s.joint, s.negatives);
}

// In-batch negatives: every y_j of the batch scores against every x_i.
inline NegativeSet in_batch_negatives(const SampleBatch& batch) {
  NegativeSet n;
  n.y = batch.y;
  n.pool_is_batch = true;
  const Eigen::Index b = batch.size();
  n.index.resize(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) n.index(i, j) = static_cast<int>(j);
  return n;
}

inline double infonce_estimate(const CriticModel& c, const SampleBatch& batch) {
  require(batch.size() >= 2, "infonce_estimate: batch size must be at least 2");
  const ScoreTable s = critic_scores(c, batch, in_batch_negatives(batch));
  return infonce_value(s.joint, s.negatives);
}

inline double js_train_loss(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  return js_loss_value(s.joint, s.negatives);
}

inline double smile_estimate(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal,
                             double tau = 5.0) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  return smile_value(s.joint, s.negatives, tau);
}

inline double interpolated_estimate(const CriticModel& c, const SampleBatch& joint, const NegativeSet& proposal,
                                    double alpha = 0.5) {
  const ScoreTable s = critic_scores(c, joint, proposal);
  return interp_value(s.joint, s.negatives, alpha);
}

}  // namespace mibench
