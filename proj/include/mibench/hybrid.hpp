#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mibench/adam.hpp"
#include "mibench/batch.hpp"
#include "mibench/critic.hpp"
#include "mibench/errors.hpp"
#include "mibench/estimators.hpp"
#include "mibench/proposals.hpp"
#include "mibench/rng.hpp"

namespace mibench {

// Row indices of the dataset grouped by quantization code.
struct CodeIndex {
  std::vector<std::vector<std::int64_t>> rows;  // per code
  std::vector<double> probabilities;            // empirical, over all rows
  std::vector<double> cumulative;               // over sampleable codes only

  static CodeIndex build(const std::vector<int>& codes, int n_codes) {
    require(n_codes >= 1, "CodeIndex: need at least one code");
    CodeIndex idx;
    idx.rows.resize(static_cast<std::size_t>(n_codes));
    for (std::size_t i = 0; i < codes.size(); ++i) {
      require(codes[i] >= 0 && codes[i] < n_codes, "CodeIndex: code out of range");
      idx.rows[static_cast<std::size_t>(codes[i])].push_back(static_cast<std::int64_t>(i));
    }
    idx.probabilities.resize(idx.rows.size());
    idx.cumulative.resize(idx.rows.size());
    double total = 0.0;
    for (std::size_t c = 0; c < idx.rows.size(); ++c) {
      idx.probabilities[c] = static_cast<double>(idx.rows[c].size()) / static_cast<double>(codes.size());
      if (idx.sampleable(static_cast<int>(c))) total += idx.probabilities[c];
      idx.cumulative[c] = total;
    }
    if (total <= 0.0)
      throw EstimationFailure("CodeIndex: every code has fewer than 2 rows; use fewer clusters");
    for (double& v : idx.cumulative) v /= total;
    return idx;
  }

  int n_codes() const { return static_cast<int>(rows.size()); }
  bool sampleable(int c) const { return rows[static_cast<std::size_t>(c)].size() >= 2; }

  int draw_code(Rng& rng) const {
    const double u = rng.uniform();
    for (std::size_t c = 0; c < cumulative.size(); ++c)
      if (u < cumulative[c] && sampleable(static_cast<int>(c))) return static_cast<int>(c);
    for (std::size_t c = cumulative.size(); c-- > 0;)
      if (sampleable(static_cast<int>(c))) return static_cast<int>(c);
    throw EstimationFailure("CodeIndex: no sampleable code");
  }
};

// Draws a code with its empirical probability, then B rows uniformly with
// replacement among the rows carrying that code.
inline SampleBatch sample_conditional_batch(const CodeIndex& index, const Dataset& data, int b, Rng& rng) {
  require(b >= 1, "sample_conditional_batch: batch size must be positive");
  const int code = index.draw_code(rng);
  const auto& pool = index.rows[static_cast<std::size_t>(code)];
  std::vector<std::int64_t> picks(static_cast<std::size_t>(b));
  for (auto& r : picks) r = pool[rng.index(pool.size())];
  SampleBatch out = take_rows(data, picks);
  out.codes.assign(static_cast<std::size_t>(b), code);
  return out;
}

// B i.i.d. joint rows (uniform with replacement).
inline SampleBatch sample_joint_batch(const Dataset& data, int b, Rng& rng) {
  require(b >= 1 && data.size() >= 1, "sample_joint_batch: empty request");
  std::vector<std::int64_t> picks(static_cast<std::size_t>(b));
  for (auto& r : picks) r = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(data.size())));
  return take_rows(data, picks);
}

// Pairs each x_i with K y-values taken from other rows j != i of the same
// batch. Without replacement the K rows are distinct, so K <= B - 1.
inline NegativeSet shuffle_negatives(const SampleBatch& batch, int k, Rng& rng, bool with_replacement = false) {
  const auto b = static_cast<int>(batch.size());
  require(k >= 1, "shuffle_negatives: K must be positive");
  require(b >= 2, "shuffle_negatives: need at least two rows");
  if (!with_replacement) require(k <= b - 1, "shuffle_negatives: K must be < B without replacement");
  if (!batch.codes.empty())
    for (int c : batch.codes) require(c == batch.codes.front(), "shuffle_negatives: batch mixes codes");
  NegativeSet n;
  n.y = batch.y;
  n.pool_is_batch = true;
  n.index.resize(b, k);
  std::vector<int> others(static_cast<std::size_t>(b - 1));
  for (int i = 0; i < b; ++i) {
    if (with_replacement) {
      for (int j = 0; j < k; ++j) {
        const int r = static_cast<int>(rng.index(static_cast<std::size_t>(b - 1)));
        n.index(i, j) = r < i ? r : r + 1;
      }
      continue;
    }
    for (int r = 0, o = 0; r < b; ++r)
      if (r != i) others[static_cast<std::size_t>(o++)] = r;
    for (int j = 0; j < k; ++j) {
      const auto pick = j + static_cast<int>(rng.index(static_cast<std::size_t>(b - 1 - j)));
      std::swap(others[static_cast<std::size_t>(j)], others[static_cast<std::size_t>(pick)]);
      n.index(i, j) = others[static_cast<std::size_t>(j)];
    }
  }
  return n;
}

// Decomposed estimate: total = generative + discriminative.
struct MIEstimate {
  double total = 0.0;
  double generative = 0.0;
  double discriminative = 0.0;
  long long n_joint = 0;
  long long n_proposal = 0;
};

inline MIEstimate make_estimate(double generative, double discriminative, long long b, long long k) {
  return {generative + discriminative, generative, discriminative, b, k};
}

// A proposal r and a critic f trained jointly. The critic objective sees
// proposal outputs only as data, and the proposal objective never touches
// critic parameters.
struct HybridEstimator {
  ProposalModel proposal;
  CriticModel critic;
  EstimatorKind estimator = EstimatorKind::smile;
  EstimatorParams params;
  int negatives = 0;  // 0: B - 1 shuffled rows (cond-gaussian: 16 draws)
  bool negatives_with_replacement = false;
  bool critic_frozen = false;
  AdamState critic_adam;
  AdamState proposal_adam;
  EmaState ema{0.99};
  Diagnostics diagnostics;
  long long steps = 0;

  HybridEstimator() = default;
  HybridEstimator(ProposalModel p, CriticModel c, EstimatorKind kind, EstimatorParams ep = {},
                  double learning_rate = 5e-4)
      : proposal(std::move(p)), critic(std::move(c)), estimator(kind), params(ep),
        critic_adam(critic.params.size(), learning_rate), proposal_adam(proposal.param_count(), learning_rate),
        ema(ep.ema_decay) {
    params.validate();
  }

  int effective_negatives(int b) const {
    if (negatives > 0) return negatives;
    return proposal.kind == ProposalKind::cond_gaussian ? 16 : b - 1;
  }
};

// Proposal pairs for a batch under the estimator's proposal.
inline NegativeSet proposal_negatives(const HybridEstimator& est, const SampleBatch& batch, Rng& rng) {
  const auto b = static_cast<int>(batch.size());
  const int k = est.effective_negatives(b);
  if (est.proposal.kind != ProposalKind::cond_gaussian) {
    if (uses_in_batch_negatives(est.estimator)) return in_batch_negatives(batch);
    const bool repl = est.negatives_with_replacement || k > b - 1;
    return shuffle_negatives(batch, k, rng, repl);
  }
  // Draws y' ~ r(y|x_i). The pool holds the batch y first so InfoNCE rows
  // can include their own positive.
  const Matrix draws = est.proposal.cond->sample(batch.x, rng, k);
  NegativeSet n;
  n.y.resize(b + draws.rows(), batch.y_dim());
  n.y << batch.y, draws;
  const bool with_positive = uses_in_batch_negatives(est.estimator);
  n.index.resize(b, k + (with_positive ? 1 : 0));
  for (int i = 0; i < b; ++i) {
    int col = 0;
    if (with_positive) n.index(i, col++) = i;
    for (int j = 0; j < k; ++j) n.index(i, col++) = b + i * k + j;
  }
  return n;
}

// Scores the batch, updates the critic from its own objective, records the
// generative part with the current proposal, then updates the proposal from
// its own objective.
inline MIEstimate hybrid_update(HybridEstimator& est, const SampleBatch& batch, Rng& rng) {
  const NegativeSet neg = proposal_negatives(est, batch, rng);
  CriticCache cache;
  const ScoreTable scores = critic_scores(est.critic, batch, neg, &cache);
  const Objective obj = estimator_objective(est.estimator, est.params, scores,
                                            est.critic_frozen ? nullptr : &est.ema, &est.diagnostics);
  if (!est.critic_frozen) {
    std::vector<double> grad(est.critic.params.size(), 0.0);
    critic_backward(est.critic, batch, neg, cache, obj.d_joint, obj.d_neg, grad);
    for (double g : grad)
      if (!std::isfinite(g)) throw TrainingAbort("critic gradient is not finite");
    adam_step(est.critic_adam, est.critic.params, grad);
  }
  const double ir = est.proposal.ir_estimate(batch);
  if (!std::isfinite(ir)) throw TrainingAbort("generative estimate is not finite");
  if (!std::isfinite(obj.value)) throw TrainingAbort("discriminative estimate is not finite");
  est.proposal.train_step(batch, est.proposal_adam);
  ++est.steps;
  return make_estimate(ir, obj.value, batch.size(), neg.k());
}

// Draws the batch (conditional on one code for PQ) and runs one update.
inline MIEstimate hybrid_step(HybridEstimator& est, const Dataset& data, const CodeIndex* index, int b, Rng& rng) {
  if (est.proposal.kind == ProposalKind::pq) {
    if (index == nullptr) throw ContractViolation("hybrid_step: PQ proposals need a code index");
    return hybrid_update(est, sample_conditional_batch(*index, data, b, rng), rng);
  }
  return hybrid_update(est, sample_joint_batch(data, b, rng), rng);
}

// Read-only evaluation of a frozen estimator over n_batches fresh batches.
inline std::vector<MIEstimate> evaluate(const HybridEstimator& est, const Dataset& data, const CodeIndex* index,
                                        int b, int n_batches, Rng& rng) {
  const bool pq = est.proposal.kind == ProposalKind::pq;
  if (pq && index == nullptr) throw ContractViolation("evaluate: PQ proposals need a code index");
  std::vector<MIEstimate> out;
  out.reserve(static_cast<std::size_t>(n_batches));
  for (int t = 0; t < n_batches; ++t) {
    const SampleBatch batch = pq ? sample_conditional_batch(*index, data, b, rng) : sample_joint_batch(data, b, rng);
    const NegativeSet neg = proposal_negatives(est, batch, rng);
    const ScoreTable s = critic_scores(est.critic, batch, neg);
    out.push_back(make_estimate(est.proposal.ir_estimate(batch),
                                estimate_value(est.estimator, est.params, s.joint, s.negatives), batch.size(),
                                neg.k()));
  }
  return out;
}

struct FitConfig {
  long long iterations = 100000;
  int batch_size = 64;
  int log_every = 100;
};

struct CurvePoint {
  long long step = 0;
  MIEstimate estimate;
};

// Trains proposal and critic jointly for `iterations` steps. `on_step` sees
// every step's estimate; the returned curve keeps every log_every-th.
inline std::vector<CurvePoint> two_step_fit(HybridEstimator& est, const Dataset& data, const CodeIndex* index,
                                            const FitConfig& cfg, Rng& rng,
                                            const std::function<void(long long, const MIEstimate&)>& on_step = {}) {
  require(cfg.iterations >= 1 && cfg.batch_size >= 2 && cfg.log_every >= 1, "two_step_fit: invalid configuration");
  std::vector<CurvePoint> curve;
  for (long long step = 0; step < cfg.iterations; ++step) {
    MIEstimate e;
    try {
      e = hybrid_step(est, data, index, cfg.batch_size, rng);
    } catch (const TrainingAbort& err) {
      char buf[256];
      std::snprintf(buf, sizeof buf, " (step %lld, %s critic, scores in [%.4g, %.4g], %lld clamped)", step,
                    to_string(est.estimator).c_str(), est.diagnostics.last_min_score,
                    est.diagnostics.last_max_score, est.diagnostics.clamped_scores);
      throw TrainingAbort(std::string(err.what()) + buf);
    }
    if (on_step) on_step(step, e);
    if (step % cfg.log_every == 0 || step + 1 == cfg.iterations) curve.push_back({step, e});
  }
  return curve;
}

}  // namespace mibench
