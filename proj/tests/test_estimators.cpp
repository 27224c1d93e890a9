#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mibench/critic.hpp"
#include "mibench/discrete.hpp"
#include "mibench/estimators.hpp"

using namespace mibench;

namespace {

// The 4-outcome toy: outcomes (0,0), (0,1), (1,0), (1,1).
const double kP[4] = {0.4, 0.1, 0.1, 0.4};
const double kR[4] = {0.25, 0.25, 0.25, 0.25};

double toy_kl() {
  double kl = 0.0;
  for (int i = 0; i < 4; ++i) kl += kP[i] * std::log(kP[i] / kR[i]);
  return kl;
}

// Scores laid out so that batch averages are exact expectations: the joint
// rows replicate each outcome in proportion to p (weights 4:1:1:4 out of 10)
// and every proposal row lists the four outcomes once (r uniform).
ScoreTable toy_scores(const double f[4]) {
  const int reps[4] = {4, 1, 1, 4};
  ScoreTable s;
  s.joint.resize(10);
  s.negatives.resize(10, 4);
  int row = 0;
  for (int o = 0; o < 4; ++o)
    for (int r = 0; r < reps[o]; ++r) s.joint[row++] = f[o];
  for (int i = 0; i < 10; ++i)
    for (int o = 0; o < 4; ++o) s.negatives(i, o) = f[o];
  return s;
}

ScoreTable random_scores(Eigen::Index b, Eigen::Index k, Rng& rng, double scale = 1.0) {
  ScoreTable s;
  s.joint.resize(b);
  s.negatives.resize(b, k);
  for (Eigen::Index i = 0; i < b; ++i) s.joint[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < s.negatives.size(); ++i) s.negatives.data()[i] = scale * rng.normal();
  return s;
}

SampleBatch random_batch(Eigen::Index b, int dx, int dy, Rng& rng) {
  SampleBatch s;
  s.x.resize(b, dx);
  s.y.resize(b, dy);
  for (Eigen::Index i = 0; i < s.x.size(); ++i) s.x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < s.y.size(); ++i) s.y.data()[i] = rng.normal();
  return s;
}

NegativeSet shuffled(const SampleBatch& b, Eigen::Index k, Rng& rng) {
  NegativeSet n;
  n.y = b.y;
  n.pool_is_batch = true;
  n.index.resize(b.size(), k);
  for (Eigen::Index i = 0; i < b.size(); ++i)
    for (Eigen::Index j = 0; j < k; ++j) n.index(i, j) = static_cast<int>(rng.index(static_cast<std::size_t>(b.size())));
  return n;
}

// Nested-loop forward pass.
std::vector<double> dense(const MlpSpec& s, std::span<const double> p, std::vector<double> h) {
  for (std::size_t l = 0; l < s.layers(); ++l) {
    const int in = s.widths[l], out = s.widths[l + 1];
    const std::size_t off = s.layer_offset(l);
    std::vector<double> z(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = p[off + static_cast<std::size_t>(in) * out + o];
      for (int i = 0; i < in; ++i) acc += p[off + static_cast<std::size_t>(o) * in + i] * h[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = l + 1 == s.layers() ? acc : std::max(acc, 0.0);
    }
    h = z;
  }
  return h;
}

double training_loss(EstimatorKind kind, const EstimatorParams& p, const ScoreTable& s) {
  return estimator_objective(kind, p, s).loss;
}

}  // namespace

TEST(Critic, ZeroParametersScoreZero) {
  Rng rng(1);
  for (auto c : {CriticModel::joint(3, 2, {16, 8}, 1), CriticModel::separable(3, 2, {16, 8}, 4, 2)}) {
    std::fill(c.params.begin(), c.params.end(), 0.0);
    const auto b = random_batch(20, 3, 2, rng);
    EXPECT_EQ(critic_score_rows(c, b.x, b.y).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Critic, OrthogonalEmbeddingsScoreZero) {
  CriticModel c = CriticModel::separable(2, 2, {8}, 2, 3);
  std::fill(c.params.begin(), c.params.end(), 0.0);
  const std::size_t g_bias = c.g_net.layer_offset(1) + 8 * 2;
  const std::size_t h_bias = c.g_size() + c.h_net.layer_offset(1) + 8 * 2;
  c.params[g_bias] = 1.0;
  c.params[h_bias + 1] = 1.0;
  Rng rng(2);
  const auto b = random_batch(10, 2, 2, rng);
  EXPECT_EQ(critic_score_rows(c, b.x, b.y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Critic, MatchesHandForward) {
  Rng rng(3);
  const auto j = CriticModel::joint(3, 2, {7, 5}, 4);
  const auto s = CriticModel::separable(3, 2, {7, 5}, 4, 5);
  const auto b = random_batch(12, 3, 2, rng);
  const Vector rows_j = critic_score_rows(j, b.x, b.y);
  const Vector rows_s = critic_score_rows(s, b.x, b.y);
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    std::vector<double> x(b.x.row(i).data(), b.x.row(i).data() + 3);
    std::vector<double> y(b.y.row(i).data(), b.y.row(i).data() + 2);
    std::vector<double> xy = x;
    xy.insert(xy.end(), y.begin(), y.end());
    const double oj = dense(j.joint_net, j.params, xy)[0];
    const auto g = dense(s.g_net, s.g_params(), x);
    const auto h = dense(s.h_net, s.h_params(), y);
    double os = 0.0;
    for (int e = 0; e < 4; ++e) os += g[static_cast<std::size_t>(e)] * h[static_cast<std::size_t>(e)];
    EXPECT_NEAR(critic_score(j, x, y), oj, 1e-12);
    EXPECT_NEAR(rows_j[i], oj, 1e-12);
    EXPECT_NEAR(critic_score(s, x, y), os, 1e-12);
    EXPECT_NEAR(rows_s[i], os, 1e-12);
  }
  EXPECT_THROW(critic_score(j, std::vector<double>(2), std::vector<double>(2)), ContractViolation);
}

TEST(Critic, ScoreTableMatchesPairwiseScores) {
  Rng rng(4);
  for (auto c : {CriticModel::joint(2, 3, {9}, 6), CriticModel::separable(2, 3, {9}, 5, 7)}) {
    const auto b = random_batch(9, 2, 3, rng);
    NegativeSet n = shuffled(b, 4, rng);
    const ScoreTable t = critic_scores(c, b, n);
    NegativeSet general = n;
    general.pool_is_batch = false;
    const ScoreTable u = critic_scores(c, b, general);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      std::vector<double> x(b.x.row(i).data(), b.x.row(i).data() + 2);
      std::vector<double> y(b.y.row(i).data(), b.y.row(i).data() + 3);
      EXPECT_NEAR(t.joint[i], critic_score(c, x, y), 1e-12);
      for (Eigen::Index j = 0; j < 4; ++j) {
        const auto r = n.index(i, j);
        std::vector<double> yn(b.y.row(r).data(), b.y.row(r).data() + 3);
        EXPECT_NEAR(t.negatives(i, j), critic_score(c, x, yn), 1e-12);
        EXPECT_NEAR(u.negatives(i, j), t.negatives(i, j), 1e-12);
      }
    }
  }
}

TEST(Critic, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  for (auto c : {CriticModel::joint(2, 2, {6, 5}, 8), CriticModel::separable(2, 2, {6, 5}, 3, 9)}) {
    for (bool shared : {true, false}) {
      const auto b = random_batch(7, 2, 2, rng);
      NegativeSet n = shuffled(b, 3, rng);
      if (!shared) {
        n.pool_is_batch = false;
        n.y = random_batch(5, 2, 2, rng).y;
        for (Eigen::Index i = 0; i < n.index.size(); ++i) n.index.data()[i] = static_cast<int>(rng.index(5));
      }
      Vector wj(b.size());
      Matrix wn(b.size(), 3);
      for (Eigen::Index i = 0; i < wj.size(); ++i) wj[i] = rng.normal();
      for (Eigen::Index i = 0; i < wn.size(); ++i) wn.data()[i] = rng.normal();
      auto loss = [&](const CriticModel& m) {
        const ScoreTable t = critic_scores(m, b, n);
        return wj.dot(t.joint) + (wn.array() * t.negatives.array()).sum();
      };
      CriticCache cache;
      critic_scores(c, b, n, &cache);
      std::vector<double> grad(c.params.size(), 0.0);
      critic_backward(c, b, n, cache, wj, wn, grad);
      int checked = 0;
      for (std::size_t k = 0; k < c.params.size(); k += 3) {
        CriticModel hi = c, lo = c;
        const double h = 1e-6;
        hi.params[k] += h;
        lo.params[k] -= h;
        const double fd = (loss(hi) - loss(lo)) / (2 * h);
        EXPECT_NEAR(grad[k], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "param " << k;
        ++checked;
      }
      EXPECT_GT(checked, 10);
    }
  }
}

TEST(Critic, MakeConstant) {
  Rng rng(6);
  for (auto c : {CriticModel::joint(3, 3, {8}, 10), CriticModel::separable(3, 3, {8}, 4, 11)}) {
    c.make_constant(-2.5);
    const auto b = random_batch(10, 3, 3, rng);
    const ScoreTable t = critic_scores(c, b, shuffled(b, 4, rng));
    EXPECT_TRUE((t.joint.array() == -2.5).all());
    EXPECT_TRUE((t.negatives.array() == -2.5).all());
  }
}

TEST(EstimatorNames, RoundTrip) {
  for (auto k : all_estimators()) EXPECT_EQ(estimator_from_string(to_string(k)), k);
  EXPECT_EQ(estimator_from_string("interp"), EstimatorKind::interp);
  EXPECT_THROW(estimator_from_string("cpc"), ConfigError);
  EXPECT_EQ(all_estimators().size(), 6u);
}

TEST(Enumeration, OptimalCriticRecoversKl) {
  const double kl = toy_kl();
  EXPECT_NEAR(kl, 0.1927, 5e-5);
  double f[4];
  for (int i = 0; i < 4; ++i) f[i] = std::log(kP[i] / kR[i]);
  const ScoreTable s = toy_scores(f);
  EXPECT_NEAR(dv_value(s.joint, s.negatives), kl, 1e-12);
  EXPECT_NEAR(mine_value(s.joint, s.negatives), kl, 1e-12);
  EXPECT_NEAR(nwj_value(s.joint, s.negatives), kl, 1e-12);
  Table p(2, 2), r(2, 2), ft(2, 2);
  p << 0.4, 0.1, 0.1, 0.4;
  r.setConstant(0.25);
  ft << f[0], f[1], f[2], f[3];
  EXPECT_NEAR(dv_exact(p, r, ft), kl, 1e-12);
  EXPECT_NEAR(nwj_exact(p, r, ft), kl, 1e-12);
}

TEST(Enumeration, DvIsALowerBound) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    double f[4];
    for (double& v : f) v = 2.0 * rng.normal();
    const ScoreTable s = toy_scores(f);
    EXPECT_LE(dv_value(s.joint, s.negatives), toy_kl() + 1e-12);
    EXPECT_LE(nwj_value(s.joint, s.negatives), dv_value(s.joint, s.negatives) + 1e-12);
  }
}

TEST(Nwj, ConstantCritic) {
  for (double c : {-3.0, -0.5, 0.0, 0.7, 2.0}) {
    const ScoreTable s{Vector::Constant(8, c), Matrix::Constant(8, 3, c)};
    const double v = nwj_value(s.joint, s.negatives);
    EXPECT_NEAR(v, c + 1.0 - std::exp(c), 1e-12);
    EXPECT_LE(v, 0.0);
  }
  const ScoreTable z{Vector::Zero(8), Matrix::Zero(8, 3)};
  EXPECT_EQ(nwj_value(z.joint, z.negatives), 0.0);
  EXPECT_EQ(nwj_value(z.joint, z.negatives, true), -1.0);
}

TEST(Mine, ConstantCritic) {
  for (double c : {-3.0, 0.0, 0.5, 2.0}) {
    const ScoreTable s{Vector::Constant(8, c), Matrix::Constant(8, 3, c)};
    EXPECT_EQ(mine_value(s.joint, s.negatives), 0.0);
  }
}

TEST(Mine, EmaTwoSteps) {
  EmaState ema(0.99);
  EXPECT_THROW(ema.value(), ContractViolation);
  const double d1 = 1.7, d2 = 0.4;
  ema.update(d1);
  EXPECT_NEAR(ema.value(), d1, 1e-14);
  ema.update(d2);
  const double raw = 0.99 * (0.01 * d1) + 0.01 * d2;
  EXPECT_NEAR(ema.value(), raw / (1.0 - 0.99 * 0.99), 1e-14);
}

TEST(Mine, TrainingGradientUsesEmaDenominator) {
  Rng rng(8);
  const ScoreTable s = random_scores(6, 4, rng);
  EstimatorParams p;
  EmaState ema(0.99);
  ema.update(3.0);
  const Objective o = estimator_objective(EstimatorKind::mine, p, s, &ema);
  const double batch_mean = s.negatives.array().exp().mean();
  const double denom = (0.99 * 0.01 * 3.0 + 0.01 * batch_mean) / (1.0 - 0.99 * 0.99);
  EXPECT_EQ(ema.updates, 2);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(o.d_joint[i], -1.0 / 6.0, 1e-15);
  for (Eigen::Index i = 0; i < s.negatives.size(); ++i)
    EXPECT_NEAR(o.d_neg.data()[i], std::exp(s.negatives.data()[i]) / (24.0 * denom), 1e-14);
  EXPECT_NEAR(o.value, mine_value(s.joint, s.negatives), 1e-14);
}

TEST(InfoNce, ConstantAndBound) {
  EXPECT_EQ(infonce_value(Vector::Zero(4), Matrix::Zero(4, 4)), 0.0);
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index b = 2 + static_cast<Eigen::Index>(rng.index(63));
    Matrix all(b, b);
    for (Eigen::Index i = 0; i < all.size(); ++i) all.data()[i] = 10.0 * rng.normal();
    all.diagonal().array() += 20.0;
    EXPECT_LE(infonce_value(all.diagonal(), all), std::log(static_cast<double>(b)) + 1e-9);
  }
  EXPECT_NEAR(std::log(64.0), 4.159, 5e-4);
}

TEST(InfoNce, TwoByTwoLimit) {
  for (double s : {5.0, 20.0, 40.0}) {
    Matrix m(2, 2);
    m << s, 0.0, 0.0, s;
    const double v = infonce_value(m.diagonal(), m);
    EXPECT_NEAR(v, std::log(2.0) - std::log1p(std::exp(-s)), 1e-12);
  }
  Matrix m(2, 2);
  m << 40, 0, 0, 40;
  EXPECT_NEAR(infonce_value(m.diagonal(), m), std::log(2.0), 1e-12);
}

TEST(InfoNce, CriticLevelUsesAllBatchPairs) {
  Rng rng(10);
  const auto c = CriticModel::separable(2, 2, {8}, 3, 12);
  const auto b = random_batch(6, 2, 2, rng);
  double oracle = 0.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    std::vector<double> x(b.x.row(i).data(), b.x.row(i).data() + 2);
    double s = 0.0;
    for (Eigen::Index j = 0; j < 6; ++j)
      s += std::exp(critic_score(c, x, std::vector<double>(b.y.row(j).data(), b.y.row(j).data() + 2)));
    oracle += critic_score(c, x, std::vector<double>(b.y.row(i).data(), b.y.row(i).data() + 2)) - std::log(s / 6.0);
  }
  EXPECT_NEAR(infonce_estimate(c, b), oracle / 6.0, 1e-12);
  EXPECT_THROW(infonce_estimate(c, random_batch(1, 2, 2, rng)), ContractViolation);
}

TEST(Js, LossAtZero) {
  EXPECT_NEAR(js_loss_value(Vector::Zero(5), Matrix::Zero(5, 2)), 2.0 * std::log(2.0), 1e-15);
}

TEST(Smile, Clipping) {
  EXPECT_EQ(smile_value(Vector::Zero(4), Matrix::Zero(4, 3), 5.0), 0.0);
  EXPECT_NEAR(smile_value(Vector::Constant(4, 7.0), Matrix::Constant(4, 3, 7.0), 5.0), 2.0, 1e-12);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const ScoreTable s = random_scores(8, 5, rng, 4.0);
    EXPECT_EQ(smile_value(s.joint, s.negatives, 1e300), mine_value(s.joint, s.negatives));
  }
  EXPECT_THROW(smile_value(Vector::Zero(4), Matrix::Zero(4, 3), 0.0), ContractViolation);
}

TEST(Interp, Endpoints) {
  Rng rng(12);
  EXPECT_EQ(interp_value(Vector::Zero(4), Matrix::Zero(4, 3), 0.5), 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const ScoreTable s = random_scores(8, 8, rng, 2.0);
    EXPECT_NEAR(interp_value(s.joint, s.negatives, 1.0), nwj_value(s.joint, s.negatives), 1e-12);
    Matrix all = s.negatives;
    all.diagonal() = s.joint;
    EXPECT_NEAR(interp_value(s.joint, all, 0.0), infonce_value(s.joint, all), 1e-9);
  }
}

TEST(Interp, HandFormula) {
  Vector j(2);
  j << 0.3, -0.2;
  Matrix n(2, 2);
  n << 0.1, -0.4, 0.5, 0.0;
  const double a = 0.5;
  double first = 0.0, second = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double base = a + (1 - a) * 0.5 * (std::exp(n(i, 0)) + std::exp(n(i, 1)));
    first += j[i] - std::log(base);
    second += (std::exp(n(i, 0)) + std::exp(n(i, 1))) / base;
  }
  EXPECT_NEAR(interp_value(j, n, a), first / 2 - second / 4 + 1, 1e-15);
}

TEST(Neutrality, ConstantCriticOnMarginalProposals) {
  EstimatorParams p;
  for (double k : {-3.0, 0.0, 0.5, 2.0}) {
    const ScoreTable s{Vector::Constant(16, k), Matrix::Constant(16, 16, k)};
    EXPECT_EQ(dv_value(s.joint, s.negatives), 0.0) << k;
    EXPECT_EQ(mine_value(s.joint, s.negatives), 0.0) << k;
    EXPECT_EQ(infonce_value(s.joint, s.negatives), 0.0) << k;
    EXPECT_EQ(smile_value(s.joint, s.negatives, p.tau), 0.0) << k;
  }
  // The NWJ family is neutral only at the critic that normalizes r.
  const ScoreTable z{Vector::Zero(16), Matrix::Zero(16, 16)};
  for (auto kind : all_estimators()) EXPECT_EQ(estimate_value(kind, p, z.joint, z.negatives), 0.0) << to_string(kind);
}

TEST(Shift, DvInvariantNwjNot) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const ScoreTable s = random_scores(10, 4, rng);
    for (double c : {-1.0, 0.3, 2.0}) {
      const Vector j = s.joint.array() + c;
      const Matrix n = s.negatives.array() + c;
      EXPECT_NEAR(dv_value(j, n), dv_value(s.joint, s.negatives), 1e-12);
      EXPECT_NE(nwj_value(j, n), nwj_value(s.joint, s.negatives));
    }
  }
}

TEST(Stability, LargeScoresStayFinite) {
  const ScoreTable s{Vector::Constant(4, 50.0), Matrix::Constant(4, 4, 50.0)};
  const ScoreTable t{Vector::Constant(4, -50.0), Matrix::Constant(4, 4, -50.0)};
  EstimatorParams p;
  for (auto kind : all_estimators()) {
    EXPECT_TRUE(std::isfinite(estimate_value(kind, p, s.joint, s.negatives)));
    EXPECT_TRUE(std::isfinite(estimate_value(kind, p, t.joint, t.negatives)));
  }
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  EstimatorParams p;
  for (auto kind : all_estimators()) {
    if (kind == EstimatorKind::mine) continue;
    const ScoreTable s = random_scores(5, 5, rng);
    const Objective o = estimator_objective(kind, p, s);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 5; ++i) {
      ScoreTable a = s, b = s;
      a.joint[i] += h;
      b.joint[i] -= h;
      EXPECT_NEAR(o.d_joint[i], (training_loss(kind, p, a) - training_loss(kind, p, b)) / (2 * h), 1e-7);
    }
    for (Eigen::Index i = 0; i < 25; ++i) {
      ScoreTable a = s, b = s;
      a.negatives.data()[i] += h;
      b.negatives.data()[i] -= h;
      EXPECT_NEAR(o.d_neg.data()[i], (training_loss(kind, p, a) - training_loss(kind, p, b)) / (2 * h), 1e-7);
    }
  }
}

TEST(Objective, LossesMatchValueFormulas) {
  Rng rng(15);
  EstimatorParams p;
  const ScoreTable s = random_scores(6, 6, rng);
  EXPECT_NEAR(estimator_objective(EstimatorKind::nwj, p, s).loss, -nwj_value(s.joint, s.negatives), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::infonce, p, s).loss, -infonce_value(s.joint, s.negatives), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::interp, p, s).loss, -interp_value(s.joint, s.negatives, 0.5), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::js, p, s).loss, js_loss_value(s.joint, s.negatives), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::smile, p, s).loss, js_loss_value(s.joint, s.negatives), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::js, p, s).value, nwj_value(s.joint, s.negatives), 1e-12);
  EXPECT_NEAR(estimator_objective(EstimatorKind::smile, p, s).value, smile_value(s.joint, s.negatives, 5.0), 1e-12);
}

TEST(Objective, ClampingCountsAndPassesGradientThrough) {
  ScoreTable s{Vector::Zero(3), Matrix::Zero(3, 2)};
  s.joint[1] = 75.0;
  s.negatives(2, 0) = -60.0;
  EstimatorParams p;
  Diagnostics d;
  const Objective o = estimator_objective(EstimatorKind::nwj, p, s, nullptr, &d);
  EXPECT_EQ(d.clamped_scores, 2);
  EXPECT_EQ(d.last_max_score, 75.0);
  EXPECT_EQ(d.last_min_score, -60.0);
  // Gradients are those of the clamped scores.
  EXPECT_NEAR(o.d_joint[1], -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(o.d_neg(2, 0), std::exp(-50.0) / 6.0, 1e-30);
  EXPECT_NEAR(o.d_neg(0, 0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(o.value, (50.0 / 3.0) + 1.0 - (5.0 + std::exp(-50.0)) / 6.0, 1e-12);
  s.joint[0] = std::nan("");
  EXPECT_THROW(estimator_objective(EstimatorKind::nwj, p, s), TrainingAbort);
}

TEST(Params, Validation) {
  EstimatorParams p;
  p.validate();
  p.tau = 0.0;
  EXPECT_THROW(p.validate(), ContractViolation);
  p = EstimatorParams{};
  p.alpha = 1.5;
  EXPECT_THROW(p.validate(), ContractViolation);
  EXPECT_THROW(dv_value(Vector(0), Matrix(0, 1)), ContractViolation);
}

TEST(Variance, PartitionBoundOnRandomCritics) {
  Rng rng(16);
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int nx = 2 + static_cast<int>(rng.index(4)), ny = 2 + static_cast<int>(rng.index(4));
    Table r(nx, ny), f(nx, ny);
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      r.data()[i] = rng.uniform() + 0.05;
      f.data()[i] = 2.0 * rng.normal();
    }
    r /= r.sum();
    double z = 0.0, m2 = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      z += r.data()[i] * std::exp(f.data()[i]);
      m2 += r.data()[i] * std::exp(2.0 * f.data()[i]);
    }
    double chi2 = -1.0, kl = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double q = r.data()[i] * std::exp(f.data()[i]) / z;
      chi2 += q * q / r.data()[i];
      kl += q * std::log(q / r.data()[i]);
    }
    const VarianceTerms t = variance_terms(r, f);
    EXPECT_NEAR(t.z, z, 1e-12 * z);
    EXPECT_NEAR(t.chi2, chi2, 1e-9 * std::max(1.0, chi2));
    EXPECT_NEAR(t.kl, kl, 1e-12);
    const double var = m2 - z * z;
    if (!(var >= z * z * chi2 * (1 - 1e-12) && z * z * chi2 >= z * z * (std::exp(kl) - 1.0) * (1 - 1e-12))) ++violations;
  }
  EXPECT_EQ(violations, 0);
}
