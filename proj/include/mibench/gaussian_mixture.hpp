#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/rng.hpp"

namespace mibench {

// Stacked benchmark: each of the n_stacks (x_d, y_d) pairs is an independent
// draw from a 4-component mixture of correlated bivariate normals with unit
// variances and correlation `rho`.
struct GaussianMixtureTask {
  int n_stacks = 5;
  double eps_mix = 1.0;
  double delta_mix = 2.0;
  double rho = 0.95;
  std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
  long long dataset_size = 100000;

  // Component means as (x, y) pairs.
  std::array<std::array<double, 2>, 4> means() const {
    const double e = eps_mix;
    const double d = delta_mix;
    return {{{e + d, -e + d}, {-e - d, e - d}, {e - d, -e - d}, {-e + d, e + d}}};
  }

  void validate() const {
    require(n_stacks >= 1, "GaussianMixtureTask: n_stacks must be >= 1");
    require(std::abs(rho) < 1.0, "GaussianMixtureTask: |rho| must be < 1");
    double s = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "GaussianMixtureTask: negative mixing weight");
      s += w;
    }
    require(std::abs(s - 1.0) < 1e-12, "GaussianMixtureTask: mixing weights must sum to 1");
  }
};

namespace detail {

inline double log_normal_1d(double v, double mean, double var) {
  const double d = v - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

inline double log_sum_exp4(const std::array<double, 4>& a) {
  double m = a[0];
  for (double v : a) m = std::max(m, v);
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// Per-pair log densities.
inline double gm_pair_log_joint(const GaussianMixtureTask& task, double x, double y) {
  const auto mu = task.means();
  const double r = task.rho;
  const double det = 1.0 - r * r;
  std::array<double, 4> terms{};
  for (int k = 0; k < 4; ++k) {
    const double dx = x - mu[k][0];
    const double dy = y - mu[k][1];
    const double q = (dx * dx - 2.0 * r * dx * dy + dy * dy) / det;
    terms[k] = std::log(task.weights[k]) - std::log(2.0 * std::numbers::pi * std::sqrt(det)) - 0.5 * q;
  }
  return detail::log_sum_exp4(terms);
}

// axis 0: marginal of x, axis 1: marginal of y.
inline double gm_pair_log_marginal(const GaussianMixtureTask& task, double v, int axis) {
  const auto mu = task.means();
  std::array<double, 4> terms{};
  for (int k = 0; k < 4; ++k) terms[k] = std::log(task.weights[k]) + detail::log_normal_1d(v, mu[k][axis], 1.0);
  return detail::log_sum_exp4(terms);
}

// log p(y | x) through the mixture posterior over components given x.
inline double gm_pair_log_conditional(const GaussianMixtureTask& task, double x, double y) {
  const auto mu = task.means();
  const double r = task.rho;
  std::array<double, 4> resp{};
  for (int k = 0; k < 4; ++k) resp[k] = std::log(task.weights[k]) + detail::log_normal_1d(x, mu[k][0], 1.0);
  const double norm = detail::log_sum_exp4(resp);
  std::array<double, 4> terms{};
  for (int k = 0; k < 4; ++k) {
    const double cond_mean = mu[k][1] + r * (x - mu[k][0]);
    terms[k] = resp[k] - norm + detail::log_normal_1d(y, cond_mean, 1.0 - r * r);
  }
  return detail::log_sum_exp4(terms);
}

inline SampleBatch gm_sample(const GaussianMixtureTask& task, long long n, Rng& rng) {
  task.validate();
  require(n >= 1, "gm_sample: n must be >= 1");
  const auto mu = task.means();
  const double s = std::sqrt(1.0 - task.rho * task.rho);
  SampleBatch b;
  b.x.resize(n, task.n_stacks);
  b.y.resize(n, task.n_stacks);
  for (long long i = 0; i < n; ++i) {
    for (int d = 0; d < task.n_stacks; ++d) {
      const double u = rng.uniform();
      int k = 0;
      double acc = task.weights[0];
      while (k < 3 && u >= acc) acc += task.weights[++k];
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      b.x(i, d) = mu[k][0] + z1;
      b.y(i, d) = mu[k][1] + task.rho * z1 + s * z2;
    }
  }
  return b;
}

struct GmLogDensities {
  std::vector<double> joint;
  std::vector<double> x;
  std::vector<double> y;
};

// Exact log p(x,y), log p(x), log p(y) per row, summed over stacks.
inline GmLogDensities gm_log_densities(const GaussianMixtureTask& task, const SampleBatch& batch) {
  require(batch.x_dim() == task.n_stacks && batch.y_dim() == task.n_stacks,
          "gm_log_densities: batch dimensions do not match the task");
  GmLogDensities out;
  const auto n = static_cast<std::size_t>(batch.size());
  out.joint.assign(n, 0.0);
  out.x.assign(n, 0.0);
  out.y.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < task.n_stacks; ++d) {
      const double xv = batch.x(static_cast<Eigen::Index>(i), d);
      const double yv = batch.y(static_cast<Eigen::Index>(i), d);
      out.joint[i] += gm_pair_log_joint(task, xv, yv);
      out.x[i] += gm_pair_log_marginal(task, xv, 0);
      out.y[i] += gm_pair_log_marginal(task, yv, 1);
    }
  }
  return out;
}

inline std::vector<double> gm_conditional_log_density(const GaussianMixtureTask& task, const SampleBatch& batch) {
  require(batch.x_dim() == task.n_stacks && batch.y_dim() == task.n_stacks,
          "gm_conditional_log_density: batch dimensions do not match the task");
  std::vector<double> out(static_cast<std::size_t>(batch.size()), 0.0);
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    for (int d = 0; d < task.n_stacks; ++d)
      out[static_cast<std::size_t>(i)] += gm_pair_log_conditional(task, batch.x(i, d), batch.y(i, d));
  return out;
}

struct OracleValue {
  double estimate = 0.0;
  double std_error = 0.0;
};

// Monte Carlo ground truth. The per-pair value is estimated from n_mc joint
// draws and scaled by n_stacks (stacks are independent), together with its
// standard error.
inline OracleValue gm_true_mi(const GaussianMixtureTask& task, long long n_mc, Rng& rng) {
  require(n_mc >= 10000, "gm_true_mi: n_mc must be >= 10000");
  GaussianMixtureTask pair = task;
  pair.n_stacks = 1;
  const SampleBatch draws = gm_sample(pair, n_mc, rng);
  double mean = 0.0;
  double m2 = 0.0;
  for (long long i = 0; i < n_mc; ++i) {
    const double xv = draws.x(i, 0);
    const double yv = draws.y(i, 0);
    const double pmi =
        gm_pair_log_joint(task, xv, yv) - gm_pair_log_marginal(task, xv, 0) - gm_pair_log_marginal(task, yv, 1);
    const double delta = pmi - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (pmi - mean);
  }
  const double var = m2 / static_cast<double>(n_mc - 1);
  return {task.n_stacks * mean, task.n_stacks * std::sqrt(var / static_cast<double>(n_mc))};
}

// Differential entropy of one 1-D marginal by adaptive Gauss-Kronrod
// quadrature over a range covering every component to 40 sigma.
inline double gm_dimension_entropy(const GaussianMixtureTask& task, int axis) {
  task.validate();
  const auto mu = task.means();
  double lo = mu[0][axis];
  double hi = mu[0][axis];
  for (const auto& m : mu) {
    lo = std::min(lo, m[axis]);
    hi = std::max(hi, m[axis]);
  }
  auto integrand = [&](double v) {
    const double lp = gm_pair_log_marginal(task, v, axis);
    return -std::exp(lp) * lp;
  };
  double err = 0.0;
  const double h = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, lo - 40.0, hi + 40.0, 30,
                                                                                 1e-12, &err);
  if (!(err <= 1e-4) || !std::isfinite(h))
    throw FitFailure("gm_marginal_entropy: quadrature did not converge (error estimate " + std::to_string(err) + ")");
  return h;
}

// H(y) over all stacks (axis 1) or H(x) (axis 0).
inline double gm_marginal_entropy(const GaussianMixtureTask& task, int axis = 1) {
  return task.n_stacks * gm_dimension_entropy(task, axis);
}

}  // namespace mibench
