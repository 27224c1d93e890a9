#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/rng.hpp"

namespace mibench {

using Point2 = std::array<double, 2>;

// U(x) = -log sum_k w_k N(x; mu_k, sigma^2 I). A single unit-variance
// component at the origin is the quadratic well |x|^2 / 2 (+ const).
struct EnergyLandscape {
  std::vector<Point2> means{{2.0, 2.0}, {2.0, -2.0}, {-2.0, 2.0}, {-2.0, -2.0}};
  std::vector<double> weights{0.25, 0.25, 0.25, 0.25};
  double sigma = 0.8;

  static EnergyLandscape quadratic_well() { return {{{0.0, 0.0}}, {1.0}, 1.0}; }

  void validate() const {
    require(!means.empty() && means.size() == weights.size(), "EnergyLandscape: means and weights must match");
    require(sigma > 0.0, "EnergyLandscape: sigma must be positive");
  }

  double energy(const Point2& x) const {
    const double s2 = sigma * sigma;
    double m = -1e300;
    std::vector<double> t(means.size());
    for (std::size_t k = 0; k < means.size(); ++k) {
      const double dx = x[0] - means[k][0];
      const double dy = x[1] - means[k][1];
      t[k] = std::log(weights[k]) - (dx * dx + dy * dy) / (2.0 * s2) - std::log(2.0 * std::numbers::pi * s2);
      m = std::max(m, t[k]);
    }
    double s = 0.0;
    for (double v : t) s += std::exp(v - m);
    return -(m + std::log(s));
  }

  // grad U = sum_k resp_k(x) (x - mu_k) / sigma^2
  Point2 gradient(const Point2& x) const {
    const double s2 = sigma * sigma;
    double m = -1e300;
    std::array<double, 16> small{};
    std::vector<double> big;
    double* t = small.data();
    if (means.size() > small.size()) {
      big.resize(means.size());
      t = big.data();
    }
    for (std::size_t k = 0; k < means.size(); ++k) {
      const double dx = x[0] - means[k][0];
      const double dy = x[1] - means[k][1];
      t[k] = std::log(weights[k]) - (dx * dx + dy * dy) / (2.0 * s2);
      m = std::max(m, t[k]);
    }
    double z = 0.0;
    Point2 g{0.0, 0.0};
    for (std::size_t k = 0; k < means.size(); ++k) {
      const double r = std::exp(t[k] - m);
      z += r;
      g[0] += r * (x[0] - means[k][0]);
      g[1] += r * (x[1] - means[k][1]);
    }
    return {g[0] / (z * s2), g[1] / (z * s2)};
  }
};

struct ParticleTask {
  EnergyLandscape landscape;
  double step_size = 0.05;  // epsilon
  double beta = 0.3;        // inverse temperature
  int n_particles = 5;
  long long trajectory_length = 100000;
  long long burn_in = 100000;
  int noise_dims = 10;
  int constant_dims = 10;
  std::uint64_t flow_seed = 0x5eed;
  Point2 initial_position{0.0, 0.0};
  bool zero_noise = false;  // beta -> infinity: deterministic gradient descent

  double noise_std() const { return zero_noise ? 0.0 : std::sqrt(2.0 * step_size / beta); }

  void validate() const {
    landscape.validate();
    require(step_size > 0.0 && beta > 0.0, "ParticleTask: step size and beta must be positive");
    require(n_particles >= 1, "ParticleTask: need at least one particle");
    require(trajectory_length > 0 && burn_in > 0, "ParticleTask: burn-in and length must be positive");
  }
};

namespace detail {

// Burn-in then `length` recorded positions of one particle, written into
// columns (col, col+1) of `out`.
inline void simulate_particle(const ParticleTask& task, long long length, Rng& rng, Matrix& out, Eigen::Index col) {
  const double noise = task.noise_std();
  Point2 x = task.initial_position;
  const long long total = task.burn_in + length;
  for (long long t = 0; t < total; ++t) {
    const Point2 g = task.landscape.gradient(x);
    const double n0 = noise > 0.0 ? rng.normal() : 0.0;
    const double n1 = noise > 0.0 ? rng.normal() : 0.0;
    x[0] = x[0] - task.step_size * g[0] + noise * n0;
    x[1] = x[1] - task.step_size * g[1] + noise * n1;
    if (!(std::abs(x[0]) <= 1e6 && std::abs(x[1]) <= 1e6))
      throw SimulationFailure("langevin_simulate: particle diverged at step " + std::to_string(t), t);
    if (t >= task.burn_in) {
      const long long row = t - task.burn_in;
      out(row, col) = x[0];
      out(row, col + 1) = x[1];
    }
  }
}

}  // namespace detail

// Post-burn-in trajectory, trajectory_length x (2 * n_particles). Each
// particle starts at the fixed initial position and uses its own stream.
inline Matrix langevin_simulate(const ParticleTask& task, Rng& rng) {
  task.validate();
  Matrix out(task.trajectory_length, 2 * task.n_particles);
  for (int p = 0; p < task.n_particles; ++p) {
    Rng stream = rng.split(static_cast<std::uint64_t>(p));
    detail::simulate_particle(task, task.trajectory_length, stream, out, 2 * p);
  }
  return out;
}

// H(x_{t+1} | x_t) for one 2-D particle: Gaussian transition with variance
// 2 eps / beta per dimension.
inline double transition_conditional_entropy(const ParticleTask& task) {
  const double var = 2.0 * task.step_size / task.beta;
  return std::log(2.0 * std::numbers::pi * std::numbers::e * var);
}

struct BinnedGrid {
  double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  int bins = 100;

  double bin_area() const { return (x_hi - x_lo) / bins * (y_hi - y_lo) / bins; }

  int cell(double x, double y) const {
    int ix = static_cast<int>((x - x_lo) / (x_hi - x_lo) * bins);
    int iy = static_cast<int>((y - y_lo) / (y_hi - y_lo) * bins);
    ix = std::clamp(ix, 0, bins - 1);
    iy = std::clamp(iy, 0, bins - 1);
    return ix * bins + iy;
  }
};

// Bounding box of the 2-D samples in columns (col, col+1), widened by 1%.
inline BinnedGrid bounding_grid(const Matrix& samples, Eigen::Index col, int bins) {
  BinnedGrid g;
  g.bins = bins;
  g.x_lo = samples.col(col).minCoeff();
  g.x_hi = samples.col(col).maxCoeff();
  g.y_lo = samples.col(col + 1).minCoeff();
  g.y_hi = samples.col(col + 1).maxCoeff();
  const double px = 0.005 * std::max(g.x_hi - g.x_lo, 1e-12);
  const double py = 0.005 * std::max(g.y_hi - g.y_lo, 1e-12);
  g.x_lo -= px;
  g.x_hi += px;
  g.y_lo -= py;
  g.y_hi += py;
  return g;
}

// Plug-in entropy of histogram counts plus log(bin area): a differential
// entropy estimate. Empty bins contribute 0.
inline double histogram_entropy(const std::vector<long long>& counts, double bin_area) {
  long long n = 0;
  for (auto c : counts) n += c;
  require(n > 0, "histogram_entropy: no samples");
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h + std::log(bin_area);
}

inline double binned_entropy(const Matrix& samples, Eigen::Index col = 0, int bins = 100) {
  const BinnedGrid g = bounding_grid(samples, col, bins);
  std::vector<long long> counts(static_cast<std::size_t>(bins) * bins, 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) ++counts[static_cast<std::size_t>(g.cell(samples(i, col), samples(i, col + 1)))];
  return histogram_entropy(counts, g.bin_area());
}

struct ParticleOracle {
  double total = 0.0;                    // sum of per-particle MI
  std::vector<double> particle_mi;       // H_binned - H_cond per particle
  std::vector<double> marginal_entropy;  // binned H(x_t) per particle
  double conditional_entropy = 0.0;      // analytic, per particle
  double std_error = 0.0;                // of `total`, delete-one-block jackknife
};

// Ground-truth temporal MI I(x_t; x_{t+1}). Each particle runs its own
// equilibrium chain of `samples_per_particle` post-burn-in positions which are
// binned on a bins x bins grid.
inline ParticleOracle particle_ground_truth_mi(const ParticleTask& task, Rng& rng,
                                               long long samples_per_particle = 2000000, int bins = 100,
                                               int jackknife_blocks = 10) {
  task.validate();
  require(samples_per_particle >= jackknife_blocks * 10, "particle_ground_truth_mi: too few samples");
  ParticleOracle out;
  out.conditional_entropy = transition_conditional_entropy(task);
  double var_total = 0.0;
  for (int p = 0; p < task.n_particles; ++p) {
    Matrix chain(samples_per_particle, 2);
    Rng stream = rng.split(0x0bac1e00ULL + static_cast<std::uint64_t>(p));
    detail::simulate_particle(task, samples_per_particle, stream, chain, 0);
    const BinnedGrid g = bounding_grid(chain, 0, bins);
    const std::size_t cells = static_cast<std::size_t>(bins) * bins;
    std::vector<std::vector<long long>> block_counts(static_cast<std::size_t>(jackknife_blocks),
                                                     std::vector<long long>(cells, 0));
    std::vector<long long> counts(cells, 0);
    const long long block_len = samples_per_particle / jackknife_blocks;
    for (long long i = 0; i < samples_per_particle; ++i) {
      const auto c = static_cast<std::size_t>(g.cell(chain(i, 0), chain(i, 1)));
      ++counts[c];
      const auto b = static_cast<std::size_t>(std::min<long long>(i / block_len, jackknife_blocks - 1));
      ++block_counts[b][c];
    }
    const double h = histogram_entropy(counts, g.bin_area());
    std::vector<double> loo(static_cast<std::size_t>(jackknife_blocks));
    double loo_mean = 0.0;
    for (int b = 0; b < jackknife_blocks; ++b) {
      std::vector<long long> rest(cells);
      for (std::size_t c = 0; c < cells; ++c) rest[c] = counts[c] - block_counts[static_cast<std::size_t>(b)][c];
      loo[static_cast<std::size_t>(b)] = histogram_entropy(rest, g.bin_area());
      loo_mean += loo[static_cast<std::size_t>(b)] / jackknife_blocks;
    }
    double jk = 0.0;
    for (double v : loo) jk += (v - loo_mean) * (v - loo_mean);
    var_total += jk * (jackknife_blocks - 1.0) / jackknife_blocks;
    out.marginal_entropy.push_back(h);
    out.particle_mi.push_back(h - out.conditional_entropy);
    out.total += h - out.conditional_entropy;
  }
  out.std_error = std::sqrt(var_total);
  return out;
}

}  // namespace mibench
