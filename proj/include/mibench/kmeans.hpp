#pragma once

#include <limits>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/rng.hpp"

namespace mibench {

struct KMeansResult {
  Matrix centroids;                    // k x d
  std::vector<int> assignment;         // per input row
  std::vector<double> inertia_history; // after each Lloyd assignment step
  int iterations = 0;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

inline int nearest_centroid(const Matrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& point,
                            double* distance = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (distance) *distance = best_d;
  return best;
}

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iter is reached. A cluster that empties is re-seeded with
// the point farthest from its current centroid.
inline KMeansResult kmeans_fit(const Matrix& data, int k, Rng& rng, int max_iter = 300) {
  const Eigen::Index n = data.rows();
  require(k >= 1, "kmeans_fit: k must be >= 1");
  require(n >= k, "kmeans_fit: need at least k points");

  KMeansResult out;
  out.centroids.resize(k, data.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  out.centroids.row(0) = data.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (data.row(i) - out.centroids.row(c - 1)).squaredNorm());
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2[static_cast<std::size_t>(pick)];
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    out.centroids.row(c) = data.row(pick);
  }

  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = 0.0;
      const int c = nearest_centroid(out.centroids, data.row(i), &d);
      inertia += d;
      if (c != out.assignment[static_cast<std::size_t>(i)]) {
        out.assignment[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    out.inertia_history.push_back(inertia);
    out.iterations = it + 1;
    if (!changed && it > 0) break;

    Matrix sums = Matrix::Zero(k, data.cols());
    std::vector<long long> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = out.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += data.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        out.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (data.row(i) - out.centroids.row(out.assignment[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      out.centroids.row(c) = data.row(far);
      out.assignment[static_cast<std::size_t>(far)] = c;
    }
  }
  return out;
}

}  // namespace mibench
