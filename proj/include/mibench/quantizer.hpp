#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/kmeans.hpp"
#include "mibench/rng.hpp"
#include "mibench/tica.hpp"

namespace mibench {

// Bit i of the code is set when x_i > 0.
inline int sign_quantize(std::span<const double> x) {
  require(x.size() <= 20, "sign_quantize: at most 20 dimensions fit in a code");
  int code = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) code |= 1 << i;
  return code;
}

// Plug-in entropy in nats, 0 log 0 = 0.
inline double discrete_entropy(std::span<const long long> counts) {
  long long n = 0;
  for (auto c : counts) {
    require(c >= 0, "discrete_entropy: counts must be non-negative");
    n += c;
  }
  require(n > 0, "discrete_entropy: counts must not all be zero");
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h;
}

enum class QuantizerKind { sign, kmeans_tica };

inline std::string to_string(QuantizerKind k) { return k == QuantizerKind::sign ? "sign" : "kmeans-tica"; }

// A fixed map Q(x) -> [0, n_codes). Immutable once fitted.
struct Quantizer {
  QuantizerKind kind = QuantizerKind::sign;
  int n_codes = 1;
  int input_dim = 0;
  std::optional<TicaModel> tica;
  Matrix centroids;                      // kmeans_tica: n_codes x r
  std::vector<double> code_probabilities;
  std::vector<long long> code_counts;

  int quantize(std::span<const double> x) const {
    require(static_cast<int>(x.size()) == input_dim, "Quantizer::quantize: dimension mismatch");
    if (kind == QuantizerKind::sign) return sign_quantize(x);
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    const Matrix z = tica->project(row);
    return nearest_centroid(centroids, z.row(0));
  }

  std::vector<int> quantize_rows(const Matrix& x) const {
    require(x.cols() == input_dim, "Quantizer::quantize_rows: dimension mismatch");
    std::vector<int> codes(static_cast<std::size_t>(x.rows()));
    if (kind == QuantizerKind::sign) {
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        codes[static_cast<std::size_t>(i)] = sign_quantize(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
      return codes;
    }
    const Matrix z = tica->project(x);
    for (Eigen::Index i = 0; i < z.rows(); ++i) codes[static_cast<std::size_t>(i)] = nearest_centroid(centroids, z.row(i));
    return codes;
  }

  // H(Q(x)) by the plug-in estimator over the fitting data.
  double code_entropy() const { return discrete_entropy(code_counts); }

  // Records empirical code frequencies of the full dataset.
  void set_frequencies(const std::vector<int>& codes) {
    code_counts.assign(static_cast<std::size_t>(n_codes), 0);
    for (int c : codes) {
      require(c >= 0 && c < n_codes, "Quantizer: code out of range");
      ++code_counts[static_cast<std::size_t>(c)];
    }
    code_probabilities.assign(static_cast<std::size_t>(n_codes), 0.0);
    for (std::size_t c = 0; c < code_counts.size(); ++c)
      code_probabilities[c] = static_cast<double>(code_counts[c]) / static_cast<double>(codes.size());
  }
};

inline Quantizer fit_sign_quantizer(const Matrix& x) {
  require(x.cols() <= 20, "fit_sign_quantizer: at most 20 dimensions");
  Quantizer q;
  q.kind = QuantizerKind::sign;
  q.input_dim = static_cast<int>(x.cols());
  q.n_codes = 1 << x.cols();
  q.set_frequencies(q.quantize_rows(x));
  return q;
}

// TICA projection of the (time-ordered) series onto `components` slow modes
// followed by k-means with `n_clusters` centroids.
inline Quantizer fit_kmeans_tica_quantizer(const Matrix& series, int n_clusters, Rng& rng, int components = 10,
                                           int lag = 1) {
  require(n_clusters >= 1, "fit_kmeans_tica_quantizer: need at least one cluster");
  Quantizer q;
  q.kind = QuantizerKind::kmeans_tica;
  q.input_dim = static_cast<int>(series.cols());
  q.n_codes = n_clusters;
  q.tica = tica_fit(series, lag, components);
  const Matrix z = q.tica->project(series);
  q.centroids = kmeans_fit(z, n_clusters, rng).centroids;
  q.set_frequencies(q.quantize_rows(series));
  return q;
}

}  // namespace mibench
