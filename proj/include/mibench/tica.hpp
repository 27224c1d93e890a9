#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/linalg.hpp"

namespace mibench {

// Time-lagged independent component analysis.
//
// The series is mean-centred and dimensions with zero variance are dropped.
// With C0 the instantaneous covariance (ridge 1e-6 * trace(C0)/d on the
// diagonal) and Ct the symmetrized lag covariance, the whitener W satisfies
// W^T C0 W = I; the components solve the eigenproblem of W^T Ct W and are
// mapped back so that projection is (x - mean)[kept] * components.
struct TicaModel {
  Vector mean;                      // full input dimension
  std::vector<int> kept_dims;       // non-constant input dimensions
  std::vector<int> dropped_dims;    // constant input dimensions
  Matrix whitener;                  // kept x kept
  Matrix components;                // kept x r, orthonormal in the whitened metric
  Vector eigenvalues;               // r, descending
  int lag = 1;

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(eigenvalues.size()); }

  Matrix project(const Matrix& x) const {
    require(x.cols() == mean.size(), "TicaModel::project: dimension mismatch");
    Matrix centered(x.rows(), static_cast<Eigen::Index>(kept_dims.size()));
    for (std::size_t k = 0; k < kept_dims.size(); ++k)
      centered.col(static_cast<Eigen::Index>(k)) = x.col(kept_dims[k]).array() - mean[kept_dims[k]];
    return centered * components;
  }
};

inline TicaModel tica_fit(const Matrix& series, int lag = 1, int r = 10) {
  const Eigen::Index t_len = series.rows();
  const Eigen::Index d = series.cols();
  require(lag >= 1, "tica_fit: lag must be >= 1");
  require(t_len > lag + d, "tica_fit: series too short for the requested lag");

  TicaModel model;
  model.lag = lag;
  model.mean = series.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (series.col(j).array() - model.mean[j]).square().mean();
    const double scale = std::max(1.0, std::abs(model.mean[j]));
    if (var <= 1e-20 * scale * scale)
      model.dropped_dims.push_back(static_cast<int>(j));
    else
      model.kept_dims.push_back(static_cast<int>(j));
  }
  if (model.kept_dims.empty()) throw FitFailure("tica_fit: every input dimension is constant");
  const auto kd = static_cast<Eigen::Index>(model.kept_dims.size());
  require(r >= 1 && r <= kd, "tica_fit: r must lie in [1, number of non-constant dimensions]");

  Matrix x(t_len, kd);
  for (Eigen::Index k = 0; k < kd; ++k)
    x.col(k) = series.col(model.kept_dims[static_cast<std::size_t>(k)]).array() -
               model.mean[model.kept_dims[static_cast<std::size_t>(k)]];

  const Eigen::Index pairs = t_len - lag;
  const auto head = x.topRows(pairs);
  const auto tail = x.bottomRows(pairs);
  Matrix c0 = (x.transpose() * x) / static_cast<double>(t_len);
  Matrix ct = (head.transpose() * tail) / static_cast<double>(pairs);
  ct = 0.5 * (ct + ct.transpose()).eval();
  const double ridge = 1e-6 * c0.trace() / static_cast<double>(kd);
  c0.diagonal().array() += ridge;
  if (!c0.allFinite() || !ct.allFinite()) throw FitFailure("tica_fit: covariance has non-finite entries");

  const EigenPairs c0_eig = symmetric_eig(c0);
  std::string null_dims;
  for (Eigen::Index k = 0; k < kd; ++k) {
    if (!(c0_eig.values[k] > 1e-14 * std::max(1.0, c0_eig.values[0]))) {
      for (Eigen::Index j = 0; j < kd; ++j)
        if (std::abs(c0_eig.vectors(j, k)) > 1e-3)
          null_dims += std::to_string(model.kept_dims[static_cast<std::size_t>(j)]) + " ";
    }
  }
  if (!null_dims.empty()) throw FitFailure("tica_fit: rank-deficient covariance; null dimensions: " + null_dims);

  Matrix inv_sqrt = Matrix::Zero(kd, kd);
  for (Eigen::Index k = 0; k < kd; ++k) inv_sqrt(k, k) = 1.0 / std::sqrt(c0_eig.values[k]);
  model.whitener = c0_eig.vectors * inv_sqrt;

  const Matrix whitened_ct = model.whitener.transpose() * ct * model.whitener;
  const Matrix sym = 0.5 * (whitened_ct + whitened_ct.transpose());
  const EigenPairs ct_eig = symmetric_eig(sym);
  model.eigenvalues = ct_eig.values.head(r);
  model.components = model.whitener * ct_eig.vectors.leftCols(r);
  return model;
}

}  // namespace mibench
