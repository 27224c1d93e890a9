#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "mibench/errors.hpp"

namespace mibench {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Paired draws (x_i, y_i). `codes` is empty unless the batch was drawn
// conditionally on one quantization code, in which case every entry is equal.
struct SampleBatch {
  Matrix x;
  Matrix y;
  std::vector<int> codes;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index x_dim() const { return x.cols(); }
  Eigen::Index y_dim() const { return y.cols(); }

  void validate() const {
    require(x.rows() == y.rows(), "SampleBatch: x and y must be row-aligned");
    require(codes.empty() || codes.size() == static_cast<std::size_t>(x.rows()),
            "SampleBatch: codes must have one entry per row");
  }
};

// The training data for one run has the same shape as a batch.
using Dataset = SampleBatch;

inline SampleBatch take_rows(const SampleBatch& data, const std::vector<std::int64_t>& rows) {
  SampleBatch out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()), data.y.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(rows[i]);
    out.y.row(static_cast<Eigen::Index>(i)) = data.y.row(rows[i]);
  }
  if (!data.codes.empty()) {
    out.codes.reserve(rows.size());
    for (auto r : rows) out.codes.push_back(data.codes[static_cast<std::size_t>(r)]);
  }
  return out;
}

}  // namespace mibench
