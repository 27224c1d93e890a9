#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/langevin.hpp"
#include "mibench/mlp.hpp"
#include "mibench/rng.hpp"

namespace mibench {

// Stack of randomly initialized affine autoregressive layers. In each layer
//   y_i = softplus(a_i(y_<i)) * x_i + b_i(y_<i)
// where (a_i, b_i) come from a per-dimension conditioner MLP (one hidden
// layer of 32 relu units). Forward is sequential over i, inverse is a single
// parallel pass. Layers alternate the dimension order.
class AffineAutoregressiveFlow {
 public:
  static constexpr int kHidden = 32;

  AffineAutoregressiveFlow(int dim, int n_layers, std::uint64_t seed) : dim_(dim), n_layers_(n_layers) {
    require(dim >= 1 && n_layers >= 1, "AffineAutoregressiveFlow: bad shape");
    Rng rng(seed);
    for (int l = 0; l < n_layers; ++l) {
      for (int i = 0; i < dim; ++i) {
        MlpSpec spec = make_mlp(std::max(i, 1), {kHidden}, 2, rng.split(static_cast<std::uint64_t>(l * dim + i)).seed());
        std::vector<double> params = init_params(spec);
        // Shrink the output layer so the composed map stays well conditioned.
        const std::size_t off = spec.layer_offset(1);
        for (std::size_t k = off; k < params.size(); ++k) params[k] *= 0.5;
        specs_.push_back(std::move(spec));
        params_.push_back(std::move(params));
      }
    }
  }

  int dim() const { return dim_; }

  Matrix forward(const Matrix& x) const {
    require(x.cols() == dim_, "AffineAutoregressiveFlow::forward: dimension mismatch");
    Matrix cur = x;
    for (int l = 0; l < n_layers_; ++l) {
      const Matrix in = permute(cur, l);
      Matrix out(in.rows(), dim_);
      for (int i = 0; i < dim_; ++i) {
        const Matrix ab = conditioner(l, i, out);
        for (Eigen::Index r = 0; r < in.rows(); ++r) out(r, i) = flow_scale(ab(r, 0)) * in(r, i) + ab(r, 1);
      }
      cur = unpermute(out, l);
    }
    return cur;
  }

  Matrix inverse(const Matrix& y) const {
    require(y.cols() == dim_, "AffineAutoregressiveFlow::inverse: dimension mismatch");
    Matrix cur = y;
    for (int l = n_layers_ - 1; l >= 0; --l) {
      const Matrix out = permute(cur, l);
      Matrix in(out.rows(), dim_);
      for (int i = 0; i < dim_; ++i) {
        const Matrix ab = conditioner(l, i, out);
        for (Eigen::Index r = 0; r < out.rows(); ++r) in(r, i) = (out(r, i) - ab(r, 1)) / flow_scale(ab(r, 0));
      }
      cur = unpermute(in, l);
    }
    return cur;
  }

  // Per-layer, per-dimension scales softplus(a_i) encountered on the forward
  // pass of x: n_layers * dim columns.
  Matrix scales(const Matrix& x) const {
    Matrix s(x.rows(), static_cast<Eigen::Index>(n_layers_) * dim_);
    Matrix cur = x;
    for (int l = 0; l < n_layers_; ++l) {
      const Matrix in = permute(cur, l);
      Matrix out(in.rows(), dim_);
      for (int i = 0; i < dim_; ++i) {
        const Matrix ab = conditioner(l, i, out);
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
          const double scale = flow_scale(ab(r, 0));
          s(r, l * dim_ + i) = scale;
          out(r, i) = scale * in(r, i) + ab(r, 1);
        }
      }
      cur = unpermute(out, l);
    }
    return s;
  }

 private:
  // softplus with the argument floored at -30 so the scale never underflows to 0.
  static double flow_scale(double a) { return softplus(std::max(a, -30.0)); }

  Matrix conditioner(int layer, int i, const Matrix& prefix_source) const {
    const auto idx = static_cast<std::size_t>(layer * dim_ + i);
    Matrix prefix = i == 0 ? Matrix::Zero(prefix_source.rows(), 1) : Matrix(prefix_source.leftCols(i));
    return mlp_forward(specs_[idx], params_[idx], prefix);
  }

  // Odd layers see the dimensions in reverse order.
  Matrix permute(const Matrix& m, int layer) const { return layer % 2 == 0 ? m : Matrix(m.rowwise().reverse()); }
  Matrix unpermute(const Matrix& m, int layer) const { return permute(m, layer); }

  int dim_;
  int n_layers_;
  std::vector<MlpSpec> specs_;
  std::vector<std::vector<double>> params_;
};

inline AffineAutoregressiveFlow particle_flow(const ParticleTask& task) {
  return AffineAutoregressiveFlow(2 * task.n_particles + task.noise_dims + task.constant_dims, 2, task.flow_seed);
}

// Appends unit-normal noise and constant zero dimensions to each time step and
// applies the fixed-seed flow.
inline Matrix augment_trajectory(const Matrix& traj, const ParticleTask& task, Rng& rng) {
  require(traj.cols() == 2 * task.n_particles, "augment_trajectory: trajectory must have 2 columns per particle");
  const Eigen::Index d = traj.cols() + task.noise_dims + task.constant_dims;
  Matrix padded = Matrix::Zero(traj.rows(), d);
  padded.leftCols(traj.cols()) = traj;
  for (Eigen::Index r = 0; r < traj.rows(); ++r)
    for (int k = 0; k < task.noise_dims; ++k) padded(r, traj.cols() + k) = rng.normal();
  return particle_flow(task).forward(padded);
}

}  // namespace mibench
