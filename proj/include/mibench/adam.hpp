#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mibench/errors.hpp"

namespace mibench {

// Bias-corrected Adam. The update descends: callers pass gradients of a loss
// to minimize.
struct AdamState {
  long long step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double lr = 5e-4)
      : first_moment(n, 0.0), second_moment(n, 0.0), learning_rate(lr) {}
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  require(params.size() == grads.size(), "adam_step: params and grads differ in length");
  if (state.first_moment.empty() && !params.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  require(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
          "adam_step: moment vectors do not match the parameter vector");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double a1 = 1.0 - state.beta1;
  const double a2 = 1.0 - state.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + a1 * g;
    v = state.beta2 * v + a2 * g * g;
    params[i] -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

}  // namespace mibench
