#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mos/errors.hpp"
#include "mos/tensor.hpp"

namespace mos {

template <typename T>
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
};

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>> params, double learning_rate, double beta1 = 0.9,
                             double beta2 = 0.999, double epsilon = 1e-8) {
  AdamState<T> state;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.epsilon = epsilon;
  state.learning_rate = learning_rate;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), T(0));
    state.second_moment.emplace_back(p.size(), T(0));
  }
  return state;
}

// Bias-corrected Adam update, applied in place to each parameter's values
// using the gradient currently stored on it.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                         std::to_string(state.first_moment.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad() || !params[i].has_grad()) {
      throw UsageError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.first_moment[i].size() != params[i].size() || state.second_moment[i].size() != params[i].size()) {
      throw DimensionError("adam_step: moment buffers do not match parameter " + std::to_string(i) + " of shape " +
                           shape_str(params[i].shape()));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    const auto grads = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grads[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double m_hat = static_cast<double>(m[j]) / correction1;
      const double v_hat = static_cast<double>(v[j]) / correction2;
      values[j] -= static_cast<T>(state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

}  // namespace mos
