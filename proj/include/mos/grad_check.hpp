#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mos/errors.hpp"
#include "mos/tensor.hpp"

namespace mos {

struct GradCheckOptions {
  double step = 1e-5;
  // Check every k-th coordinate of each input (1 = all of them).
  std::size_t stride = 1;
};

// Compares backward() against central differences and returns
// max |analytic - numeric| / max(1, |analytic|, |numeric|) over all checked
// coordinates. Inputs must be gradient-tracking leaves that `loss_fn` reads.
inline double grad_check(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                         GradCheckOptions options = {}) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw UsageError("grad_check: input does not track gradients");
    in.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); j += std::max<std::size_t>(options.stride, 1)) {
      const double saved = values[j];
      values[j] = saved + options.step;
      const double up = loss_fn().item();
      values[j] = saved - options.step;
      const double down = loss_fn().item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i][j];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mos
