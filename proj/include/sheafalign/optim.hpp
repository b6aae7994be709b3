#pragma once

#include <cstdint>

#include "sheafalign/tensor.hpp"

namespace sheafalign {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments of one parameter tensor. `step` counts updates already applied.
struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam_state(const Tensor& param);

/// Bias-corrected Adam update of `param` in place.
void adam_step(AdamState& state, Tensor& param, const Tensor& grad, double lr, const AdamConfig& cfg = {});

/// param -= lr * grad.
void sgd_step(Tensor& param, const Tensor& grad, double lr);

}  // namespace sheafalign
