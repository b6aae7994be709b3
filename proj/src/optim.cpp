#include "sheafalign/optim.hpp"

#include <cmath>

#include "sheafalign/error.hpp"

namespace sheafalign {

AdamState make_adam_state(const Tensor& param) {
  return AdamState{Tensor(param.rows(), param.cols()), Tensor(param.rows(), param.cols()), 0};
}

void adam_step(AdamState& state, Tensor& param, const Tensor& grad, double lr, const AdamConfig& cfg) {
  require_same_shape(param, grad, "adam_step");
  if (state.m.empty() && !param.empty()) state = make_adam_state(param);
  require_same_shape(param, state.m, "adam_step moments");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    param[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  require_same_shape(param, grad, "sgd_step");
  for (std::size_t k = 0; k < param.size(); ++k) param[k] -= lr * grad[k];
}

}  // namespace sheafalign
