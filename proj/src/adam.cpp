#include "efficientad/adam.hpp"

#include <cmath>
#include <string>

#include "efficientad/error.hpp"

namespace ead {

AdamState make_adam_state(std::span<Tensor* const> params, double learning_rate,
                          double weight_decay) {
  AdamState state;
  state.learning_rate = learning_rate;
  state.weight_decay = weight_decay;
  for (const Tensor* p : params) {
    state.first_moment.push_back(Tensor::zeros_like(*p));
    state.second_moment.push_back(Tensor::zeros_like(*p));
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const auto step_size = static_cast<float>(state.learning_rate / correction1);
  const auto root_correction2 = static_cast<float>(std::sqrt(correction2));
  const auto b1 = static_cast<float>(state.beta1);
  const auto b2 = static_cast<float>(state.beta2);
  const auto wd = static_cast<float>(state.weight_decay);
  const auto eps = static_cast<float>(state.epsilon);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (!theta.same_shape(g) || !theta.same_shape(m)) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " " +
                       theta.shape_string() + " vs gradient " + g.shape_string());
    }
    for (std::int64_t i = 0; i < theta.size(); ++i) {
      const float grad = g[i] + wd * theta[i];
      m[i] = b1 * m[i] + (1.0f - b1) * grad;
      v[i] = b2 * v[i] + (1.0f - b2) * grad * grad;
      const float denom = std::sqrt(v[i]) / root_correction2 + eps;
      theta[i] -= step_size * m[i] / denom;
    }
  }
}

}  // namespace ead
