#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "efficientad/tensor.hpp"

namespace ead {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<Tensor* const> params, double learning_rate,
                          double weight_decay);

// One Adam update with bias correction. Weight decay is coupled L2: the term
// weight_decay * theta is added to the gradient before the moment updates.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state);

}  // namespace ead
