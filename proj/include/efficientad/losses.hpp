#pragma once

#include <cstdint>
#include <vector>

#include "efficientad/tensor.hpp"

namespace ead {

struct HardLoss {
  double loss = 0.0;
  double threshold = 0.0;          // the p_hard-quantile d_hard of D
  std::int64_t selected = 0;       // number of elements with D >= d_hard
  std::vector<std::uint8_t> mask;  // 1 where the element contributes
  Tensor grad;                     // d loss / d student, zero outside the mask
};

// Hard feature loss: D = (teacher - student)^2 elementwise, d_hard its
// p_hard-quantile, loss the mean of all D >= d_hard. The threshold is treated
// as a constant for the gradient.
HardLoss hard_feature_loss(const Tensor& teacher_normalized, const Tensor& student,
                           double p_hard);

struct LossWithGrad {
  double loss = 0.0;
  Tensor grad;
};

// Mean of squares over the first `channels` channels of `student_output`;
// the gradient covers the whole tensor and is zero beyond those channels.
LossWithGrad penalty_loss(const Tensor& student_output, std::int64_t channels);

struct PairLoss {
  double loss = 0.0;
  Tensor grad_a;  // d loss / d a
  Tensor grad_b;  // d loss / d b
};

// mean((a - b)^2) with gradients for both arguments.
PairLoss mse_loss(const Tensor& a, const Tensor& b);

}  // namespace ead
