#include "efficientad/losses.hpp"

#include "efficientad/error.hpp"
#include "efficientad/quantile.hpp"

namespace ead {

HardLoss hard_feature_loss(const Tensor& teacher_normalized, const Tensor& student,
                           double p_hard) {
  if (!teacher_normalized.same_shape(student)) {
    throw ShapeError("hard_feature_loss: teacher " + teacher_normalized.shape_string() +
                     " vs student " + student.shape_string());
  }
  if (!(p_hard >= 0.0 && p_hard < 1.0)) throw ConfigError("p_hard must be in [0, 1)");
  const std::int64_t n = student.size();
  std::vector<float> d(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float diff = teacher_normalized[i] - student[i];
    d[static_cast<std::size_t>(i)] = diff * diff;
  }
  HardLoss out;
  {
    std::vector<float> scratch = d;
    out.threshold = quantile_inplace(scratch, p_hard);
  }
  out.mask.assign(static_cast<std::size_t>(n), 0);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = d[static_cast<std::size_t>(i)];
    if (static_cast<double>(v) >= out.threshold) {
      out.mask[static_cast<std::size_t>(i)] = 1;
      const double diff = static_cast<double>(teacher_normalized[i]) - student[i];
      sum += diff * diff;
      ++out.selected;
    }
  }
  out.loss = sum / static_cast<double>(out.selected);
  out.grad = Tensor::zeros_like(student);
  const double scale = 2.0 / static_cast<double>(out.selected);
  for (std::int64_t i = 0; i < n; ++i) {
    if (out.mask[static_cast<std::size_t>(i)]) {
      out.grad[i] = static_cast<float>(scale * (student[i] - teacher_normalized[i]));
    }
  }
  return out;
}

LossWithGrad penalty_loss(const Tensor& student_output, std::int64_t channels) {
  require_chw(student_output, "penalty_loss");
  if (channels < 1 || channels > student_output.channels()) {
    throw ShapeError("penalty_loss: cannot take " + std::to_string(channels) +
                     " channels of " + student_output.shape_string());
  }
  const std::int64_t count = channels * student_output.height() * student_output.width();
  LossWithGrad out;
  out.grad = Tensor::zeros_like(student_output);
  double sum = 0.0;
  const double scale = 2.0 / static_cast<double>(count);
  for (std::int64_t i = 0; i < count; ++i) {
    const double v = student_output[i];
    sum += v * v;
    out.grad[i] = static_cast<float>(scale * v);
  }
  out.loss = sum / static_cast<double>(count);
  return out;
}

PairLoss mse_loss(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("mse_loss: " + a.shape_string() + " vs " + b.shape_string());
  }
  PairLoss out;
  out.grad_a = Tensor::zeros_like(a);
  out.grad_b = Tensor::zeros_like(b);
  const double scale = 2.0 / static_cast<double>(a.size());
  double sum = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += diff * diff;
    out.grad_a[i] = static_cast<float>(scale * diff);
    out.grad_b[i] = static_cast<float>(-scale * diff);
  }
  out.loss = sum / static_cast<double>(a.size());
  return out;
}

}  // namespace ead
