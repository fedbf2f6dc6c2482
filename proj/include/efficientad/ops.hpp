#pragma once

#include <cstdint>

#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

enum class Activation { none, relu };

// One convolution layer's hyperparameters. Padding is symmetric: `padding`
// zero rows/cols are added on every border.
struct ConvSpec {
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int padding = 0;
  Activation activation = Activation::none;

  void validate() const;
};

// floor((in + 2 * pad - kernel) / stride) + 1; throws ShapeError when the
// padded input is smaller than the kernel.
std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad,
                                const char* axis);

// Cross-correlation plus bias. input C x H x W, weights O x C x Kh x Kw,
// bias O. The activation field of `spec` is ignored here; the layer
// interpreter applies it.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec);

struct Conv2dGrads {
  Tensor input;   // empty when not requested
  Tensor weights;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output, const ConvSpec& spec,
                            bool need_input_grad = true);

// Average pooling; the divisor is always kernel * kernel, padded cells count.
Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding);
Tensor avgpool2d_backward(const Tensor& grad_output, std::int64_t in_h, std::int64_t in_w,
                          int kernel, int stride, int padding);

// Bilinear resize with half-pixel centers; same size is the identity.
Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w);
Tensor bilinear_resize_backward(const Tensor& grad_output, std::int64_t in_h,
                                std::int64_t in_w);

Tensor relu(const Tensor& input);
// Gradient of relu given its output (mask is output > 0).
Tensor relu_backward(const Tensor& output, const Tensor& grad_output);

// Inverted dropout. In training mode `mask` receives the per-element scale
// (0 or 1/(1-rate)); in inference mode the input is returned unchanged.
Tensor dropout(const Tensor& input, float rate, bool training, Rng& rng,
               Tensor* mask = nullptr);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_output);

// Number of worker threads used by the convolution kernels. Results are
// bit-identical for any thread count.
void set_num_threads(int n);
int num_threads();

}  // namespace ead
