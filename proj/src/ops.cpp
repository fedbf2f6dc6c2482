#include "efficientad/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "efficientad/error.hpp"

namespace ead {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using ConstMap = Eigen::Map<const RowMatrix>;

std::atomic<int> g_threads{1};

// Upper bound on the im2col scratch buffer, in floats.
constexpr std::int64_t kColumnBudget = std::int64_t{1} << 21;

struct ConvGeometry {
  std::int64_t channels, in_h, in_w;
  std::int64_t out_channels, out_h, out_w;
  int kh, kw, sh, sw, pad;
  std::int64_t patch() const { return channels * kh * kw; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  require_chw(input, "conv2d input");
  if (weights.rank() != 4) {
    throw ShapeError("conv2d: weights must be O x C x Kh x Kw, got " + weights.shape_string());
  }
  if (weights.dim(1) != input.channels()) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.channels()) +
                     " != weight in-channels " + std::to_string(weights.dim(1)));
  }
  if (weights.dim(0) != spec.out_channels) {
    throw ShapeError("conv2d: weight out-channels " + std::to_string(weights.dim(0)) +
                     " != spec out_channels " + std::to_string(spec.out_channels));
  }
  if (weights.dim(2) != spec.kernel_h || weights.dim(3) != spec.kernel_w) {
    throw ShapeError("conv2d: weight kernel " + weights.shape_string() +
                     " does not match spec kernel");
  }
  ConvGeometry g{};
  g.channels = input.channels();
  g.in_h = input.height();
  g.in_w = input.width();
  g.out_channels = spec.out_channels;
  g.kh = spec.kernel_h;
  g.kw = spec.kernel_w;
  g.sh = spec.stride_h;
  g.sw = spec.stride_w;
  g.pad = spec.padding;
  g.out_h = conv_output_extent(g.in_h, g.kh, g.sh, g.pad, "height");
  g.out_w = conv_output_extent(g.in_w, g.kw, g.sw, g.pad, "width");
  return g;
}

// Output rows handled per im2col chunk. Depends only on the geometry, never on
// the thread count, so the reduction order is fixed.
std::int64_t rows_per_chunk(const ConvGeometry& g) {
  const std::int64_t per_row = g.patch() * g.out_w;
  return std::clamp<std::int64_t>(kColumnBudget / std::max<std::int64_t>(per_row, 1), 1,
                                  g.out_h);
}

// Fills cols (patch x (rows * out_w)) for output rows [row0, row0 + rows).
void im2col(const float* in, const ConvGeometry& g, std::int64_t row0, std::int64_t rows,
            float* cols) {
  const std::int64_t n = rows * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const float* plane = in + c * g.in_h * g.in_w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        float* dst = cols + ((c * g.kh + i) * g.kw + j) * n;
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int64_t y = (row0 + r) * g.sh + i - g.pad;
          float* out = dst + r * g.out_w;
          if (y < 0 || y >= g.in_h) {
            std::fill_n(out, g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + y * g.in_w;
          for (std::int64_t x = 0; x < g.out_w; ++x) {
            const std::int64_t xi = x * g.sw + j - g.pad;
            out[x] = (xi >= 0 && xi < g.in_w) ? src[xi] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-adds cols back into the input gradient (adjoint of im2col).
void col2im(const float* cols, const ConvGeometry& g, std::int64_t row0, std::int64_t rows,
            float* grad_in) {
  const std::int64_t n = rows * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    float* plane = grad_in + c * g.in_h * g.in_w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const float* src = cols + ((c * g.kh + i) * g.kw + j) * n;
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int64_t y = (row0 + r) * g.sh + i - g.pad;
          if (y < 0 || y >= g.in_h) continue;
          float* dst = plane + y * g.in_w;
          const float* row = src + r * g.out_w;
          for (std::int64_t x = 0; x < g.out_w; ++x) {
            const std::int64_t xi = x * g.sw + j - g.pad;
            if (xi >= 0 && xi < g.in_w) dst[xi] += row[x];
          }
        }
      }
    }
  }
}

template <typename Fn>
void parallel_chunks(std::int64_t count, Fn&& fn) {
  const int threads = std::min<std::int64_t>(g_threads.load(), count);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::int64_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

struct ResizeTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<float> frac;
};

ResizeTaps resize_taps(std::int64_t in, std::int64_t out) {
  ResizeTaps taps;
  taps.lo.resize(static_cast<std::size_t>(out));
  taps.hi.resize(static_cast<std::size_t>(out));
  taps.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(s));
    const auto k = static_cast<std::size_t>(d);
    taps.lo[k] = lo;
    taps.hi[k] = std::min(lo + 1, in - 1);
    taps.frac[k] = static_cast<float>(s - static_cast<double>(lo));
  }
  return taps;
}

}  // namespace

void ConvSpec::validate() const {
  if (out_channels < 1) throw ConfigError("ConvSpec: out_channels must be >= 1");
  if (kernel_h < 1 || kernel_w < 1) throw ConfigError("ConvSpec: kernel must be >= 1");
  if (stride_h < 1 || stride_w < 1) throw ConfigError("ConvSpec: stride must be >= 1");
  if (padding < 0) throw ConfigError("ConvSpec: padding must be >= 0");
}

std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad,
                                const char* axis) {
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string("input ") + axis + " " + std::to_string(in) +
                     " with padding " + std::to_string(pad) + " is smaller than kernel " +
                     std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(input, weights, spec);
  if (bias.size() != g.out_channels) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " entries, expected " +
                     std::to_string(g.out_channels));
  }
  Tensor out({g.out_channels, g.out_h, g.out_w});
  const std::int64_t n_total = g.out_h * g.out_w;
  const std::int64_t chunk_rows = rows_per_chunk(g);
  const std::int64_t chunks = (g.out_h + chunk_rows - 1) / chunk_rows;
  ConstMap w(weights.data(), g.out_channels, g.patch());

  parallel_chunks(chunks, [&](std::int64_t chunk) {
    const std::int64_t row0 = chunk * chunk_rows;
    const std::int64_t rows = std::min(chunk_rows, g.out_h - row0);
    const std::int64_t n = rows * g.out_w;
    std::vector<float> cols(static_cast<std::size_t>(g.patch() * n));
    im2col(input.data(), g, row0, rows, cols.data());
    ConstMap col_mat(cols.data(), g.patch(), n);
    StridedMap y(out.data() + row0 * g.out_w, g.out_channels, n, Eigen::OuterStride<>(n_total));
    y.noalias() = w * col_mat;
  });

  for (std::int64_t o = 0; o < g.out_channels; ++o) {
    const float b = bias[o];
    for (float& v : out.channel(o)) v += b;
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output, const ConvSpec& spec,
                            bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weights, spec);
  require_chw(grad_output, "conv2d_backward grad_output");
  if (grad_output.channels() != g.out_channels || grad_output.height() != g.out_h ||
      grad_output.width() != g.out_w) {
    throw ShapeError("conv2d_backward: grad_output " + grad_output.shape_string() +
                     " does not match forward output");
  }
  Conv2dGrads grads;
  grads.weights = Tensor::zeros_like(weights);
  grads.bias = Tensor({g.out_channels});
  if (need_input_grad) grads.input = Tensor::zeros_like(input);

  const std::int64_t n_total = g.out_h * g.out_w;
  for (std::int64_t o = 0; o < g.out_channels; ++o) {
    double s = 0.0;
    for (float v : grad_output.channel(o)) s += v;
    grads.bias[o] = static_cast<float>(s);
  }

  const std::int64_t chunk_rows = rows_per_chunk(g);
  ConstMap w(weights.data(), g.out_channels, g.patch());
  Eigen::Map<RowMatrix> dw(grads.weights.data(), g.out_channels, g.patch());
  std::vector<float> cols;
  std::vector<float> dcols;
  for (std::int64_t row0 = 0; row0 < g.out_h; row0 += chunk_rows) {
    const std::int64_t rows = std::min(chunk_rows, g.out_h - row0);
    const std::int64_t n = rows * g.out_w;
    cols.resize(static_cast<std::size_t>(g.patch() * n));
    im2col(input.data(), g, row0, rows, cols.data());
    ConstMap col_mat(cols.data(), g.patch(), n);
    ConstStridedMap dy(grad_output.data() + row0 * g.out_w, g.out_channels, n,
                       Eigen::OuterStride<>(n_total));
    dw.noalias() += dy * col_mat.transpose();
    if (need_input_grad) {
      dcols.resize(cols.size());
      Eigen::Map<RowMatrix> dcol_mat(dcols.data(), g.patch(), n);
      dcol_mat.noalias() = w.transpose() * dy;
      col2im(dcols.data(), g, row0, rows, grads.input.data());
    }
  }
  return grads;
}

Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding) {
  require_chw(input, "avgpool2d input");
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ConfigError("avgpool2d: kernel/stride must be >= 1 and padding >= 0");
  }
  const std::int64_t c_n = input.channels(), h = input.height(), w = input.width();
  const std::int64_t oh = conv_output_extent(h, kernel, stride, padding, "height");
  const std::int64_t ow = conv_output_extent(w, kernel, stride, padding, "width");
  Tensor out({c_n, oh, ow});
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  for (std::int64_t c = 0; c < c_n; ++c) {
    auto src = input.channel(c);
    auto dst = out.channel(c);
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        float s = 0.0f;
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t yi = y * stride + i - padding;
          if (yi < 0 || yi >= h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t xi = x * stride + j - padding;
            if (xi >= 0 && xi < w) s += src[static_cast<std::size_t>(yi * w + xi)];
          }
        }
        dst[static_cast<std::size_t>(y * ow + x)] = s * inv;
      }
    }
  }
  return out;
}

Tensor avgpool2d_backward(const Tensor& grad_output, std::int64_t in_h, std::int64_t in_w,
                          int kernel, int stride, int padding) {
  require_chw(grad_output, "avgpool2d_backward grad_output");
  const std::int64_t oh = conv_output_extent(in_h, kernel, stride, padding, "height");
  const std::int64_t ow = conv_output_extent(in_w, kernel, stride, padding, "width");
  if (grad_output.height() != oh || grad_output.width() != ow) {
    throw ShapeError("avgpool2d_backward: grad_output " + grad_output.shape_string() +
                     " does not match forward output");
  }
  Tensor grad({grad_output.channels(), in_h, in_w});
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  for (std::int64_t c = 0; c < grad_output.channels(); ++c) {
    auto src = grad_output.channel(c);
    auto dst = grad.channel(c);
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        const float g = src[static_cast<std::size_t>(y * ow + x)] * inv;
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t yi = y * stride + i - padding;
          if (yi < 0 || yi >= in_h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t xi = x * stride + j - padding;
            if (xi >= 0 && xi < in_w) dst[static_cast<std::size_t>(yi * in_w + xi)] += g;
          }
        }
      }
    }
  }
  return grad;
}

Tensor bilinear_resize(const Tensor& input, std::int64_t out_h, std::int64_t out_w) {
  require_chw(input, "bilinear_resize input");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output size must be >= 1");
  const std::int64_t h = input.height(), w = input.width();
  if (h == out_h && w == out_w) return input;
  const ResizeTaps ty = resize_taps(h, out_h);
  const ResizeTaps tx = resize_taps(w, out_w);
  Tensor out({input.channels(), out_h, out_w});
  for (std::int64_t c = 0; c < input.channels(); ++c) {
    auto src = input.channel(c);
    auto dst = out.channel(c);
    for (std::int64_t y = 0; y < out_h; ++y) {
      const auto yk = static_cast<std::size_t>(y);
      const float fy = ty.frac[yk];
      const float* r0 = src.data() + ty.lo[yk] * w;
      const float* r1 = src.data() + ty.hi[yk] * w;
      for (std::int64_t x = 0; x < out_w; ++x) {
        const auto xk = static_cast<std::size_t>(x);
        const float fx = tx.frac[xk];
        const std::int64_t x0 = tx.lo[xk], x1 = tx.hi[xk];
        const float top = (1.0f - fx) * r0[x0] + fx * r0[x1];
        const float bottom = (1.0f - fx) * r1[x0] + fx * r1[x1];
        dst[static_cast<std::size_t>(y * out_w + x)] = (1.0f - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

Tensor bilinear_resize_backward(const Tensor& grad_output, std::int64_t in_h,
                                std::int64_t in_w) {
  require_chw(grad_output, "bilinear_resize_backward grad_output");
  const std::int64_t out_h = grad_output.height(), out_w = grad_output.width();
  if (in_h == out_h && in_w == out_w) return grad_output;
  const ResizeTaps ty = resize_taps(in_h, out_h);
  const ResizeTaps tx = resize_taps(in_w, out_w);
  Tensor grad({grad_output.channels(), in_h, in_w});
  for (std::int64_t c = 0; c < grad_output.channels(); ++c) {
    auto src = grad_output.channel(c);
    auto dst = grad.channel(c);
    for (std::int64_t y = 0; y < out_h; ++y) {
      const auto yk = static_cast<std::size_t>(y);
      const float fy = ty.frac[yk];
      float* r0 = dst.data() + ty.lo[yk] * in_w;
      float* r1 = dst.data() + ty.hi[yk] * in_w;
      for (std::int64_t x = 0; x < out_w; ++x) {
        const auto xk = static_cast<std::size_t>(x);
        const float fx = tx.frac[xk];
        const float g = src[static_cast<std::size_t>(y * out_w + x)];
        const std::int64_t x0 = tx.lo[xk], x1 = tx.hi[xk];
        r0[x0] += (1.0f - fy) * (1.0f - fx) * g;
        r0[x1] += (1.0f - fy) * fx * g;
        r1[x0] += fy * (1.0f - fx) * g;
        r1[x1] += fy * fx * g;
      }
    }
  }
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_output) {
  if (!output.same_shape(grad_output)) {
    throw ShapeError("relu_backward: " + output.shape_string() + " vs " +
                     grad_output.shape_string());
  }
  Tensor grad = grad_output;
  for (std::int64_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > 0.0f)) grad[i] = 0.0f;
  }
  return grad;
}

Tensor dropout(const Tensor& input, float rate, bool training, Rng& rng, Tensor* mask) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0f) {
    if (mask) *mask = Tensor(input.dims(), 1.0f);
    return input;
  }
  const float keep_scale = 1.0f / (1.0f - rate);
  Tensor scale(input.dims());
  Tensor out = input;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const float s = rng.uniform() < rate ? 0.0f : keep_scale;
    scale[i] = s;
    out[i] *= s;
  }
  if (mask) *mask = std::move(scale);
  return out;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_output) {
  if (!mask.same_shape(grad_output)) {
    throw ShapeError("dropout_backward: " + mask.shape_string() + " vs " +
                     grad_output.shape_string());
  }
  Tensor grad = grad_output;
  for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
  return grad;
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }
int num_threads() { return g_threads.load(); }

}  // namespace ead
