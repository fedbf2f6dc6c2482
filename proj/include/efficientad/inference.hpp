#pragma once

#include "efficientad/bundle.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

// Pre-normalization maps at feature resolution (1 x H' x W').
struct RawMaps {
  Tensor local;   // channel mean of (normalized teacher - student ST half)^2
  Tensor global;  // channel mean of (autoencoder - student AE half)^2
};

struct AnomalyResult {
  Tensor combined;  // 1 x 256 x 256
  Tensor local;     // normalized local map
  Tensor global;    // normalized global map
  float image_score = 0.0f;
};

// Smallest q_b - q_a used as a denominator.
inline constexpr double kMinQuantileSpan = 1e-12;

// `image` is standardized 3 x 256 x 256.
RawMaps infer_raw_maps(const ModelBundle& bundle, const Tensor& image);

// Bilinear resize of a 1 x h x w map to the network input size.
Tensor resize_map_to_input(const Tensor& map);

// 0.1 * (m - q_a) / (q_b - q_a), computed in double.
Tensor normalize_map(const Tensor& map, double q_a, double q_b);

AnomalyResult infer(const ModelBundle& bundle, const Tensor& image);

// Bilinear resize of a map back to the source image extents.
Tensor resize_map_to_original(const Tensor& map, std::int64_t orig_h, std::int64_t orig_w);

}  // namespace ead
