#pragma once

#include <array>

#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

// Per-channel statistics of the ImageNet-pretrained backbones; images are
// standardized with them right before any network sees them.
inline constexpr std::array<float, 3> kImageMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd{0.229f, 0.224f, 0.225f};

// RGB in [0, 1] -> standardized, and back.
Tensor standardize(const Tensor& rgb);
Tensor unstandardize(const Tensor& standardized);

// 0.299 R + 0.587 G + 0.114 B replicated to three channels.
Tensor to_grayscale(const Tensor& rgb);

// Central size x size window; requires both extents >= size.
Tensor center_crop(const Tensor& image, std::int64_t size);

enum class AugmentKind { brightness, contrast, saturation };

struct Augmentation {
  AugmentKind kind = AugmentKind::brightness;
  double factor = 1.0;
};

// Color jitter applied to RGB images in [0, 1], result clamped to [0, 1].
// brightness: x * f; contrast: blend with the mean luma; saturation: blend with
// the per-pixel luma. blend(x, g, f) = f * x + (1 - f) * g.
Tensor apply_augmentation(const Tensor& rgb, const Augmentation& aug);

// Draws kind uniformly from the three and factor ~ U(lo, hi).
Augmentation sample_augmentation(Rng& rng, double lo = 0.8, double hi = 1.2);

Tensor augment(const Tensor& rgb, Rng& rng, double lo = 0.8, double hi = 1.2);

// Penalty image: resize to 2 * out_size square, gray with probability
// gray_prob, center crop out_size, standardize.
Tensor prepare_penalty_image(const Tensor& rgb, Rng& rng, double gray_prob = 0.3,
                             std::int64_t out_size = 256);

}  // namespace ead
