#include "efficientad/preprocess.hpp"

#include <algorithm>

#include "efficientad/error.hpp"
#include "efficientad/ops.hpp"

namespace ead {
namespace {

void require_rgb(const Tensor& t, const char* what) {
  require_chw(t, what);
  if (t.channels() != 3) {
    throw ShapeError(std::string(what) + ": expected 3 channels, got " + t.shape_string());
  }
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace

Tensor standardize(const Tensor& rgb) {
  require_rgb(rgb, "standardize");
  Tensor out = rgb;
  for (int c = 0; c < 3; ++c) {
    const float mu = kImageMean[static_cast<std::size_t>(c)];
    const float sd = kImageStd[static_cast<std::size_t>(c)];
    for (float& v : out.channel(c)) v = (v - mu) / sd;
  }
  return out;
}

Tensor unstandardize(const Tensor& standardized) {
  require_rgb(standardized, "unstandardize");
  Tensor out = standardized;
  for (int c = 0; c < 3; ++c) {
    const float mu = kImageMean[static_cast<std::size_t>(c)];
    const float sd = kImageStd[static_cast<std::size_t>(c)];
    for (float& v : out.channel(c)) v = v * sd + mu;
  }
  return out;
}

Tensor to_grayscale(const Tensor& rgb) {
  require_rgb(rgb, "to_grayscale");
  Tensor out = rgb;
  auto r = rgb.channel(0), g = rgb.channel(1), b = rgb.channel(2);
  auto o0 = out.channel(0), o1 = out.channel(1), o2 = out.channel(2);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const float y = luma(r[i], g[i], b[i]);
    o0[i] = o1[i] = o2[i] = y;
  }
  return out;
}

Tensor center_crop(const Tensor& image, std::int64_t size) {
  require_chw(image, "center_crop");
  if (image.height() < size || image.width() < size) {
    throw ShapeError("center_crop: " + image.shape_string() + " smaller than " +
                     std::to_string(size));
  }
  const std::int64_t top = (image.height() - size) / 2;
  const std::int64_t left = (image.width() - size) / 2;
  Tensor out({image.channels(), size, size});
  for (std::int64_t c = 0; c < image.channels(); ++c) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
    }
  }
  return out;
}

Tensor apply_augmentation(const Tensor& rgb, const Augmentation& aug) {
  require_rgb(rgb, "augment");
  const auto f = static_cast<float>(aug.factor);
  Tensor out = rgb;
  auto r = rgb.channel(0), g = rgb.channel(1), b = rgb.channel(2);
  switch (aug.kind) {
    case AugmentKind::brightness:
      for (float& v : out.values()) v = clamp01(v * f);
      break;
    case AugmentKind::contrast: {
      double sum = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) sum += luma(r[i], g[i], b[i]);
      const auto mean = static_cast<float>(sum / static_cast<double>(r.size()));
      for (float& v : out.values()) v = clamp01(f * v + (1.0f - f) * mean);
      break;
    }
    case AugmentKind::saturation:
      for (std::size_t i = 0; i < r.size(); ++i) {
        const float y = luma(r[i], g[i], b[i]);
        for (int c = 0; c < 3; ++c) {
          float& v = out.channel(c)[i];
          v = clamp01(f * v + (1.0f - f) * y);
        }
      }
      break;
  }
  return out;
}

Augmentation sample_augmentation(Rng& rng, double lo, double hi) {
  Augmentation aug;
  aug.kind = static_cast<AugmentKind>(rng.index(3));
  aug.factor = rng.uniform(lo, hi);
  return aug;
}

Tensor augment(const Tensor& rgb, Rng& rng, double lo, double hi) {
  return apply_augmentation(rgb, sample_augmentation(rng, lo, hi));
}

Tensor prepare_penalty_image(const Tensor& rgb, Rng& rng, double gray_prob,
                             std::int64_t out_size) {
  require_rgb(rgb, "prepare_penalty_image");
  Tensor img = bilinear_resize(rgb, 2 * out_size, 2 * out_size);
  if (rng.bernoulli(gray_prob)) img = to_grayscale(img);
  return standardize(center_crop(img, out_size));
}

}  // namespace ead
