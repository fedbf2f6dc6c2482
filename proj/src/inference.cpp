#include "efficientad/inference.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "efficientad/error.hpp"
#include "efficientad/ops.hpp"

namespace ead {
namespace {

// Channel mean of (a - b)^2 over `count` channels starting at a_first/b_first.
Tensor channel_mean_sq_diff(const Tensor& a, std::int64_t a_first, const Tensor& b,
                            std::int64_t b_first, std::int64_t count) {
  const std::int64_t plane = a.height() * a.width();
  std::vector<double> acc(static_cast<std::size_t>(plane), 0.0);
  for (std::int64_t c = 0; c < count; ++c) {
    auto x = a.channel(a_first + c);
    auto y = b.channel(b_first + c);
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(x[static_cast<std::size_t>(i)]) -
                       y[static_cast<std::size_t>(i)];
      acc[static_cast<std::size_t>(i)] += d * d;
    }
  }
  Tensor out({1, a.height(), a.width()});
  for (std::int64_t i = 0; i < plane; ++i) {
    out[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] / static_cast<double>(count));
  }
  return out;
}

}  // namespace

RawMaps infer_raw_maps(const ModelBundle& bundle, const Tensor& image) {
  require_chw(image, "infer input");
  if (image.channels() != 3 || image.height() != kImageSize || image.width() != kImageSize) {
    throw ShapeError("infer: image must be 3x256x256, got " + image.shape_string());
  }
  const Tensor teacher = normalize_channels(forward(bundle.teacher, image), bundle.teacher_norm);
  const Tensor student = forward(bundle.student, image);
  Rng unused(0);
  const Tensor ae = autoencoder_forward(bundle.autoencoder, image, false, unused);
  const std::int64_t c = teacher.channels();
  if (student.channels() != 2 * c || ae.channels() != c) {
    throw ShapeError("infer: student " + student.shape_string() + " / autoencoder " +
                     ae.shape_string() + " do not match teacher " + teacher.shape_string());
  }
  RawMaps maps;
  maps.local = channel_mean_sq_diff(teacher, 0, student, 0, c);
  maps.global = channel_mean_sq_diff(ae, 0, student, c, c);
  return maps;
}

Tensor resize_map_to_input(const Tensor& map) {
  return bilinear_resize(map, kImageSize, kImageSize);
}

Tensor normalize_map(const Tensor& map, double q_a, double q_b) {
  double span = q_b - q_a;
  if (!(span >= kMinQuantileSpan)) {
    spdlog::warn("degenerate map quantiles q_a={} q_b={}; using span {}", q_a, q_b,
                 kMinQuantileSpan);
    span = kMinQuantileSpan;
  }
  Tensor out = map;
  for (float& v : out.values()) v = static_cast<float>(0.1 * (v - q_a) / span);
  return out;
}

AnomalyResult infer(const ModelBundle& bundle, const Tensor& image) {
  const RawMaps raw = infer_raw_maps(bundle, image);
  const MapQuantiles& q = bundle.quantiles;
  AnomalyResult r;
  r.local = normalize_map(resize_map_to_input(raw.local), q.st_a, q.st_b);
  r.global = normalize_map(resize_map_to_input(raw.global), q.ae_a, q.ae_b);
  r.combined = r.local;
  for (std::int64_t i = 0; i < r.combined.size(); ++i) {
    r.combined[i] = 0.5f * r.local[i] + 0.5f * r.global[i];
  }
  r.image_score = *std::max_element(r.combined.storage().begin(), r.combined.storage().end());
  return r;
}

Tensor resize_map_to_original(const Tensor& map, std::int64_t orig_h, std::int64_t orig_w) {
  return bilinear_resize(map, orig_h, orig_w);
}

}  // namespace ead
