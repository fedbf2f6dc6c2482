#include "efficientad/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

#include "efficientad/error.hpp"
#include "efficientad/image_io.hpp"
#include "efficientad/preprocess.hpp"

namespace ead {
namespace {

using Color = std::array<float, 3>;

enum class Shape { disc, square, triangle, ring };

struct Object {
  Shape shape;
  double cx;
  double cy;
  double r;
  Color color;
};

// Canonical layout in a 256 x 256 frame.
const std::array<Object, 4> kLayout{{
    {Shape::disc, 72, 72, 30, {0.80f, 0.18f, 0.15f}},
    {Shape::square, 184, 72, 28, {0.16f, 0.30f, 0.78f}},
    {Shape::triangle, 72, 184, 32, {0.20f, 0.62f, 0.24f}},
    {Shape::ring, 184, 184, 30, {0.92f, 0.62f, 0.10f}},
}};

bool inside(const Object& o, double x, double y) {
  const double dx = x - o.cx;
  const double dy = y - o.cy;
  switch (o.shape) {
    case Shape::disc:
      return dx * dx + dy * dy <= o.r * o.r;
    case Shape::square:
      return std::abs(dx) <= o.r && std::abs(dy) <= o.r;
    case Shape::triangle: {
      // Upward triangle with apex at cy - r and base at cy + r.
      if (dy < -o.r || dy > o.r) return false;
      const double half = (dy + o.r) * 0.5;
      return std::abs(dx) <= half;
    }
    case Shape::ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= o.r * o.r && d2 >= 0.36 * o.r * o.r;
    }
  }
  return false;
}

// Draws `o` into rgb and/or marks its footprint in mask (either may be null).
void paint(Tensor* rgb, const Object& o, Tensor* mask) {
  const Tensor& frame = rgb ? *rgb : *mask;
  const std::int64_t h = frame.height();
  const std::int64_t w = frame.width();
  const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(o.cy - o.r - 2));
  const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(o.cy + o.r + 2));
  const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(o.cx - o.r - 2));
  const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(o.cx + o.r + 2));
  for (std::int64_t y = y0; y <= y1; ++y) {
    for (std::int64_t x = x0; x <= x1; ++x) {
      // 2 x 2 supersampling keeps sub-pixel jitter visible.
      int hits = 0;
      for (double sy : {0.25, 0.75}) {
        for (double sx : {0.25, 0.75}) hits += inside(o, x + sx, y + sy) ? 1 : 0;
      }
      if (hits == 0) continue;
      const float a = static_cast<float>(hits) / 4.0f;
      for (int c = 0; rgb && c < 3; ++c) {
        float& v = rgb->at(c, y, x);
        v = (1.0f - a) * v + a * o.color[static_cast<std::size_t>(c)];
      }
      if (mask) mask->at(0, y, x) = 1.0f;
    }
  }
}

void add_noise(Tensor& rgb, Rng& rng, double sigma) {
  for (float& v : rgb.values()) {
    v = std::clamp(static_cast<float>(v + rng.normal(0.0, sigma)), 0.0f, 1.0f);
  }
}

Tensor background(Rng& rng, std::int64_t size) {
  Tensor rgb({3, size, size});
  const Color base{0.62f, 0.58f, 0.52f};
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      // Fine diagonal weave.
      const double t = 0.03 * std::sin(0.35 * (x + y) + phase) * std::sin(0.35 * (x - y));
      for (int c = 0; c < 3; ++c) {
        rgb.at(c, y, x) = static_cast<float>(base[static_cast<std::size_t>(c)] + t);
      }
    }
  }
  return rgb;
}

Object jittered(const Object& o, Rng& rng, double jitter, double scale) {
  Object j = o;
  j.cx = o.cx * scale + rng.uniform(-jitter, jitter);
  j.cy = o.cy * scale + rng.uniform(-jitter, jitter);
  j.r = o.r * scale * rng.uniform(0.95, 1.05);
  for (float& c : j.color) c = std::clamp(static_cast<float>(c + rng.uniform(-0.03, 0.03)), 0.0f, 1.0f);
  return j;
}

}  // namespace

SyntheticImage make_scene(Rng& rng, const SyntheticConfig& config, const std::string& defect) {
  const std::int64_t size = config.size;
  const double scale = static_cast<double>(size) / 256.0;
  SyntheticImage im;
  im.rgb = background(rng, size);
  im.mask = Tensor({1, size, size});
  im.defect_type = defect;
  std::array<Object, 4> objects;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    objects[i] = jittered(kLayout[i], rng, config.jitter_px * scale, scale);
  }
  if (defect == "layout") {
    // Move one object far enough that its old and new footprints are disjoint.
    const std::size_t k = rng.index(objects.size());
    Object& o = objects[k];
    paint(nullptr, o, &im.mask);
    const double margin = o.r + 4.0;
    for (int attempt = 0;; ++attempt) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = rng.uniform(2.3 * o.r, 3.2 * o.r);
      const double nx = o.cx + dist * std::cos(angle);
      const double ny = o.cy + dist * std::sin(angle);
      if ((nx > margin && nx < size - margin && ny > margin && ny < size - margin) ||
          attempt > 1000) {
        o.cx = std::clamp(nx, margin, size - margin);
        o.cy = std::clamp(ny, margin, size - margin);
        break;
      }
    }
    for (std::size_t i = 0; i < objects.size(); ++i) paint(&im.rgb, objects[i], i == k ? &im.mask : nullptr);
  } else {
    for (const Object& o : objects) paint(&im.rgb, o, nullptr);
  }
  if (defect == "structural") {
    // Irregular blob: union of a few overlapping discs in a contrasting color.
    const Color color{static_cast<float>(rng.uniform(0.0, 0.3)),
                      static_cast<float>(rng.uniform(0.0, 0.3)),
                      static_cast<float>(rng.uniform(0.0, 0.3))};
    const double cx = rng.uniform(30.0, 226.0) * scale;
    const double cy = rng.uniform(30.0, 226.0) * scale;
    const int parts = 2 + static_cast<int>(rng.index(3));
    for (int p = 0; p < parts; ++p) {
      Object blob{Shape::disc, cx + rng.uniform(-8.0, 8.0) * scale,
                  cy + rng.uniform(-8.0, 8.0) * scale, rng.uniform(5.0, 11.0) * scale, color};
      paint(&im.rgb, blob, &im.mask);
    }
  }
  add_noise(im.rgb, rng, 0.015);
  return im;
}

Tensor make_natural_image(Rng& rng, std::int64_t size) {
  Tensor rgb({3, size, size});
  // Smooth color field from random gradients.
  std::array<double, 9> g{};
  for (double& v : g) v = rng.uniform(-0.4, 0.4);
  const Color base{static_cast<float>(rng.uniform(0.2, 0.8)), static_cast<float>(rng.uniform(0.2, 0.8)),
                   static_cast<float>(rng.uniform(0.2, 0.8))};
  const double fx = rng.uniform(0.01, 0.08);
  const double fy = rng.uniform(0.01, 0.08);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size;
      const double v = static_cast<double>(y) / size;
      const double wave = std::sin(fx * x + fy * y);
      for (std::size_t c = 0; c < 3; ++c) {
        rgb.at(static_cast<std::int64_t>(c), y, x) = std::clamp(
            static_cast<float>(base[c] + g[c] * u + g[c + 3] * v + 0.5 * g[c + 6] * wave), 0.0f, 1.0f);
      }
    }
  }
  const int shapes = 8 + static_cast<int>(rng.index(24));
  const double scale = static_cast<double>(size) / 256.0;
  for (int i = 0; i < shapes; ++i) {
    Object o{static_cast<Shape>(rng.index(4)), rng.uniform(0.0, static_cast<double>(size)),
             rng.uniform(0.0, static_cast<double>(size)), rng.uniform(4.0, 40.0) * scale,
             Color{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                   static_cast<float>(rng.uniform())}};
    paint(&rgb, o, nullptr);
  }
  add_noise(rgb, rng, rng.uniform(0.0, 0.06));
  return rgb;
}

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config) {
  if (config.size < 32) throw ConfigError("synthetic image size must be >= 32");
  Rng rng(config.seed);
  SyntheticDataset d;
  for (int i = 0; i < config.normal_train; ++i) d.train.push_back(make_scene(rng, config, "good").rgb);
  for (int i = 0; i < config.normal_test; ++i) d.test.push_back(make_scene(rng, config, "good"));
  for (int i = 0; i < config.structural; ++i) d.test.push_back(make_scene(rng, config, "structural"));
  for (int i = 0; i < config.layout; ++i) d.test.push_back(make_scene(rng, config, "layout"));
  for (int i = 0; i < config.natural; ++i) d.natural.push_back(make_natural_image(rng, config.size));
  return d;
}

void write_synthetic_dataset(const SyntheticDataset& data, const std::string& root) {
  namespace fs = std::filesystem;
  auto name = [](std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
  };
  const fs::path r(root);
  fs::create_directories(r / "train" / "good");
  fs::create_directories(r / "natural");
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    write_png_rgb((r / "train" / "good" / (name(i) + ".png")).string(), data.train[i]);
  }
  std::map<std::string, std::size_t> counters;
  for (const SyntheticImage& im : data.test) {
    const std::size_t i = counters[im.defect_type]++;
    fs::create_directories(r / "test" / im.defect_type);
    write_png_rgb((r / "test" / im.defect_type / (name(i) + ".png")).string(), im.rgb);
    if (im.defect_type != "good") {
      fs::create_directories(r / "ground_truth" / im.defect_type);
      write_png_gray((r / "ground_truth" / im.defect_type / (name(i) + "_mask.png")).string(),
                     im.mask);
    }
  }
  for (std::size_t i = 0; i < data.natural.size(); ++i) {
    write_png_rgb((r / "natural" / (name(i) + ".png")).string(), data.natural[i]);
  }
}

std::vector<DistillSample> reference_samples(const Network& reference,
                                             const std::vector<Tensor>& images) {
  std::vector<DistillSample> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    DistillSample s;
    s.image_path = "memory:" + std::to_string(i);
    s.image = images[i];
    s.target = forward(reference, standardize(images[i]));
    s.gray_target = forward(reference, standardize(to_grayscale(images[i])));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ead
