#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "efficientad/ops.hpp"
#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead::testing {

inline Tensor random_tensor(std::vector<std::int64_t> dims, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(dims));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Direct six-loop cross-correlation with zero padding, accumulated in double.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int sh, int sw,
                           int pad) {
  const std::int64_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t o_n = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t oh = (h + 2 * pad - kh) / sh + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / sw + 1;
  Tensor y({o_n, oh, ow});
  for (std::int64_t o = 0; o < o_n; ++o)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::int64_t c = 0; c < c_in; ++c)
          for (std::int64_t u = 0; u < kh; ++u)
            for (std::int64_t v = 0; v < kw; ++v) {
              const std::int64_t yy = i * sh + u - pad;
              const std::int64_t xx = j * sw + v - pad;
              if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
              acc += static_cast<double>(w[((o * c_in + c) * kh + u) * kw + v]) * x.at(c, yy, xx);
            }
        y.at(o, i, j) = static_cast<float>(acc);
      }
  return y;
}

// sum(weights * t) in double: a linear probe that turns any tensor into a scalar.
inline double probe(const Tensor& t, const Tensor& weights) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) s += static_cast<double>(t[i]) * weights[i];
  return s;
}

// Central differences of f with respect to every element of x.
inline Tensor numeric_grad(Tensor& x, const std::function<double()>& f, double eps) {
  Tensor g = Tensor::zeros_like(x);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const float saved = x[i];
    x[i] = static_cast<float>(saved + eps);
    const double up = f();
    x[i] = static_cast<float>(saved - eps);
    const double down = f();
    x[i] = saved;
    // Use the actually representable step.
    const double step = static_cast<double>(static_cast<float>(saved + eps)) -
                        static_cast<double>(static_cast<float>(saved - eps));
    g[i] = static_cast<float>((up - down) / step);
  }
  return g;
}

// max |a - n| / max |n|.
inline double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double num = 0.0;
  double den = 0.0;
  for (std::int64_t i = 0; i < numeric.size(); ++i) {
    num = std::max(num, std::fabs(static_cast<double>(analytic[i]) - numeric[i]));
    den = std::max(den, std::fabs(static_cast<double>(numeric[i])));
  }
  return den == 0.0 ? num : num / den;
}

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ead_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace ead::testing
