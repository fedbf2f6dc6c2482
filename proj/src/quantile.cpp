#include "efficientad/quantile.hpp"

#include <algorithm>
#include <cmath>

#include "efficientad/error.hpp"

namespace ead {

double quantile_inplace(std::span<float> values, double p) {
  if (values.empty()) throw ConfigError("quantile of an empty sequence");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile fraction must be in [0, 1]");
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  auto lo_it = values.begin() + static_cast<std::ptrdiff_t>(lo);
  std::nth_element(values.begin(), lo_it, values.end());
  const double lo_value = *lo_it;
  if (frac == 0.0 || lo + 1 >= values.size()) return lo_value;
  // After nth_element the next order statistic is the minimum of the tail.
  const double hi_value = *std::min_element(lo_it + 1, values.end());
  return lo_value + frac * (hi_value - lo_value);
}

double quantile(std::span<const float> values, double p) {
  std::vector<float> copy(values.begin(), values.end());
  return quantile_inplace(copy, p);
}

}  // namespace ead
