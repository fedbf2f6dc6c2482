#pragma once

#include <span>
#include <vector>

namespace ead {

// Linear-interpolation quantile: with the values sorted ascending and
// h = p * (n - 1), returns x[floor(h)] + (h - floor(h)) * (x[ceil(h)] - x[floor(h)]).
// Throws ConfigError on empty input or p outside [0, 1].
double quantile(std::span<const float> values, double p);

// Same result as quantile() but reorders `values` in place instead of copying.
double quantile_inplace(std::span<float> values, double p);

}  // namespace ead
