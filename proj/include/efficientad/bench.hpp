#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efficientad/bundle.hpp"

namespace ead {

struct BenchConfig {
  int warmup = 1000;
  int timed = 1000;
  int batch_size = 16;
  // Number of timed batches for the throughput figure; 0 skips it.
  int batch_runs = 1000;
  // Batch members run on separate std::threads instead of one after another.
  bool parallel_batch = false;
  int threads = 1;  // tensor-core threads during timing

  void validate() const;
};

struct BenchReport {
  std::string variant;
  bool padding = true;
  int width_divisor = 1;
  int warmup = 0;
  int timed = 0;
  int threads = 1;
  bool parallel_batch = false;
  std::vector<double> samples_ms;  // one per timed infer() call
  double latency_mean_ms = 0.0;
  double latency_std_ms = 0.0;
  int batch_size = 0;
  int batch_runs = 0;
  double throughput_ips = 0.0;
  std::int64_t param_count = 0;
  std::int64_t flop_count = 0;
};

// Times complete infer() calls on `image` (standardized 3 x 256 x 256). The
// bundle is only read.
BenchReport measure_latency(const ModelBundle& bundle, const Tensor& image,
                            const BenchConfig& config);

std::int64_t count_params(const ModelBundle& bundle);

// Conv: 2 * C_in * Kh * Kw per output element, plus 1 for the bias. Pooling,
// resize, relu and elementwise map arithmetic count 1 per output element.
std::int64_t count_flops(const Network& net, std::int64_t channels, std::int64_t height,
                         std::int64_t width);

// Whole infer(): the three networks plus teacher normalization, both map
// reductions, the resizes to input size, both map normalizations and the sum.
std::int64_t count_flops(const ModelBundle& bundle);

std::string bench_report_json(const BenchReport& report);
std::string bench_samples_csv(const BenchReport& report);

}  // namespace ead
