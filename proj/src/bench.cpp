#include "efficientad/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "efficientad/error.hpp"
#include "efficientad/inference.hpp"
#include "efficientad/ops.hpp"

namespace ead {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Restores the tensor-core thread count on scope exit.
class ThreadScope {
 public:
  explicit ThreadScope(int n) : saved_(num_threads()) { set_num_threads(n); }
  ~ThreadScope() { set_num_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_;
};

void run_batch(const ModelBundle& bundle, const Tensor& image, int batch, bool parallel) {
  if (!parallel) {
    for (int i = 0; i < batch; ++i) (void)infer(bundle, image);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    workers.emplace_back([&] { (void)infer(bundle, image); });
  }
  for (auto& t : workers) t.join();
}

}  // namespace

void BenchConfig::validate() const {
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  if (timed < 1) throw ConfigError("timed must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (batch_runs < 0) throw ConfigError("batch_runs must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

BenchReport measure_latency(const ModelBundle& bundle, const Tensor& image,
                            const BenchConfig& config) {
  config.validate();
  ThreadScope scope(config.threads);
  BenchReport r;
  r.variant = to_string(bundle.arch.variant);
  r.padding = bundle.arch.padding;
  r.width_divisor = bundle.arch.width_divisor;
  r.warmup = config.warmup;
  r.timed = config.timed;
  r.threads = config.threads;
  r.parallel_batch = config.parallel_batch;
  r.param_count = count_params(bundle);
  r.flop_count = count_flops(bundle);

  for (int i = 0; i < config.warmup; ++i) (void)infer(bundle, image);
  r.samples_ms.reserve(static_cast<std::size_t>(config.timed));
  for (int i = 0; i < config.timed; ++i) {
    const auto t0 = Clock::now();
    (void)infer(bundle, image);
    r.samples_ms.push_back(elapsed_ms(t0, Clock::now()));
  }
  double sum = 0.0;
  for (double s : r.samples_ms) sum += s;
  r.latency_mean_ms = sum / static_cast<double>(r.samples_ms.size());
  double sq = 0.0;
  for (double s : r.samples_ms) sq += (s - r.latency_mean_ms) * (s - r.latency_mean_ms);
  r.latency_std_ms = std::sqrt(sq / static_cast<double>(r.samples_ms.size()));

  r.batch_size = config.batch_size;
  r.batch_runs = config.batch_runs;
  if (config.batch_runs > 0) {
    double total_ms = 0.0;
    for (int i = 0; i < config.batch_runs; ++i) {
      const auto t0 = Clock::now();
      run_batch(bundle, image, config.batch_size, config.parallel_batch);
      total_ms += elapsed_ms(t0, Clock::now());
    }
    r.throughput_ips = static_cast<double>(config.batch_size) * config.batch_runs /
                       (total_ms / 1000.0);
  }
  return r;
}

std::int64_t count_params(const ModelBundle& bundle) { return bundle.parameter_count(); }

std::int64_t count_flops(const Network& net, std::int64_t channels, std::int64_t height,
                         std::int64_t width) {
  std::int64_t c = channels;
  std::int64_t h = height;
  std::int64_t w = width;
  std::int64_t flops = 0;
  for (const LayerSpec& l : net.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        const ConvSpec& s = l.conv;
        h = conv_output_extent(h, s.kernel_h, s.stride_h, s.padding, "height");
        w = conv_output_extent(w, s.kernel_w, s.stride_w, s.padding, "width");
        const std::int64_t out = static_cast<std::int64_t>(s.out_channels) * h * w;
        flops += out * (2 * c * s.kernel_h * s.kernel_w) + out;
        if (s.activation == Activation::relu) flops += out;
        c = s.out_channels;
        break;
      }
      case LayerKind::avg_pool:
        h = conv_output_extent(h, l.pool_kernel, l.pool_stride, l.pool_padding, "height");
        w = conv_output_extent(w, l.pool_kernel, l.pool_stride, l.pool_padding, "width");
        flops += c * h * w;
        break;
      case LayerKind::resize:
        h = l.resize_h;
        w = l.resize_w;
        flops += c * h * w;
        break;
      case LayerKind::dropout:
        break;  // identity at inference
    }
  }
  return flops;
}

std::int64_t count_flops(const ModelBundle& bundle) {
  const std::int64_t in = kImageSize;
  std::int64_t flops = count_flops(bundle.teacher, 3, in, in) +
                       count_flops(bundle.student, 3, in, in) +
                       count_flops(bundle.autoencoder, 3, in, in);
  const std::int64_t side = feature_map_size(bundle.arch);
  const std::int64_t feat = static_cast<std::int64_t>(bundle.arch.feature_channels()) * side * side;
  flops += 2 * feat;       // teacher normalization: subtract, scale
  flops += 2 * 3 * feat;   // two maps: difference, square, channel sum
  flops += 2 * side * side;      // channel mean division
  flops += 2 * in * in;          // resize both maps
  flops += 2 * 2 * in * in;      // normalize both maps
  flops += in * in;              // combine
  return flops;
}

std::string bench_report_json(const BenchReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["variant"] = r.variant;
  j["padding"] = r.padding;
  j["width_divisor"] = r.width_divisor;
  j["warmup"] = r.warmup;
  j["timed"] = r.timed;
  j["threads"] = r.threads;
  j["parallel_batch"] = r.parallel_batch;
  j["latency_ms"] = {{"mean", r.latency_mean_ms}, {"std", r.latency_std_ms}};
  j["batch_size"] = r.batch_size;
  j["batch_runs"] = r.batch_runs;
  j["throughput_img_per_s"] = r.throughput_ips;
  j["param_count"] = r.param_count;
  j["flop_count"] = r.flop_count;
  return j.dump(2) + "\n";
}

std::string bench_samples_csv(const BenchReport& r) {
  std::ostringstream os;
  os << "run,latency_ms\n";
  os.precision(9);
  for (std::size_t i = 0; i < r.samples_ms.size(); ++i) os << i << ',' << r.samples_ms[i] << '\n';
  return os.str();
}

}  // namespace ead
