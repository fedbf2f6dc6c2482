#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efficientad/nets.hpp"
#include "efficientad/rng.hpp"

namespace ead {

struct DistillConfig {
  ArchConfig arch;
  std::int64_t iterations = 60000;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  // Applies only to pairs that carry a gray-variant target.
  double gray_prob = 0.1;
  // -1 selects min(10000, 10 * |pairs|).
  std::int64_t norm_sample_count = -1;
  std::uint64_t seed = 7;

  void validate() const;
  std::int64_t effective_norm_samples(std::size_t pairs) const;
};

// One distillation example: the image (RGB in [0, 1], 3 x 256 x 256) and the
// raw backbone features for it, plus optionally the features of its gray version.
struct DistillSample {
  std::string image_path;
  Tensor image;
  Tensor target;
  std::optional<Tensor> gray_target;
};

// Mean and stddev of backbone features over `sample_count` draws with
// replacement; each draw uses the gray target with probability gray_prob when
// one exists.
ChannelNorm fit_backbone_norm(std::span<const DistillSample> samples,
                              std::int64_t sample_count, double gray_prob, Rng& rng);

struct BatchPick {
  std::size_t index = 0;
  bool gray = false;
};

struct DistillBatch {
  std::vector<double> per_sample;  // L_dist of every batch member
  double loss = 0.0;               // mean of per_sample
};

// Evaluates the batch loss and accumulates d loss / d theta (with the 1/B
// average) into `grads`.
DistillBatch distill_batch(const Network& teacher, const ChannelNorm& backbone_norm,
                           std::span<const DistillSample> samples,
                           std::span<const BatchPick> picks, NetworkGrads* grads);

struct DistillResult {
  Network teacher;
  ChannelNorm backbone_norm;
  std::vector<double> losses;  // batch loss per iteration
};

using DistillProgressFn = std::function<void(std::int64_t iteration, double loss)>;

DistillResult distill(std::span<const DistillSample> samples, const DistillConfig& config,
                      const DistillProgressFn& progress = {});

}  // namespace ead
