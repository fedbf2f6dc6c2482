#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "efficientad/adam.hpp"
#include "efficientad/bundle.hpp"
#include "efficientad/network.hpp"
#include "efficientad/rng.hpp"

namespace ead {

struct TrainConfig {
  ArchConfig arch;
  std::int64_t iterations = 70000;
  // Iteration after which the learning rate drops; -1 means round(0.95 * iterations).
  std::int64_t lr_decay_at = -1;
  double lr = 1e-4;
  double lr_decayed = 1e-5;
  double weight_decay = 1e-5;
  double p_hard = 0.999;
  double quantile_a = 0.9;
  double quantile_b = 0.995;
  double aug_lo = 0.8;
  double aug_hi = 1.2;
  double penalty_gray_prob = 0.3;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
  std::int64_t decay_iteration() const;
};

// Learning rate held by the optimizer once `iteration` (1-based) has finished:
// the decay applies after iteration lr_decay_at.
double learning_rate_after(const TrainConfig& config, std::int64_t iteration);

struct LossReport {
  double l_hard = 0.0;
  double l_st = 0.0;
  double l_ae = 0.0;
  double l_stae = 0.0;
  double l_total = 0.0;
};

// Optional instrumentation of a single step.
struct StepTrace {
  int teacher_forwards = 0;
  std::vector<Tensor> teacher_inputs;  // standardized images the teacher saw, in order
  Tensor student_st_grad;              // d L_total / d S(I), first half channels
  std::vector<std::uint8_t> hard_mask;
  std::int64_t hard_selected = 0;
};

// Loss wiring of one training iteration. Evaluates every loss and accumulates
// gradients w.r.t. student and autoencoder parameters. Randomness (augmentation,
// dropout) is drawn from `rng` in a fixed order, so the same rng state gives the
// same result. `image_rgb` is an unstandardized RGB image in [0, 1];
// `penalty` is already standardized.
LossReport compute_step(const Network& teacher, const ChannelNorm& norm, const Network& student,
                        const Network& autoencoder, const Tensor& image_rgb,
                        const Tensor& penalty, const TrainConfig& config, Rng& rng,
                        NetworkGrads& student_grads, NetworkGrads& autoencoder_grads,
                        StepTrace* trace = nullptr);

// Adam over the union of student and autoencoder parameters.
struct TrainerState {
  AdamState adam;
  std::int64_t iteration = 0;
};

TrainerState make_trainer_state(ModelBundle& bundle, const TrainConfig& config);

// compute_step followed by one Adam update; throws NumericError on a
// non-finite loss.
LossReport train_step(ModelBundle& bundle, TrainerState& state, const Tensor& image_rgb,
                      const Tensor& penalty, const TrainConfig& config, Rng& rng,
                      StepTrace* trace = nullptr);

// Pools the resized pre-normalization maps of all validation images and takes
// the a- and b-quantiles of each pool. `images` are standardized.
MapQuantiles fit_map_normalization(const ModelBundle& bundle, std::span<const Tensor> images,
                                   double a, double b);

// Quantiles of already pooled map values; widens q_b when it equals q_a.
MapQuantiles quantiles_from_pools(std::span<const float> st_pool,
                                  std::span<const float> ae_pool, double a, double b);

inline constexpr double kSmoothingAlpha = 0.05;

struct LossHistory {
  std::vector<LossReport> raw;
  std::vector<double> smoothed_hard;  // EMA of l_hard with kSmoothingAlpha
};

struct TrainResult {
  ModelBundle bundle;
  LossHistory history;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> holdout_indices;
};

// Seeded split: max(1, round(fraction * n)) holdout images, the rest trains.
void split_holdout(std::size_t n, double fraction, Rng& rng, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& holdout);

using ProgressFn = std::function<void(std::int64_t iteration, const LossReport&)>;

// Full training run. `images` are unstandardized RGB 3 x 256 x 256 in [0, 1];
// `penalty_corpus` are RGB images of any size. Deterministic given config.seed.
TrainResult train(const Network& teacher, std::span<const Tensor> images,
                  std::span<const Tensor> penalty_corpus, const TrainConfig& config,
                  const ProgressFn& progress = {});

void write_loss_csv(const LossHistory& history, const std::string& path);

}  // namespace ead
