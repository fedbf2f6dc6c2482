#include "efficientad/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "efficientad/error.hpp"
#include "efficientad/inference.hpp"
#include "efficientad/losses.hpp"
#include "efficientad/ops.hpp"
#include "efficientad/preprocess.hpp"
#include "efficientad/quantile.hpp"

namespace ead {
namespace {

void copy_into_channels(const Tensor& src, Tensor& dst, std::int64_t first) {
  auto out = dst.storage().begin() + first * dst.height() * dst.width();
  std::copy(src.storage().begin(), src.storage().end(), out);
}

void require_finite(double v, const char* name, std::int64_t iteration) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + name + " (" + std::to_string(v) +
                       ") at iteration " + std::to_string(iteration));
  }
}

std::vector<Tensor*> trainable(ModelBundle& bundle) {
  std::vector<Tensor*> params = bundle.student.parameter_tensors();
  for (Tensor* t : bundle.autoencoder.parameter_tensors()) params.push_back(t);
  return params;
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(p_hard >= 0.0 && p_hard < 1.0)) throw ConfigError("p_hard must be in [0, 1)");
  if (!(quantile_a >= 0.0 && quantile_a < quantile_b && quantile_b <= 1.0)) {
    throw ConfigError("quantiles must satisfy 0 <= a < b <= 1");
  }
  if (!(aug_lo > 0.0 && aug_lo <= aug_hi)) throw ConfigError("invalid augmentation range");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must be in (0, 1)");
  }
}

std::int64_t TrainConfig::decay_iteration() const {
  if (lr_decay_at >= 0) return lr_decay_at;
  return std::llround(0.95 * static_cast<double>(iterations));
}

double learning_rate_after(const TrainConfig& config, std::int64_t iteration) {
  return iteration > config.decay_iteration() ? config.lr_decayed : config.lr;
}

LossReport compute_step(const Network& teacher, const ChannelNorm& norm, const Network& student,
                        const Network& autoencoder, const Tensor& image_rgb,
                        const Tensor& penalty, const TrainConfig& config, Rng& rng,
                        NetworkGrads& student_grads, NetworkGrads& autoencoder_grads,
                        StepTrace* trace) {
  const auto channels = static_cast<std::int64_t>(norm.channels());
  auto run_teacher = [&](const Tensor& x) {
    if (trace) {
      ++trace->teacher_forwards;
      trace->teacher_inputs.push_back(x);
    }
    return normalize_channels(forward(teacher, x), norm);
  };
  LossReport report;

  // Student-teacher pair on the raw image: hard feature loss.
  const Tensor image = standardize(image_rgb);
  const Tensor target = run_teacher(image);
  {
    Tape tape;
    const Tensor out = forward(student, image, true, rng, &tape);
    HardLoss hard = hard_feature_loss(target, out.slice_channels(0, channels), config.p_hard);
    report.l_hard = hard.loss;
    Tensor grad = Tensor::zeros_like(out);
    copy_into_channels(hard.grad, grad, 0);
    if (trace) {
      trace->student_st_grad = std::move(hard.grad);
      trace->hard_mask = std::move(hard.mask);
      trace->hard_selected = hard.selected;
    }
    backward(student, tape, grad, student_grads);
  }

  // Pretraining penalty on the out-of-distribution image.
  double penalty_value = 0.0;
  {
    Tape tape;
    const Tensor out = forward(student, penalty, true, rng, &tape);
    LossWithGrad pen = penalty_loss(out, channels);
    penalty_value = pen.loss;
    backward(student, tape, pen.grad, student_grads);
  }
  report.l_st = report.l_hard + penalty_value;

  // Autoencoder branch on the augmented image.
  const Tensor augmented = standardize(augment(image_rgb, rng, config.aug_lo, config.aug_hi));
  Tape ae_tape;
  const Tensor ae_out = forward(autoencoder, augmented, true, rng, &ae_tape);
  const Tensor aug_target = run_teacher(augmented);
  Tape st_tape;
  const Tensor st_out = forward(student, augmented, true, rng, &st_tape);

  const PairLoss ae_loss = mse_loss(aug_target, ae_out);
  const PairLoss stae_loss = mse_loss(ae_out, st_out.slice_channels(channels, channels));
  report.l_ae = ae_loss.loss;
  report.l_stae = stae_loss.loss;

  Tensor ae_grad = ae_loss.grad_b;
  for (std::int64_t i = 0; i < ae_grad.size(); ++i) ae_grad[i] += stae_loss.grad_a[i];
  backward(autoencoder, ae_tape, ae_grad, autoencoder_grads);

  Tensor st_grad = Tensor::zeros_like(st_out);
  copy_into_channels(stae_loss.grad_b, st_grad, channels);
  backward(student, st_tape, st_grad, student_grads);

  report.l_total = report.l_st + report.l_ae + report.l_stae;
  return report;
}

TrainerState make_trainer_state(ModelBundle& bundle, const TrainConfig& config) {
  TrainerState state;
  state.adam = make_adam_state(trainable(bundle), config.lr, config.weight_decay);
  return state;
}

LossReport train_step(ModelBundle& bundle, TrainerState& state, const Tensor& image_rgb,
                      const Tensor& penalty, const TrainConfig& config, Rng& rng,
                      StepTrace* trace) {
  NetworkGrads student_grads = NetworkGrads::zeros_like(bundle.student);
  NetworkGrads ae_grads = NetworkGrads::zeros_like(bundle.autoencoder);
  const LossReport report =
      compute_step(bundle.teacher, bundle.teacher_norm, bundle.student, bundle.autoencoder,
                   image_rgb, penalty, config, rng, student_grads, ae_grads, trace);
  const std::int64_t iteration = state.iteration + 1;
  require_finite(report.l_hard, "L_hard", iteration);
  require_finite(report.l_st, "L_ST", iteration);
  require_finite(report.l_ae, "L_AE", iteration);
  require_finite(report.l_stae, "L_STAE", iteration);

  std::vector<const Tensor*> grads = student_grads.tensors();
  for (const Tensor* t : ae_grads.tensors()) grads.push_back(t);
  const std::vector<Tensor*> params = trainable(bundle);
  adam_step(params, grads, state.adam);
  state.iteration = iteration;
  state.adam.learning_rate = learning_rate_after(config, iteration);
  return report;
}

MapQuantiles quantiles_from_pools(std::span<const float> st_pool,
                                  std::span<const float> ae_pool, double a, double b) {
  auto pair = [&](std::span<const float> pool, const char* name, float& qa, float& qb) {
    qa = static_cast<float>(quantile(pool, a));
    qb = static_cast<float>(quantile(pool, b));
    if (!(qb > qa)) {
      const double widened = static_cast<double>(qa) + std::max(1e-6, 1e-6 * std::fabs(qa));
      float next = static_cast<float>(widened);
      if (!(next > qa)) next = std::nextafter(qa, std::numeric_limits<float>::infinity());
      spdlog::warn("{} map quantiles coincide at {}; widening q_b to {}", name, qa, next);
      qb = next;
    }
  };
  MapQuantiles q;
  pair(st_pool, "local", q.st_a, q.st_b);
  pair(ae_pool, "global", q.ae_a, q.ae_b);
  return q;
}

MapQuantiles fit_map_normalization(const ModelBundle& bundle, std::span<const Tensor> images,
                                   double a, double b) {
  if (images.empty()) throw ConfigError("fit_map_normalization: no validation images");
  std::vector<float> st_pool;
  std::vector<float> ae_pool;
  for (const Tensor& img : images) {
    const RawMaps raw = infer_raw_maps(bundle, img);
    const Tensor local = resize_map_to_input(raw.local);
    const Tensor global = resize_map_to_input(raw.global);
    st_pool.insert(st_pool.end(), local.storage().begin(), local.storage().end());
    ae_pool.insert(ae_pool.end(), global.storage().begin(), global.storage().end());
  }
  return quantiles_from_pools(st_pool, ae_pool, a, b);
}

void split_holdout(std::size_t n, double fraction, Rng& rng, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& holdout) {
  if (n < 2) throw ConfigError("need at least 2 training images for a validation holdout");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n - 1);
  holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  train.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train.begin(), train.end());
}

TrainResult train(const Network& teacher, std::span<const Tensor> images,
                  std::span<const Tensor> penalty_corpus, const TrainConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  if (images.empty()) throw ConfigError("train: empty training set");
  if (penalty_corpus.empty()) throw ConfigError("train: empty penalty corpus");
  if (teacher.out_channels() != config.arch.feature_channels()) {
    throw ShapeError("train: teacher emits " + std::to_string(teacher.out_channels()) +
                     " channels, architecture expects " +
                     std::to_string(config.arch.feature_channels()));
  }
  for (const Tensor& img : images) {
    if (img.rank() != 3 || img.channels() != 3 || img.height() != kImageSize ||
        img.width() != kImageSize) {
      throw ShapeError("train: training images must be 3x256x256, got " + img.shape_string());
    }
  }

  Rng rng(config.seed);
  TrainResult result;
  split_holdout(images.size(), config.holdout_fraction, rng, result.train_indices,
                result.holdout_indices);

  ModelBundle& bundle = result.bundle;
  bundle.arch = config.arch;
  bundle.teacher = teacher;
  {
    Rng init(rng.next_seed());
    bundle.student = make_pdn(config.arch, Role::student, init);
    bundle.autoencoder = make_autoencoder(config.arch, init);
  }

  std::vector<Tensor> train_std;
  train_std.reserve(result.train_indices.size());
  for (std::size_t i : result.train_indices) train_std.push_back(standardize(images[i]));
  bundle.teacher_norm = fit_channel_norm(bundle.teacher, train_std);
  train_std.clear();

  std::vector<Tensor> corpus;
  corpus.reserve(penalty_corpus.size());
  for (const Tensor& p : penalty_corpus) {
    corpus.push_back(bilinear_resize(p, 2 * kImageSize, 2 * kImageSize));
  }

  TrainerState state = make_trainer_state(bundle, config);
  double smooth = 0.0;
  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    const std::size_t idx = result.train_indices[rng.index(result.train_indices.size())];
    const Tensor& pen_src = corpus[rng.index(corpus.size())];
    const Tensor penalty =
        prepare_penalty_image(pen_src, rng, config.penalty_gray_prob, kImageSize);
    const LossReport report = train_step(bundle, state, images[idx], penalty, config, rng);
    smooth = it == 1 ? report.l_hard
                     : (1.0 - kSmoothingAlpha) * smooth + kSmoothingAlpha * report.l_hard;
    result.history.raw.push_back(report);
    result.history.smoothed_hard.push_back(smooth);
    if (progress) progress(it, report);
  }

  std::vector<Tensor> holdout_std;
  for (std::size_t i : result.holdout_indices) holdout_std.push_back(standardize(images[i]));
  bundle.quantiles =
      fit_map_normalization(bundle, holdout_std, config.quantile_a, config.quantile_b);
  return result;
}

void write_loss_csv(const LossHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,l_hard,l_st,l_ae,l_stae,l_total\n";
  char line[256];
  for (std::size_t i = 0; i < history.raw.size(); ++i) {
    const LossReport& r = history.raw[i];
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i + 1, r.l_hard, r.l_st,
                  r.l_ae, r.l_stae, r.l_total);
    out << line;
  }
}

}  // namespace ead
