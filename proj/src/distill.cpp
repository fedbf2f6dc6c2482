#include "efficientad/distill.hpp"

#include <cmath>
#include <map>

#include "efficientad/adam.hpp"
#include "efficientad/error.hpp"
#include "efficientad/losses.hpp"
#include "efficientad/preprocess.hpp"

namespace ead {
namespace {

const Tensor& pick_target(const DistillSample& s, bool gray) {
  return gray ? *s.gray_target : s.target;
}

BatchPick draw(std::span<const DistillSample> samples, double gray_prob, Rng& rng) {
  BatchPick p;
  p.index = rng.index(samples.size());
  if (samples[p.index].gray_target && gray_prob > 0.0) p.gray = rng.bernoulli(gray_prob);
  return p;
}

}  // namespace

void DistillConfig::validate() const {
  arch.validate();
  if (iterations < 0) throw ConfigError("distill iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(gray_prob >= 0.0 && gray_prob <= 1.0)) throw ConfigError("gray_prob must be in [0, 1]");
  if (norm_sample_count == 0 || norm_sample_count < -1) {
    throw ConfigError("norm_sample_count must be >= 1 (or -1 for automatic)");
  }
}

std::int64_t DistillConfig::effective_norm_samples(std::size_t pairs) const {
  if (norm_sample_count > 0) return norm_sample_count;
  return std::min<std::int64_t>(10000, 10 * static_cast<std::int64_t>(pairs));
}

ChannelNorm fit_backbone_norm(std::span<const DistillSample> samples,
                              std::int64_t sample_count, double gray_prob, Rng& rng) {
  if (samples.empty()) throw ConfigError("fit_backbone_norm: no feature pairs");
  if (sample_count < 1) throw ConfigError("fit_backbone_norm: sample_count must be >= 1");
  // Multiplicity of each (pair, variant) among the draws; pooling the drawn
  // maps is the same as weighting each distinct map by how often it was drawn.
  std::map<std::pair<std::size_t, bool>, double> weight;
  for (std::int64_t i = 0; i < sample_count; ++i) {
    const BatchPick p = draw(samples, gray_prob, rng);
    weight[{p.index, p.gray}] += 1.0;
  }
  const std::int64_t c_n = samples.front().target.channels();
  std::vector<double> sum(static_cast<std::size_t>(c_n), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(c_n), 0.0);
  double count = 0.0;
  for (const auto& [key, w] : weight) {
    const Tensor& t = pick_target(samples[key.first], key.second);
    if (t.channels() != c_n) throw ShapeError("fit_backbone_norm: targets differ in channels");
    for (std::int64_t c = 0; c < c_n; ++c) {
      double s = 0.0;
      for (float v : t.channel(c)) s += v;
      sum[static_cast<std::size_t>(c)] += w * s;
    }
    count += w * static_cast<double>(t.height() * t.width());
  }
  for (double& s : sum) s /= count;
  for (const auto& [key, w] : weight) {
    const Tensor& t = pick_target(samples[key.first], key.second);
    for (std::int64_t c = 0; c < c_n; ++c) {
      const double mu = sum[static_cast<std::size_t>(c)];
      double s = 0.0;
      for (float v : t.channel(c)) s += (v - mu) * (v - mu);
      sq[static_cast<std::size_t>(c)] += w * s;
    }
  }
  ChannelNorm norm;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    norm.mean.push_back(static_cast<float>(sum[c]));
    norm.stddev.push_back(std::max(static_cast<float>(std::sqrt(sq[c] / count)), kStddevFloor));
  }
  return norm;
}

DistillBatch distill_batch(const Network& teacher, const ChannelNorm& backbone_norm,
                           std::span<const DistillSample> samples,
                           std::span<const BatchPick> picks, NetworkGrads* grads) {
  DistillBatch batch;
  const double inv_batch = 1.0 / static_cast<double>(picks.size());
  Rng unused(0);
  for (const BatchPick& p : picks) {
    const DistillSample& s = samples[p.index];
    const Tensor rgb = p.gray ? to_grayscale(s.image) : s.image;
    const Tensor target = normalize_channels(pick_target(s, p.gray), backbone_norm);
    Tape tape;
    const Tensor out = forward(teacher, standardize(rgb), true, unused, grads ? &tape : nullptr);
    if (!out.same_shape(target)) {
      throw ShapeError("distill: teacher output " + out.shape_string() + " vs target " +
                       target.shape_string() + " for " + s.image_path);
    }
    PairLoss l = mse_loss(out, target);
    batch.per_sample.push_back(l.loss);
    batch.loss += l.loss;
    if (grads) {
      for (float& g : l.grad_a.values()) g = static_cast<float>(g * inv_batch);
      backward(teacher, tape, l.grad_a, *grads);
    }
  }
  batch.loss *= inv_batch;
  return batch;
}

DistillResult distill(std::span<const DistillSample> samples, const DistillConfig& config,
                      const DistillProgressFn& progress) {
  config.validate();
  if (samples.empty()) throw ConfigError("distill: no feature pairs");
  Rng rng(config.seed);
  DistillResult result;
  {
    Rng init(rng.next_seed());
    result.teacher = make_pdn(config.arch, Role::teacher, init);
  }
  result.backbone_norm = fit_backbone_norm(
      samples, config.effective_norm_samples(samples.size()), config.gray_prob, rng);

  std::vector<Tensor*> params = result.teacher.parameter_tensors();
  AdamState adam = make_adam_state(params, config.lr, config.weight_decay);
  std::vector<BatchPick> picks(static_cast<std::size_t>(config.batch_size));
  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    for (BatchPick& p : picks) p = draw(samples, config.gray_prob, rng);
    NetworkGrads grads = NetworkGrads::zeros_like(result.teacher);
    const DistillBatch batch =
        distill_batch(result.teacher, result.backbone_norm, samples, picks, &grads);
    if (!std::isfinite(batch.loss)) {
      throw NumericError("non-finite distillation loss at iteration " + std::to_string(it));
    }
    adam_step(params, grads.tensors(), adam);
    result.losses.push_back(batch.loss);
    if (progress) progress(it, batch.loss);
  }
  return result;
}

}  // namespace ead
