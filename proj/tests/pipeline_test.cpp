#include <gtest/gtest.h>

#include <cmath>

#include "efficientad/distill.hpp"
#include "efficientad/error.hpp"
#include "efficientad/inference.hpp"
#include "efficientad/preprocess.hpp"
#include "efficientad/synthetic.hpp"
#include "efficientad/training.hpp"
#include "test_util.hpp"

namespace ead {
namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.width_divisor = 32;
  return a;
}

TEST(NormalizeMap, SendsQuantilesToZeroAndTenth) {
  Tensor m({1, 1, 3}, std::vector<float>{2.0f, 4.0f, 3.0f});
  const Tensor n = normalize_map(m, 2.0, 4.0);
  EXPECT_NEAR(n[0], 0.0, 1e-7);
  EXPECT_NEAR(n[1], 0.1, 1e-7);
  EXPECT_NEAR(n[2], 0.05, 1e-7);
}

TEST(Synthetic, DatasetCountsAndMasks) {
  SyntheticConfig cfg;
  cfg.normal_train = 3;
  cfg.normal_test = 2;
  cfg.structural = 2;
  cfg.layout = 2;
  cfg.natural = 2;
  const SyntheticDataset d = make_synthetic_dataset(cfg);
  EXPECT_EQ(d.train.size(), 3u);
  EXPECT_EQ(d.natural.size(), 2u);
  ASSERT_EQ(d.test.size(), 6u);
  for (const SyntheticImage& im : d.test) {
    double fg = 0.0;
    for (float v : im.mask.values()) fg += v;
    if (im.defect_type == "good") {
      EXPECT_EQ(fg, 0.0);
    } else {
      EXPECT_GT(fg, 50.0) << im.defect_type;
    }
    for (float v : im.rgb.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  const SyntheticDataset again = make_synthetic_dataset(cfg);
  EXPECT_EQ(again.test[3].rgb, d.test[3].rgb);
}

TEST(Distill, LossDecreasesOnFixedPairs) {
  ArchConfig arch = tiny_arch();
  Rng rng(3);
  const Network reference = make_pdn(arch, Role::teacher, rng);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(make_natural_image(rng, 256));
  const auto samples = reference_samples(reference, images);
  DistillConfig cfg;
  cfg.arch = arch;
  cfg.iterations = 30;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  const DistillResult r = distill(samples, cfg);
  ASSERT_EQ(r.losses.size(), 30u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) {
    first += r.losses[static_cast<std::size_t>(i)];
    last += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(last, first);
  const DistillResult again = distill(samples, cfg);
  EXPECT_EQ(again.losses, r.losses);
}

TEST(Distill, BatchGradientIsMeanOfMembers) {
  ArchConfig arch = tiny_arch();
  Rng rng(4);
  const Network reference = make_pdn(arch, Role::teacher, rng);
  const Network teacher = make_pdn(arch, Role::teacher, rng);
  std::vector<Tensor> images{make_natural_image(rng, 256), make_natural_image(rng, 256)};
  const auto samples = reference_samples(reference, images);
  Rng nr(1);
  const ChannelNorm norm = fit_backbone_norm(samples, 20, 0.1, nr);
  const std::vector<BatchPick> both{{0, false}, {1, true}};
  auto g = NetworkGrads::zeros_like(teacher);
  const DistillBatch batch = distill_batch(teacher, norm, samples, both, &g);
  ASSERT_EQ(batch.per_sample.size(), 2u);
  EXPECT_NEAR(batch.loss, 0.5 * (batch.per_sample[0] + batch.per_sample[1]), 1e-12);
  auto g0 = NetworkGrads::zeros_like(teacher), g1 = NetworkGrads::zeros_like(teacher);
  distill_batch(teacher, norm, samples, std::vector<BatchPick>{{0, false}}, &g0);
  distill_batch(teacher, norm, samples, std::vector<BatchPick>{{1, true}}, &g1);
  for (std::int64_t i = 0; i < g.params[0].weight.size(); ++i) {
    EXPECT_NEAR(g.params[0].weight[i],
                0.5 * (g0.params[0].weight[i] + g1.params[0].weight[i]), 1e-6);
  }
  DistillSample wrong = samples[0];
  wrong.target = Tensor({12, 32, 32});
  std::vector<DistillSample> bad{wrong};
  EXPECT_THROW(distill_batch(teacher, norm, bad, std::vector<BatchPick>{{0, false}}, nullptr),
               ShapeError);
}

TEST(Distill, BackboneNormOverDraws) {
  // Two constant targets drawn with replacement: the mean is their weighted mix.
  std::vector<DistillSample> s(2);
  s[0].image = Tensor({3, 256, 256});
  s[0].target = Tensor({1, 2, 2}, 1.0f);
  s[1].image = Tensor({3, 256, 256});
  s[1].target = Tensor({1, 2, 2}, 3.0f);
  Rng rng(5);
  const ChannelNorm n = fit_backbone_norm(s, 4000, 0.0, rng);
  EXPECT_NEAR(n.mean[0], 2.0, 0.1);
  EXPECT_NEAR(n.stddev[0], 1.0, 0.02);
}

TEST(Train, TinyRunIsDeterministicAndInfers) {
  ArchConfig arch = tiny_arch();
  Rng rng(6);
  const Network teacher = make_pdn(arch, Role::teacher, rng);
  SyntheticConfig sc;
  sc.normal_train = 4;
  sc.normal_test = 0;
  sc.structural = 0;
  sc.layout = 0;
  sc.natural = 2;
  const SyntheticDataset d = make_synthetic_dataset(sc);
  TrainConfig cfg;
  cfg.arch = arch;
  cfg.iterations = 3;
  cfg.holdout_fraction = 0.25;
  const TrainResult a = train(teacher, d.train, d.natural, cfg);
  const TrainResult b = train(teacher, d.train, d.natural, cfg);
  EXPECT_EQ(a.history.raw.size(), 3u);
  EXPECT_EQ(a.holdout_indices.size(), 1u);
  EXPECT_EQ(a.bundle.quantiles, b.bundle.quantiles);
  EXPECT_EQ(a.bundle.student.params[2].weight, b.bundle.student.params[2].weight);
  EXPECT_GT(a.bundle.quantiles.st_b, a.bundle.quantiles.st_a);

  const Tensor img = standardize(d.train[a.holdout_indices[0]]);
  const AnomalyResult r = infer(a.bundle, img);
  EXPECT_EQ(r.combined.dims(), (std::vector<std::int64_t>{1, 256, 256}));
  float mx = r.combined[0];
  for (float v : r.combined.values()) mx = std::max(mx, v);
  EXPECT_EQ(r.image_score, mx);
  for (std::int64_t i = 0; i < r.combined.size(); ++i) {
    EXPECT_NEAR(r.combined[i], 0.5f * r.local[i] + 0.5f * r.global[i], 1e-6);
  }
  EXPECT_THROW(infer(a.bundle, Tensor({3, 128, 128})), ShapeError);
}

}  // namespace
}  // namespace ead
