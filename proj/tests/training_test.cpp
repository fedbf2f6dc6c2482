#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "efficientad/error.hpp"
#include "efficientad/losses.hpp"
#include "efficientad/preprocess.hpp"
#include "efficientad/training.hpp"
#include "surrogate.hpp"
#include "test_util.hpp"

namespace ead {
namespace {

using testing::random_tensor;

TEST(HardLoss, PermutationExample) {
  // D is a permutation of 1..1000; the 0.999-quantile is 999.001.
  std::vector<float> d(1000);
  std::iota(d.begin(), d.end(), 1.0f);
  Rng rng(1);
  std::shuffle(d.begin(), d.end(), rng.engine());
  Tensor teacher({1, 10, 100});
  Tensor student({1, 10, 100});
  for (std::int64_t i = 0; i < 1000; ++i) student[i] = std::sqrt(d[static_cast<std::size_t>(i)]);
  const HardLoss h = hard_feature_loss(teacher, student, 0.999);
  EXPECT_NEAR(h.threshold, 999.001, 1e-3);
  EXPECT_EQ(h.selected, 1);
  EXPECT_NEAR(h.loss, 1000.0, 1e-3);
  for (std::int64_t i = 0; i < 1000; ++i) {
    if (d[static_cast<std::size_t>(i)] == 1000.0f) {
      EXPECT_NEAR(h.grad[i], 2.0 * std::sqrt(1000.0), 1e-3);
      EXPECT_EQ(h.mask[static_cast<std::size_t>(i)], 1);
    } else {
      EXPECT_EQ(h.grad[i], 0.0f);
      EXPECT_EQ(h.mask[static_cast<std::size_t>(i)], 0);
    }
  }
}

TEST(HardLoss, ZeroQuantileIsPlainMse) {
  Rng rng(2);
  const Tensor t = random_tensor({3, 4, 4}, rng);
  const Tensor s = random_tensor({3, 4, 4}, rng);
  const HardLoss h = hard_feature_loss(t, s, 0.0);
  const PairLoss m = mse_loss(s, t);
  EXPECT_NEAR(h.loss, m.loss, 1e-9);
  EXPECT_EQ(h.selected, t.size());
  for (std::int64_t i = 0; i < t.size(); ++i) EXPECT_NEAR(h.grad[i], m.grad_a[i], 1e-7);
}

TEST(HardLoss, SelectionMatchesThreshold) {
  Rng rng(3);
  const Tensor t = random_tensor({4, 8, 8}, rng);
  const Tensor s = random_tensor({4, 8, 8}, rng);
  for (double p : {0.5, 0.9, 0.99}) {
    const HardLoss h = hard_feature_loss(t, s, p);
    std::int64_t count = 0;
    double sum = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double d = (static_cast<double>(t[i]) - s[i]) * (static_cast<double>(t[i]) - s[i]);
      const bool sel = static_cast<float>(d) >= static_cast<float>(h.threshold);
      EXPECT_EQ(h.mask[static_cast<std::size_t>(i)], sel ? 1 : 0);
      if (sel) {
        ++count;
        sum += d;
      } else {
        EXPECT_EQ(h.grad[i], 0.0f);
      }
    }
    EXPECT_EQ(h.selected, count);
    EXPECT_NEAR(h.loss, sum / static_cast<double>(count), 1e-6);
  }
  EXPECT_THROW(hard_feature_loss(t, s, 1.0), ConfigError);
  EXPECT_THROW(hard_feature_loss(t, Tensor({4, 8, 7}), 0.5), ShapeError);
}

TEST(PenaltyLoss, MeanSquareOverFirstChannels) {
  Tensor s({4, 1, 2}, std::vector<float>{1, 2, 3, 4, 50, 60, 70, 80});
  const LossWithGrad l = penalty_loss(s, 2);
  EXPECT_DOUBLE_EQ(l.loss, (1.0 + 4.0 + 9.0 + 16.0) / 4.0);
  const float expect[] = {0.5f, 1.0f, 1.5f, 2.0f, 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) EXPECT_FLOAT_EQ(l.grad[i], expect[i]);
}

TEST(MseLoss, GradientsAreOpposite) {
  const Tensor a({2}, std::vector<float>{1.0f, 3.0f});
  const Tensor b({2}, std::vector<float>{0.0f, 1.0f});
  const PairLoss l = mse_loss(a, b);
  EXPECT_DOUBLE_EQ(l.loss, 2.5);
  EXPECT_FLOAT_EQ(l.grad_a[0], 1.0f);
  EXPECT_FLOAT_EQ(l.grad_a[1], 2.0f);
  EXPECT_FLOAT_EQ(l.grad_b[1], -2.0f);
}

TEST(Augment, ClosedForms) {
  Tensor rgb({3, 1, 2}, std::vector<float>{0.2f, 0.9f, 0.4f, 0.5f, 0.6f, 0.1f});
  const Tensor b = apply_augmentation(rgb, {AugmentKind::brightness, 1.2});
  EXPECT_NEAR(b[0], 0.24f, 1e-6);
  EXPECT_FLOAT_EQ(b[1], 1.0f);  // clamped
  const float y0 = 0.299f * 0.2f + 0.587f * 0.4f + 0.114f * 0.6f;
  const float y1 = 0.299f * 0.9f + 0.587f * 0.5f + 0.114f * 0.1f;
  const Tensor c = apply_augmentation(rgb, {AugmentKind::contrast, 0.8});
  const float mean = 0.5f * (y0 + y1);
  EXPECT_NEAR(c[0], 0.8f * 0.2f + 0.2f * mean, 1e-6);
  const Tensor s = apply_augmentation(rgb, {AugmentKind::saturation, 0.8});
  EXPECT_NEAR(s[3], 0.8f * 0.5f + 0.2f * y1, 1e-6);
  const Tensor id = apply_augmentation(rgb, {AugmentKind::saturation, 1.0});
  for (std::int64_t i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(id[i], rgb[i]);
}

TEST(Augment, SampledFactorsStayInRange) {
  Rng rng(4);
  int kinds[3] = {0, 0, 0};
  for (int i = 0; i < 3000; ++i) {
    const Augmentation a = sample_augmentation(rng, 0.8, 1.2);
    ASSERT_GE(a.factor, 0.8);
    ASSERT_LT(a.factor, 1.2);
    ++kinds[static_cast<int>(a.kind)];
  }
  for (int k : kinds) EXPECT_NEAR(k, 1000, 150);
}

TEST(Preprocess, StandardizeClosedForm) {
  const Tensor gray({3, 2, 2}, 0.5f);
  const Tensor z = standardize(gray);
  EXPECT_NEAR(z.at(0, 0, 0), (0.5 - 0.485) / 0.229, 1e-6);
  EXPECT_NEAR(z.at(2, 1, 1), (0.5 - 0.406) / 0.225, 1e-6);
  const Tensor back = unstandardize(z);
  for (std::int64_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], 0.5f, 1e-6);
}

TEST(Preprocess, PenaltyImage) {
  Rng rng(5);
  const Tensor src = random_tensor({3, 100, 150}, rng, 0.0, 1.0);
  Rng a(9), b(9);
  const Tensor p = prepare_penalty_image(src, a, 0.3, 64);
  EXPECT_EQ(p.dims(), (std::vector<std::int64_t>{3, 64, 64}));
  EXPECT_EQ(p, prepare_penalty_image(src, b, 0.3, 64));
  Rng c(10);
  const Tensor g = unstandardize(prepare_penalty_image(src, c, 1.0, 64));
  for (std::int64_t i = 0; i < 64 * 64; ++i) {
    EXPECT_NEAR(g[i], g[i + 64 * 64], 1e-5);
    EXPECT_NEAR(g[i], g[i + 2 * 64 * 64], 1e-5);
  }
}

TEST(Schedule, DecayAfterNinetyFivePercent) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.decay_iteration(), 66500);
  EXPECT_DOUBLE_EQ(learning_rate_after(cfg, 1), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate_after(cfg, 66500), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate_after(cfg, 66501), 1e-5);
  cfg.lr_decay_at = 10;
  EXPECT_DOUBLE_EQ(learning_rate_after(cfg, 11), 1e-5);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.quantile_a = 0.999;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.p_hard = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(MapQuantiles, PoolExample) {
  std::vector<float> pool(100);
  std::iota(pool.begin(), pool.end(), 0.0f);
  const MapQuantiles q = quantiles_from_pools(pool, pool, 0.9, 0.995);
  EXPECT_NEAR(q.st_a, 89.1f, 1e-4);
  EXPECT_NEAR(q.st_b, 98.505f, 1e-4);
  EXPECT_EQ(q.ae_a, q.st_a);
  const std::vector<float> flat(10, 2.0f);
  const MapQuantiles w = quantiles_from_pools(flat, flat, 0.9, 0.995);
  EXPECT_GT(w.st_b, w.st_a);
}

TEST(Holdout, SplitIsPartitionAndSeeded) {
  Rng a(3), b(3);
  std::vector<std::size_t> tr1, ho1, tr2, ho2;
  split_holdout(48, 0.1, a, tr1, ho1);
  split_holdout(48, 0.1, b, tr2, ho2);
  EXPECT_EQ(ho1.size(), 5u);
  EXPECT_EQ(tr1.size(), 43u);
  EXPECT_EQ(ho1, ho2);
  std::vector<std::size_t> all = tr1;
  all.insert(all.end(), ho1.begin(), ho1.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(split_holdout(1, 0.1, a, tr1, ho1), ConfigError);
}

class StepTest : public ::testing::Test {
 protected:
  testing::Surrogate s = testing::make_surrogate(21);
  Rng data{22};
  Tensor image = random_tensor({3, 8, 8}, data, 0.05, 0.95);
  Tensor penalty = random_tensor({3, 8, 8}, data);
  TrainConfig cfg;

  LossReport run(std::uint64_t seed, NetworkGrads& sg, NetworkGrads& ag, StepTrace* trace) {
    Rng rng(seed);
    return compute_step(s.teacher, s.norm, s.student, s.autoencoder, image, penalty, cfg, rng,
                        sg, ag, trace);
  }
};

TEST_F(StepTest, TeacherSeesRawThenAugmentedImage) {
  cfg.p_hard = 0.5;
  auto sg = NetworkGrads::zeros_like(s.student);
  auto ag = NetworkGrads::zeros_like(s.autoencoder);
  StepTrace trace;
  run(1, sg, ag, &trace);
  ASSERT_EQ(trace.teacher_forwards, 2);
  EXPECT_EQ(trace.teacher_inputs[0], standardize(image));
  EXPECT_FALSE(trace.teacher_inputs[1] == standardize(image));
}

TEST_F(StepTest, UnselectedElementsGetZeroGradient) {
  cfg.p_hard = 0.75;
  auto sg = NetworkGrads::zeros_like(s.student);
  auto ag = NetworkGrads::zeros_like(s.autoencoder);
  StepTrace trace;
  run(2, sg, ag, &trace);
  ASSERT_EQ(trace.hard_mask.size(), static_cast<std::size_t>(trace.student_st_grad.size()));
  std::int64_t selected = 0;
  for (std::size_t i = 0; i < trace.hard_mask.size(); ++i) {
    if (trace.hard_mask[i]) {
      ++selected;
    } else {
      EXPECT_EQ(trace.student_st_grad[static_cast<std::int64_t>(i)], 0.0f);
    }
  }
  EXPECT_EQ(selected, trace.hard_selected);
  EXPECT_GT(selected, 0);
}

TEST_F(StepTest, SameSeedSameGradients) {
  auto sg1 = NetworkGrads::zeros_like(s.student), ag1 = NetworkGrads::zeros_like(s.autoencoder);
  auto sg2 = NetworkGrads::zeros_like(s.student), ag2 = NetworkGrads::zeros_like(s.autoencoder);
  const LossReport a = run(3, sg1, ag1, nullptr);
  const LossReport b = run(3, sg2, ag2, nullptr);
  EXPECT_EQ(a.l_total, b.l_total);
  for (std::size_t k = 0; k < sg1.params.size(); ++k) EXPECT_EQ(sg1.params[k].weight, sg2.params[k].weight);
  for (std::size_t k = 0; k < ag1.params.size(); ++k) EXPECT_EQ(ag1.params[k].weight, ag2.params[k].weight);
}

TEST_F(StepTest, TotalIsSumOfParts) {
  auto sg = NetworkGrads::zeros_like(s.student), ag = NetworkGrads::zeros_like(s.autoencoder);
  const LossReport r = run(4, sg, ag, nullptr);
  EXPECT_NEAR(r.l_total, r.l_st + r.l_ae + r.l_stae, 1e-12);
  EXPECT_GE(r.l_st, r.l_hard);
}

// Analytic student and autoencoder gradients against central differences of l_total.
TEST_F(StepTest, GradientsMatchFiniteDifferences) {
  cfg.p_hard = 0.5;
  const std::uint64_t seed = 5;
  // Small enough that few relu pre-activations cross zero, large enough for float forwards.
  constexpr double kEps = 3e-4;
  auto sg = NetworkGrads::zeros_like(s.student), ag = NetworkGrads::zeros_like(s.autoencoder);
  run(seed, sg, ag, nullptr);
  auto loss = [&] {
    auto g1 = NetworkGrads::zeros_like(s.student), g2 = NetworkGrads::zeros_like(s.autoencoder);
    return run(seed, g1, g2, nullptr).l_total;
  };
  for (std::size_t k = 0; k < s.student.params.size(); ++k) {
    EXPECT_LT(testing::relative_error(sg.params[k].weight,
                                      testing::numeric_grad(s.student.params[k].weight, loss, kEps)),
              1e-3)
        << "student layer " << k;
    EXPECT_LT(testing::relative_error(sg.params[k].bias,
                                      testing::numeric_grad(s.student.params[k].bias, loss, kEps)),
              1e-3);
  }
  for (std::size_t k = 0; k < s.autoencoder.params.size(); ++k) {
    EXPECT_LT(testing::relative_error(
                  ag.params[k].weight,
                  testing::numeric_grad(s.autoencoder.params[k].weight, loss, kEps)),
              1e-3)
        << "autoencoder layer " << k;
  }
}

TEST(TrainStep, MovesParametersAndDecaysRate) {
  testing::Surrogate s = testing::make_surrogate(31);
  ModelBundle b;
  b.teacher = s.teacher;
  b.student = s.student;
  b.autoencoder = s.autoencoder;
  b.teacher_norm = s.norm;
  TrainConfig cfg;
  cfg.iterations = 2;
  cfg.lr_decay_at = 1;
  TrainerState st = make_trainer_state(b, cfg);
  Rng rng(1);
  const Tensor img = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  const Tensor pen = random_tensor({3, 8, 8}, rng);
  const Tensor before = b.student.params[0].weight;
  train_step(b, st, img, pen, cfg, rng);
  EXPECT_EQ(st.iteration, 1);
  EXPECT_DOUBLE_EQ(st.adam.learning_rate, cfg.lr);
  EXPECT_FALSE(before == b.student.params[0].weight);
  EXPECT_EQ(b.teacher.params[0].weight, s.teacher.params[0].weight);
  train_step(b, st, img, pen, cfg, rng);
  EXPECT_DOUBLE_EQ(st.adam.learning_rate, cfg.lr_decayed);
}

}  // namespace
}  // namespace ead
