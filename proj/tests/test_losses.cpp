#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ocogan/errors.hpp"
#include "ocogan/losses.hpp"
#include "oracles.hpp"

using namespace ocogan;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

torch::Tensor d64(std::initializer_list<double> v) { return torch::tensor(std::vector<double>(v), torch::kFloat64); }

}  // namespace

TEST(LossDUncond, ZeroLogitsGiveTwoLn2) {
  EXPECT_NEAR(loss_d_uncond(d64({0.0}), d64({0.0})).item<double>(), 2 * kLn2, 1e-12);
}

TEST(LossDUncond, PerfectDiscriminatorLimit) {
  EXPECT_LT(loss_d_uncond(d64({60.0, 80.0}), d64({-60.0, -90.0})).item<double>(), 1e-20);
}

TEST(LossDUncond, MatchesNaiveFormula) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> r(7), f(5);
    for (auto& v : r) v = nd(rng);
    for (auto& v : f) v = nd(rng);
    const double got = loss_d_uncond(torch::tensor(r, torch::kFloat64), torch::tensor(f, torch::kFloat64)).item<double>();
    EXPECT_NEAR(got, oracle::loss_d_uncond(r, f), 1e-9);
  }
}

TEST(LossGUncond, ZeroLogitGivesLn2) { EXPECT_NEAR(loss_g_uncond(d64({0.0})).item<double>(), kLn2, 1e-12); }

TEST(LossGUncond, LargeLogitGivesZero) { EXPECT_LT(loss_g_uncond(d64({80.0})).item<double>(), 1e-20); }

TEST(LossGUncond, GradientAtZeroIsMinusHalf) {
  auto x = d64({0.0}).requires_grad_(true);
  loss_g_uncond(x).backward();
  EXPECT_NEAR(x.grad().item<double>(), -0.5, 1e-15);
}

TEST(ClassWeights, UniformFrequenciesGiveOnes) {
  auto seg = torch::zeros({1, 4, 2, 2}, torch::kFloat64);
  seg[0][0][0][0] = 1;
  seg[0][1][0][1] = 1;
  seg[0][2][1][0] = 1;
  seg[0][3][1][1] = 1;
  auto a = class_weights(seg);
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(a[k].item<double>(), 1.0);
}

TEST(ClassWeights, FrozenFixtureHalfQuarterQuarter) {
  // freq (0.5, 0.25, 0.25), 3 present classes: alpha_k = 1 / (freq_k * 3).
  auto seg = torch::zeros({1, 3, 2, 2}, torch::kFloat64);
  seg[0][0][0][0] = 1;
  seg[0][0][0][1] = 1;
  seg[0][1][1][0] = 1;
  seg[0][2][1][1] = 1;
  auto a = class_weights(seg);
  EXPECT_NEAR(a[0].item<double>(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(a[1].item<double>(), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(a[2].item<double>(), 4.0 / 3.0, 1e-15);
}

TEST(ClassWeights, AbsentClassIsExactlyZero) {
  auto seg = torch::zeros({2, 3, 2, 2}, torch::kFloat64);
  seg.select(1, 0).fill_(1.0);
  auto a = class_weights(seg);
  EXPECT_EQ(a[1].item<double>(), 0.0);
  EXPECT_EQ(a[2].item<double>(), 0.0);
  EXPECT_TRUE(torch::isfinite(a).all().item<bool>());
  EXPECT_DOUBLE_EQ(a[0].item<double>(), 1.0);
}

TEST(ClassWeights, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    auto seg = oracle::random_seg(2, 4, 3, 3, rng);
    auto a = class_weights(seg);
    auto expect = oracle::class_weights(seg);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(a[k].item<double>(), expect[k], 1e-12);
  }
}

TEST(LossDCond, UniformLogitsGiveLn4PerTerm) {
  std::mt19937_64 rng(1);
  auto seg = oracle::random_seg(2, 3, 4, 4, rng);
  auto logits = torch::zeros({2, 4, 4, 4}, torch::kFloat64);
  auto ones = torch::ones({3}, torch::kFloat64);
  EXPECT_NEAR(loss_d_cond(logits, seg, logits, ones).item<double>(), 2 * std::log(4.0), 1e-12);
  EXPECT_NEAR(loss_g_cond(logits, seg, ones).item<double>(), std::log(4.0), 1e-12);
}

TEST(LossDCond, PerfectLogitsGiveZero) {
  std::mt19937_64 rng(2);
  auto seg = oracle::random_seg(2, 3, 4, 4, rng);
  auto fake_class = torch::zeros({2, 1, 4, 4}, torch::kFloat64);
  auto real = torch::cat({seg, fake_class}, 1) * 60.0;
  auto fake = torch::cat({torch::zeros_like(seg), torch::ones_like(fake_class)}, 1) * 60.0;
  auto alpha = class_weights(seg);
  EXPECT_LT(loss_d_cond(real, seg, fake, alpha).item<double>(), 1e-6);
  EXPECT_LT(loss_g_cond(real, seg, alpha).item<double>(), 1e-6);
}

TEST(LossDCond, MatchesBruteForceLoop) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    auto seg = oracle::random_seg(2, 3, 4, 4, rng);
    auto real = torch::randn({2, 4, 4, 4}, torch::kFloat64) * 2;
    auto fake = torch::randn({2, 4, 4, 4}, torch::kFloat64) * 2;
    auto alpha = oracle::class_weights(seg);
    auto alpha_t = torch::tensor(alpha, torch::kFloat64);
    EXPECT_NEAR(loss_d_cond(real, seg, fake, alpha_t).item<double>(), oracle::loss_d_cond(real, seg, fake, alpha),
                1e-9);
    EXPECT_NEAR(loss_g_cond(fake, seg, alpha_t).item<double>(), oracle::loss_g_cond(fake, seg, alpha), 1e-9);
  }
}

TEST(LossDCond, ShapeMismatchIsDataError) {
  auto seg = torch::zeros({1, 3, 4, 4}, torch::kFloat64);
  auto logits = torch::zeros({1, 3, 4, 4}, torch::kFloat64);
  EXPECT_THROW(loss_g_cond(logits, seg, torch::ones({3}, torch::kFloat64)), DataError);
}

TEST(Losses, NonNegativeAndFinite) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    auto seg = oracle::random_seg(2, 3, 4, 4, rng);
    auto real = torch::randn({2, 4, 4, 4}, torch::kFloat64) * 5;
    auto fake = torch::randn({2, 4, 4, 4}, torch::kFloat64) * 5;
    auto alpha = class_weights(seg);
    for (double v : {loss_d_cond(real, seg, fake, alpha).item<double>(), loss_g_cond(fake, seg, alpha).item<double>(),
                     loss_d_uncond(real.flatten(), fake.flatten()).item<double>(),
                     loss_g_uncond(fake.flatten()).item<double>()}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto seg = oracle::random_seg(2, 3, 4, 4, rng);
  auto alpha = class_weights(seg);
  auto real = (torch::randn({2, 4, 4, 4}, torch::kFloat64)).requires_grad_(true);
  auto fake = (torch::randn({2, 4, 4, 4}, torch::kFloat64)).requires_grad_(true);
  auto lr = torch::randn({6}, torch::kFloat64).requires_grad_(true);
  auto lf = torch::randn({6}, torch::kFloat64).requires_grad_(true);
  auto mask = labelmix_mask(seg, at::make_generator<at::CPUGeneratorImpl>(3)).to(torch::kFloat64);
  auto mixed = torch::randn({2, 4, 4, 4}, torch::kFloat64).requires_grad_(true);

  auto check = [](const std::function<torch::Tensor()>& f,
                  std::vector<std::pair<std::string, torch::Tensor>> in) {
    auto r = oracle::finite_difference_check(f, in, 1e-4, 64);
    EXPECT_LE(r.max_rel_error, 1e-3) << r.worst;
  };
  check([&] { return loss_d_uncond(lr, lf); }, {{"real", lr}, {"fake", lf}});
  check([&] { return loss_g_uncond(lf); }, {{"fake", lf}});
  check([&] { return loss_d_cond(real, seg, fake, alpha); }, {{"real", real}, {"fake", fake}});
  check([&] { return loss_g_cond(fake, seg, alpha); }, {{"fake", fake}});
  check([&] { return labelmix_consistency(mixed, real, fake, mask); },
        {{"mixed", mixed}, {"real", real}, {"fake", fake}});
}

TEST(R1, ConstantHeadGivesZero) {
  auto x = torch::randn({3, 2}, torch::kFloat64);
  auto head = [](const torch::Tensor& t) { return t.sum(1) * 0.0 + 1.0; };
  EXPECT_EQ(r1_penalty(x, head, 10.0).item<double>(), 0.0);
}

TEST(R1, LinearHeadGivesHalfGammaNormSquared) {
  auto w = torch::tensor({0.5, -2.0, 3.0}, torch::kFloat64);
  auto x = torch::randn({4, 3}, torch::kFloat64);
  auto head = [&](const torch::Tensor& t) { return torch::mv(t, w); };
  EXPECT_NEAR(r1_penalty(x, head, 10.0).item<double>(), 5.0 * w.pow(2).sum().item<double>(), 1e-9);
  EXPECT_NEAR(r1_penalty(x, head, 10.0, 16.0).item<double>(), 16 * 5.0 * w.pow(2).sum().item<double>(), 1e-9);
}

TEST(R1, MatchesFiniteDifferenceGradientNorm) {
  torch::manual_seed(0);
  auto w1 = torch::randn({5, 3}, torch::kFloat64);
  auto w2 = torch::randn({5}, torch::kFloat64);
  auto head = [&](const torch::Tensor& t) { return torch::mv(torch::tanh(torch::mm(t, w1.t())), w2); };
  auto x = torch::randn({4, 3}, torch::kFloat64);
  const double h = 1e-5;
  double sum = 0.0;
  for (int64_t n = 0; n < 4; ++n) {
    for (int64_t j = 0; j < 3; ++j) {
      auto xp = x.clone(), xm = x.clone();
      xp[n][j] += h;
      xm[n][j] -= h;
      const double g = (head(xp)[n].item<double>() - head(xm)[n].item<double>()) / (2 * h);
      sum += g * g;
    }
  }
  const double expect = 0.5 * 10.0 * sum / 4.0;
  const double got = r1_penalty(x, head, 10.0).item<double>();
  EXPECT_NEAR(got, expect, 1e-3 * expect);
}

TEST(R1, DisconnectedHeadIsInternalError) {
  auto x = torch::randn({2, 3}, torch::kFloat64);
  auto head = [](const torch::Tensor&) { return torch::ones({2}, torch::kFloat64).requires_grad_(true); };
  EXPECT_THROW(r1_penalty(x, head, 10.0), InternalError);
}

TEST(R1, LazyScheduleMatchesEveryStepInExpectation) {
  // Frozen linear head: every-step application and every-16th-step x16 have equal means.
  auto w = torch::randn({3}, torch::kFloat64);
  auto head = [&](const torch::Tensor& t) { return torch::mv(t.pow(2), w); };
  torch::manual_seed(1);
  double every = 0.0, lazy = 0.0;
  const int steps = 1600;
  for (int s = 1; s <= steps; ++s) {
    auto x = torch::randn({8, 3}, torch::kFloat64);
    const double p = r1_penalty(x, head, 10.0).item<double>();
    every += p;
    if (s % 16 == 0) lazy += r1_penalty(x, head, 10.0, 16.0).item<double>();
  }
  every /= steps;
  lazy /= steps;
  EXPECT_NEAR(lazy, every, 0.15 * every);
}

TEST(LabelMixMask, SingleClassMapIsConstant) {
  auto seg = torch::zeros({6, 3, 4, 4});
  seg.select(1, 1).fill_(1.0);
  auto m = labelmix_mask(seg, at::make_generator<at::CPUGeneratorImpl>(9));
  for (int64_t n = 0; n < 6; ++n) {
    const double v = m[n][0][0][0].item<double>();
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_TRUE((m[n] == v).all().item<bool>());
  }
}

TEST(LabelMixMask, ConstantWithinEachClass) {
  std::mt19937_64 rng(8);
  auto seg = oracle::random_seg(5, 4, 6, 6, rng).to(torch::kFloat32);
  auto m = labelmix_mask(seg, at::make_generator<at::CPUGeneratorImpl>(1));
  auto cls = seg.argmax(1);
  for (int64_t n = 0; n < 5; ++n) {
    for (int64_t k = 0; k < 4; ++k) {
      auto sel = m[n][0].masked_select(cls[n] == k);
      if (sel.numel() == 0) continue;
      EXPECT_TRUE((sel == sel[0]).all().item<bool>());
      EXPECT_TRUE(sel[0].item<double>() == 0.0 || sel[0].item<double>() == 1.0);
    }
  }
}

TEST(LabelMixMask, FairCoinFrequency) {
  auto seg = torch::zeros({10000, 2, 1, 2});
  seg.index_put_({torch::indexing::Slice(), 0, 0, 0}, 1.0);
  seg.index_put_({torch::indexing::Slice(), 1, 0, 1}, 1.0);
  auto m = labelmix_mask(seg, at::make_generator<at::CPUGeneratorImpl>(2));
  EXPECT_NEAR(m.select(3, 0).mean().item<double>(), 0.5, 0.02);
  EXPECT_NEAR(m.select(3, 1).mean().item<double>(), 0.5, 0.02);
}

TEST(LabelMixLoss, DegenerateMasksAndEqualImagesGiveZero) {
  torch::manual_seed(3);
  auto w = torch::randn({4, 3, 3, 3});
  auto disc = [&](const torch::Tensor& x) { return torch::conv2d(torch::tanh(x), w, {}, 1, 1); };
  auto xr = torch::randn({2, 3, 5, 5});
  auto xf = torch::randn({2, 3, 5, 5});
  auto ones = torch::ones({2, 1, 5, 5});
  auto zeros = torch::zeros({2, 1, 5, 5});
  EXPECT_EQ(labelmix_loss(xr, xf, ones, disc).item<double>(), 0.0);
  EXPECT_EQ(labelmix_loss(xr, xf, zeros, disc).item<double>(), 0.0);
  auto mask = (torch::rand({2, 1, 5, 5}) > 0.5).to(torch::kFloat32);
  EXPECT_EQ(labelmix_loss(xr, xr, mask, disc).item<double>(), 0.0);
  EXPECT_GT(labelmix_loss(xr, xf, mask, disc).item<double>(), 0.0);
}
