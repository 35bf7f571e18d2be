#include <gtest/gtest.h>

#include <bit>
#include <functional>
#include <cmath>

#include "oracles.hpp"
#include "pitrans/errors.hpp"
#include "pitrans/gan.hpp"
#include "pitrans/gradcheck.hpp"
#include "pitrans/ops.hpp"
#include "pitrans/tape.hpp"

using namespace pitrans;

namespace {

void zero_params(const PatchDiscriminator& d) {
  for (const auto& p : d.parameters())
    if (p.trainable)
      for (auto& v : p.tensor.mutable_data()) v = 0.0f;
}

PatchDiscriminator disc(std::int64_t width = 8, std::uint64_t seed = 1) {
  Rng rng(seed, "disc");
  return PatchDiscriminator("D1", width, rng);
}

// Canned deterministic 1 x 3 x 8 x 8 inputs for the perceptual golden value.
Tensor canned(int which) {
  Tensor t(Shape{1, 3, 8, 8});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i) + which) * (which == 0 ? 0.8 : 0.6));
  return t;
}

double bce1(double z) { return std::log1p(std::exp(-z)); }  // -log sigmoid(z)
double bce0(double z) { return std::log1p(std::exp(z)); }   // -log(1 - sigmoid(z))

}  // namespace

TEST(Discriminator, LogitMapSizes) {
  auto d = disc(8);
  EXPECT_EQ(d.forward(Tensor(Shape{1, 3, 256, 256}), Tensor(Shape{1, 3, 256, 256})).shape(), (Shape{1, 1, 30, 30}));
  EXPECT_EQ(d.forward(Tensor(Shape{2, 3, 64, 64}), Tensor(Shape{2, 3, 64, 64})).shape(), (Shape{2, 1, 6, 6}));
  CostReport r;
  EXPECT_EQ(d.describe({3, 256, 256}, r), (Shape{1, 30, 30}));
}

TEST(Discriminator, SeventyPixelLayout) {
  auto d = disc(64);
  EXPECT_EQ(d.conv0.in_channels(), 6);
  const std::int64_t widths[] = {64, 128, 256, 512, 1};
  const int strides[] = {2, 2, 2, 1, 1};
  const Conv2d* convs[] = {&d.conv0, &d.conv1, &d.conv2, &d.conv3, &d.conv4};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(convs[i]->out_channels(), widths[i]);
    EXPECT_EQ(convs[i]->kernel(), 4);
    EXPECT_EQ(convs[i]->stride, strides[i]);
    EXPECT_EQ(convs[i]->padding, 1);
  }
}

TEST(Discriminator, ZeroWeightsGiveZeroLogits) {
  auto d = disc();
  zero_params(d);
  Rng rng(2, "x");
  auto logits = d.forward(oracle::random(rng, {1, 3, 64, 64}), oracle::random(rng, {1, 3, 64, 64}));
  for (float v : logits.data()) EXPECT_EQ(v, 0.0f);
  auto p = sigmoid(logits);
  for (float v : p.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Discriminator, FreezeTogglesRequiresGrad) {
  auto d = disc();
  d.set_trainable(false);
  for (const auto& p : d.parameters())
    if (p.trainable) {
      EXPECT_FALSE(p.tensor.requires_grad());
    }
  d.set_trainable(true);
  for (const auto& p : d.parameters())
    if (p.trainable) {
      EXPECT_TRUE(p.tensor.requires_grad());
    }
}

TEST(AdversarialLoss, ZeroLogits) {
  auto l = adversarial_loss(Tensor(Shape{1, 1, 6, 6}), Tensor(Shape{1, 1, 6, 6}));
  EXPECT_NEAR(l.d_loss.item(), 2 * std::log(2.0), 1e-6);
  EXPECT_NEAR(l.g_loss.item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(l.d_loss.item(), 1.38629, 1e-5);
  EXPECT_NEAR(l.g_loss.item(), 0.69315, 1e-5);
}

TEST(AdversarialLoss, PerfectDiscriminatorLimit) {
  auto l = adversarial_loss(Tensor(Shape{4}, 60.0f), Tensor(Shape{4}, -60.0f));
  EXPECT_NEAR(l.d_loss.item(), 0.0, 1e-12);
  // Capped at -log(1e-12) per element.
  EXPECT_NEAR(l.g_loss.item(), -std::log(1e-12), 1e-4);
  auto capped = adversarial_loss(Tensor(Shape{4}, 1e4f), Tensor(Shape{4}, 1e4f));
  EXPECT_NEAR(capped.d_loss.item(), -std::log(1e-12), 1e-4);
  EXPECT_TRUE(std::isfinite(capped.d_loss.item()));
}

TEST(AdversarialLoss, HandExample) {
  auto l = adversarial_loss(Tensor(Shape{1}, 2.0f), Tensor(Shape{1}, -1.0f));
  EXPECT_NEAR(l.d_loss.item(), 0.44019, 1e-5);
  EXPECT_NEAR(l.d_loss.item(), bce1(2) + bce0(-1), 1e-6);
  EXPECT_NEAR(l.g_loss.item(), bce1(-1), 1e-6);
}

TEST(AdversarialLoss, MatchesElementwiseOracle) {
  Rng rng(3, "x");
  auto real = oracle::random(rng, {2, 1, 3, 3}, 3.0), fake = oracle::random(rng, {2, 1, 3, 3}, 3.0);
  double d = 0, g = 0;
  for (int i = 0; i < 18; ++i) {
    d += bce1(real.at(i)) / 18 + bce0(fake.at(i)) / 18;
    g += bce1(fake.at(i)) / 18;
  }
  auto l = adversarial_loss(real, fake);
  EXPECT_NEAR(l.d_loss.item(), d, 1e-5);
  EXPECT_NEAR(l.g_loss.item(), g, 1e-5);
}

TEST(TvLoss, Examples) {
  EXPECT_EQ(tv_loss(Tensor(Shape{2, 3, 5, 5}, 0.3f)).item(), 0.0f);
  EXPECT_FLOAT_EQ(tv_loss(Tensor(Shape{1, 1, 2, 2}, std::vector<float>{0, 1, 0, 1})).item(), 1.0f);
  // vertical only: rows [0,0],[1,1] -> vertical mean 1, horizontal 0
  EXPECT_FLOAT_EQ(tv_loss(Tensor(Shape{1, 1, 2, 2}, std::vector<float>{0, 0, 1, 1})).item(), 1.0f);
}

TEST(TvLoss, MatchesLoopOracleAndIsTranslationInvariant) {
  Rng rng(4, "x");
  auto img = oracle::random(rng, {2, 3, 5, 7});
  double v = 0, h = 0;
  for (int n = 0; n < 6; ++n)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 7; ++j) {
        const auto at = [&](int r, int c) { return double(img.at((n * 5 + r) * 7 + c)); };
        if (i + 1 < 5) v += std::fabs(at(i + 1, j) - at(i, j));
        if (j + 1 < 7) h += std::fabs(at(i, j + 1) - at(i, j));
      }
  const double expect = v / (6 * 4 * 7) + h / (6 * 5 * 6);
  const float tv = tv_loss(img).item();
  EXPECT_NEAR(tv, expect, 1e-5);
  EXPECT_GE(tv, 0.0f);
  EXPECT_NEAR(tv_loss(add_scalar(img, 0.75f)).item(), tv, 1e-5);
}

TEST(PerceptualLoss, IdenticalAndSymmetric) {
  PerceptualExtractor ext;
  Rng rng(5, "x");
  auto a = oracle::random(rng, {2, 3, 16, 16}), b = oracle::random(rng, {2, 3, 16, 16});
  EXPECT_EQ(perceptual_loss(a, a, ext).item(), 0.0f);
  EXPECT_EQ(perceptual_loss(a, b, ext).item(), perceptual_loss(b, a, ext).item());
  EXPECT_GT(perceptual_loss(a, b, ext).item(), 0.0f);
}

TEST(PerceptualLoss, ExtractorIsFrozenAndSeeded) {
  PerceptualExtractor a, b;
  const std::int64_t widths[] = {16, 32, 64};
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(a.stages[i].weight.requires_grad());
    EXPECT_EQ(a.stages[i].out_channels(), widths[i]);
    EXPECT_TRUE(std::equal(a.stages[i].weight.data().begin(), a.stages[i].weight.data().end(),
                           b.stages[i].weight.data().begin()));
  }
  double sq = 0;
  for (float v : a.stages[1].weight.data()) sq += double(v) * v;
  EXPECT_NEAR(std::sqrt(sq / a.stages[1].weight.numel()), std::sqrt(2.0 / (16 * 9)), 0.01);
}

TEST(PerceptualLoss, GoldenValue) {
  PerceptualExtractor ext;
  const float v = perceptual_loss(canned(0), canned(1), ext).item();
  // captured once; 0.28260493...
  EXPECT_EQ(std::bit_cast<std::uint32_t>(v), 1049670040u) << "value " << v;
}

TEST(Objective, PerfectReconstructionLeavesOnlyAdversarialTerm) {
  auto d1 = disc(8, 1), d2 = disc(8, 2);
  zero_params(d1);
  zero_params(d2);
  PerceptualExtractor ext;
  Tensor img(Shape{2, 3, 64, 64}, 0.25f);
  Rng rng(1, "x");
  auto aerial = oracle::random(rng, {2, 3, 64, 64});
  auto t = total_objective(img, img, img, aerial, d1, d2, ext, LossWeights{});
  EXPECT_EQ(t.generator.l1.item(), 0.0f);
  EXPECT_EQ(t.generator.tv.item(), 0.0f);
  EXPECT_EQ(t.generator.per.item(), 0.0f);
  EXPECT_NEAR(t.generator.cgan_g.item(), 2 * std::log(2.0), 1e-6);
  EXPECT_NEAR(t.generator.g_total.item(), 6.93147, 1e-5);
  EXPECT_NEAR(t.d_total.item(), 4 * std::log(2.0), 1e-5);
}

TEST(Objective, WeightedSumArithmetic) {
  EXPECT_NEAR(weighted_total(0.2, 0.7, 0.05, 0.1, LossWeights{}), 28.55, 1e-12);
  LossWeights w;
  EXPECT_EQ(w.l1, 100.0);
  EXPECT_EQ(w.cgan, 5.0);
  EXPECT_EQ(w.tv, 1.0);
  EXPECT_EQ(w.per, 50.0);
}

TEST(Objective, TotalIsSumOfIndependentComponents) {
  auto d1 = disc(8, 3), d2 = disc(8, 4);
  PerceptualExtractor ext;
  Rng rng(6, "x");
  auto direct = tanh(oracle::random(rng, {2, 3, 64, 64}));
  auto final = tanh(oracle::random(rng, {2, 3, 64, 64}));
  auto target = tanh(oracle::random(rng, {2, 3, 64, 64}));
  auto aerial = tanh(oracle::random(rng, {2, 3, 64, 64}));
  auto t = total_objective(direct, final, target, aerial, d1, d2, ext, LossWeights{});

  double l1 = 0;
  for (std::int64_t i = 0; i < target.numel(); ++i)
    l1 += std::fabs(double(direct.at(i)) - target.at(i)) + std::fabs(double(final.at(i)) - target.at(i));
  l1 /= static_cast<double>(target.numel());
  const double cgan = adversarial_loss(d1.forward(aerial, target), d1.forward(aerial, direct)).g_loss.item() +
                      adversarial_loss(d2.forward(aerial, target), d2.forward(aerial, final)).g_loss.item();
  const double dt = adversarial_loss(d1.forward(aerial, target), d1.forward(aerial, direct)).d_loss.item() +
                    adversarial_loss(d2.forward(aerial, target), d2.forward(aerial, final)).d_loss.item();
  const double tv = tv_loss(final).item();
  const double per = perceptual_loss(final, target, ext).item();
  const double total = 100 * l1 + 5 * cgan + tv + 50 * per;

  EXPECT_NEAR(t.generator.l1.item(), l1, 1e-5);
  EXPECT_NEAR(t.generator.cgan_g.item(), cgan, 1e-5);
  EXPECT_NEAR(t.generator.tv.item(), tv, 1e-6);
  EXPECT_NEAR(t.generator.per.item(), per, 1e-6);
  EXPECT_NEAR(t.generator.g_total.item(), total, 1e-5 * total);
  EXPECT_NEAR(t.d_total.item(), dt, 1e-5);
  for (const Tensor* c : {&t.generator.l1, &t.generator.cgan_g, &t.generator.tv, &t.generator.per})
    EXPECT_GE(c->item(), 0.0f);
  EXPECT_NEAR(discriminator_objective(direct, final, target, aerial, d1, d2).item(), dt, 1e-5);
}

TEST(Objective, LossGradcheckOnImageProbes) {
  PerceptualExtractor ext;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed, "loss");
    auto a = oracle::random(rng, {1, 3, 6, 6}, 0.5), b = oracle::random(rng, {1, 3, 6, 6}, 0.5);
    auto all = [&](const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
      std::vector<ProbeSite> sites;
      for (std::size_t l = 0; l < leaves.size(); ++l)
        for (std::size_t i = 0; i < 108; ++i) sites.push_back({l, i});
      return gradcheck_sites(f, leaves, sites, 1e-3, 5e-3);
    };
    EXPECT_LE(all([&] { return tv_loss(a); }, {a}).max_rel_error, 1e-2);
    EXPECT_LE(all([&] { return l1_loss(a, b); }, {a, b}).max_rel_error, 1e-2);
    EXPECT_LE(all([&] { return perceptual_loss(a, b, ext); }, {a, b}).max_rel_error, 1e-2);
    EXPECT_LE(all([&] { return mse_loss(a, b); }, {a, b}).max_rel_error, 1e-2);
    auto la = oracle::random(rng, {1, 1, 2, 2}), lb = oracle::random(rng, {1, 1, 2, 2});
    EXPECT_LE(gradcheck_all([&] { return adversarial_loss(la, lb).d_loss; }, {la, lb}, 1e-3).max_rel_error, 1e-2);
    EXPECT_LE(gradcheck_all([&] { return adversarial_loss(la, lb).g_loss; }, {la, lb}, 1e-3).max_rel_error, 1e-2);
  }
}
