#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pitrans/blocks.hpp"

namespace pitrans {

/// Conditional patch discriminator over a channel-concatenated image pair:
/// conv(6 -> d, k4 s2) LReLU, conv(d -> 2d, k4 s2) BN LReLU, conv(2d -> 4d, k4 s2) BN LReLU,
/// conv(4d -> 8d, k4 s1) BN LReLU, conv(8d -> 1, k4 s1); all padding 1, LReLU slope 0.2.
/// d = 64 is the 70x70-receptive-field layout; smaller d keeps the layout at desk scale.
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(const std::string& name, std::int64_t base_channels, Rng& rng, BnSettings bn = {});

  /// Logit map b x 1 x h_p x w_p.
  Tensor forward(const Tensor& condition, const Tensor& image);
  /// `in` is the shape of one image (3 x H x W).
  Shape describe(const Shape& in, CostReport& report) const;
  TensorList parameters() const;
  void set_training(bool t);
  /// Toggles requires_grad on every trainable tensor.
  void set_trainable(bool t);

  Conv2d conv0, conv1, conv2, conv3, conv4;
  BatchNorm2d bn1, bn2, bn3;

 private:
  std::string name_;
};

/// Loss weights of the objective (L1, cGAN, TV, perceptual).
struct LossWeights {
  double l1 = 100.0;
  double cgan = 5.0;
  double tv = 1.0;
  double per = 50.0;
};

/// Seed of the fixed perceptual extractor.
inline constexpr std::uint64_t kPerceptualSeed = 20221013;

/// Frozen random-feature extractor: three conv(k3, s2, p1) + ReLU stages 3 -> 16 -> 32 -> 64,
/// He-normal weights drawn from Rng(kPerceptualSeed, "perceptual"), zero biases.
class PerceptualExtractor {
 public:
  PerceptualExtractor();

  std::array<Tensor, 3> features(const Tensor& image) const;
  Shape describe(const Shape& in, CostReport& report) const;

  std::array<Conv2d, 3> stages;
};

struct AdversarialLosses {
  Tensor d_loss;
  Tensor g_loss;
};

/// d = BCE(real, 1) + BCE(fake, 0); g = BCE(fake, 1); means over the logit maps.
AdversarialLosses adversarial_loss(const Tensor& logits_real, const Tensor& logits_fake);
/// Mean absolute vertical difference plus mean absolute horizontal difference.
Tensor tv_loss(const Tensor& image);
Tensor l1_loss(const Tensor& a, const Tensor& b);
Tensor mse_loss(const Tensor& a, const Tensor& b);
/// Sum over the extractor's stages of the mean squared feature difference.
Tensor perceptual_loss(const Tensor& a, const Tensor& b, const PerceptualExtractor& ext);

/// Unweighted components plus the weighted generator total.
struct ObjectiveTerms {
  Tensor l1;      ///< |I_g' - I_g| + |I_g'' - I_g| (means)
  Tensor cgan_g;  ///< generator-side adversarial loss, both discriminators
  Tensor tv;      ///< on I_g''
  Tensor per;     ///< perceptual(I_g'', I_g)
  Tensor g_total;
};

double weighted_total(double l1, double cgan_g, double tv, double per, const LossWeights& w);

/// Generator side of the objective, discriminators evaluated as given.
ObjectiveTerms generator_objective(const Tensor& direct, const Tensor& final, const Tensor& target,
                                   const Tensor& aerial, PatchDiscriminator& d_direct, PatchDiscriminator& d_final,
                                   const PerceptualExtractor& ext, const LossWeights& w);

/// Sum of both discriminators' d_loss on (aerial, target) vs (aerial, fake).
Tensor discriminator_objective(const Tensor& direct, const Tensor& final, const Tensor& target,
                               const Tensor& aerial, PatchDiscriminator& d_direct, PatchDiscriminator& d_final);

struct TotalObjective {
  ObjectiveTerms generator;
  Tensor d_total;
};

TotalObjective total_objective(const Tensor& direct, const Tensor& final, const Tensor& target, const Tensor& aerial,
                               PatchDiscriminator& d_direct, PatchDiscriminator& d_final,
                               const PerceptualExtractor& ext, const LossWeights& w);

}  // namespace pitrans
