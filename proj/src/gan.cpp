#include "pitrans/gan.hpp"

#include <cmath>

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

PatchDiscriminator::PatchDiscriminator(const std::string& name, std::int64_t d, Rng& rng, BnSettings bn)
    : conv0(name + ".conv0", 6, d, 4, 2, 1, rng),
      conv1(name + ".conv1", d, 2 * d, 4, 2, 1, rng),
      conv2(name + ".conv2", 2 * d, 4 * d, 4, 2, 1, rng),
      conv3(name + ".conv3", 4 * d, 8 * d, 4, 1, 1, rng),
      conv4(name + ".conv4", 8 * d, 1, 4, 1, 1, rng),
      bn1(name + ".bn1", 2 * d, bn.momentum, bn.eps),
      bn2(name + ".bn2", 4 * d, bn.momentum, bn.eps),
      bn3(name + ".bn3", 8 * d, bn.momentum, bn.eps),
      name_(name) {
  if (d < 1) throw ConfigError(name + ": base channel count must be positive");
}

Tensor PatchDiscriminator::forward(const Tensor& condition, const Tensor& image) {
  if (condition.shape() != image.shape())
    throw DimensionError(name_ + ": pair shapes differ: " + shape_str(condition.shape()) + " vs " +
                         shape_str(image.shape()));
  if (condition.rank() != 4 || condition.dim(1) != 3)
    throw DimensionError(name_ + ": expected b x 3 x H x W images, got " + shape_str(condition.shape()));
  Tensor x = leaky_relu(conv0.forward(concat({condition, image}, 1)), 0.2f);
  x = leaky_relu(bn1.forward(conv1.forward(x)), 0.2f);
  x = leaky_relu(bn2.forward(conv2.forward(x)), 0.2f);
  x = leaky_relu(bn3.forward(conv3.forward(x)), 0.2f);
  return conv4.forward(x);
}

Shape PatchDiscriminator::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[0] != 3) throw DimensionError(name_ + ": expected 3 x H x W, got " + shape_str(in));
  Shape s = conv0.describe(Shape{6, in[1], in[2]}, report);
  s = bn1.describe(conv1.describe(s, report), report);
  s = bn2.describe(conv2.describe(s, report), report);
  s = bn3.describe(conv3.describe(s, report), report);
  return conv4.describe(s, report);
}

TensorList PatchDiscriminator::parameters() const {
  TensorList out;
  conv0.collect(out);
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  conv3.collect(out);
  bn3.collect(out);
  conv4.collect(out);
  return out;
}

void PatchDiscriminator::set_training(bool t) {
  bn1.set_training(t);
  bn2.set_training(t);
  bn3.set_training(t);
}

void PatchDiscriminator::set_trainable(bool t) {
  for (auto& nt : parameters())
    if (nt.trainable) nt.tensor.set_requires_grad(t);
}

// ---------------------------------------------------------------------------

PerceptualExtractor::PerceptualExtractor() {
  Rng rng(kPerceptualSeed, "perceptual");
  const std::int64_t widths[4] = {3, 16, 32, 64};
  for (std::size_t i = 0; i < 3; ++i) {
    stages[i] = Conv2d("P.stage" + std::to_string(i), widths[i], widths[i + 1], 3, 2, 1, rng);
    const double stddev = std::sqrt(2.0 / static_cast<double>(widths[i] * 9));
    for (auto& w : stages[i].weight.mutable_data()) w = static_cast<float>(rng.normal(0.0, stddev));
    stages[i].weight.set_requires_grad(false);
    stages[i].bias.set_requires_grad(false);
  }
}

std::array<Tensor, 3> PerceptualExtractor::features(const Tensor& image) const {
  std::array<Tensor, 3> f;
  Tensor x = image;
  for (std::size_t i = 0; i < 3; ++i) {
    x = relu(stages[i].forward(x));
    f[i] = x;
  }
  return f;
}

Shape PerceptualExtractor::describe(const Shape& in, CostReport& report) const {
  Shape s = in;
  for (const auto& st : stages) s = st.describe(s, report);
  return s;
}

// ---------------------------------------------------------------------------

AdversarialLosses adversarial_loss(const Tensor& logits_real, const Tensor& logits_fake) {
  if (logits_real.shape() != logits_fake.shape())
    throw DimensionError("adversarial_loss: logit maps differ " + shape_str(logits_real.shape()) + " vs " +
                         shape_str(logits_fake.shape()));
  AdversarialLosses out;
  out.d_loss = add(bce_with_logits(logits_real, 1.0f), bce_with_logits(logits_fake, 0.0f));
  out.g_loss = bce_with_logits(logits_fake, 1.0f);
  return out;
}

Tensor tv_loss(const Tensor& image) {
  if (image.rank() != 4 || image.dim(2) < 2 || image.dim(3) < 2)
    throw DimensionError("tv_loss: expected b x c x H x W with H, W >= 2, got " + shape_str(image.shape()));
  const auto h = image.dim(2), w = image.dim(3);
  Tensor vertical = mean(abs(sub(narrow(image, 2, 1, h - 1), narrow(image, 2, 0, h - 1))));
  Tensor horizontal = mean(abs(sub(narrow(image, 3, 1, w - 1), narrow(image, 3, 0, w - 1))));
  return add(vertical, horizontal);
}

Tensor l1_loss(const Tensor& a, const Tensor& b) { return mean(abs(sub(a, b))); }

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor perceptual_loss(const Tensor& a, const Tensor& b, const PerceptualExtractor& ext) {
  if (a.shape() != b.shape())
    throw DimensionError("perceptual_loss: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto fa = ext.features(a);
  const auto fb = ext.features(b);
  Tensor total = mse_loss(fa[0], fb[0]);
  for (std::size_t i = 1; i < 3; ++i) total = add(total, mse_loss(fa[i], fb[i]));
  return total;
}

double weighted_total(double l1, double cgan_g, double tv, double per, const LossWeights& w) {
  return w.l1 * l1 + w.cgan * cgan_g + w.tv * tv + w.per * per;
}

ObjectiveTerms generator_objective(const Tensor& direct, const Tensor& final, const Tensor& target,
                                   const Tensor& aerial, PatchDiscriminator& d_direct, PatchDiscriminator& d_final,
                                   const PerceptualExtractor& ext, const LossWeights& w) {
  ObjectiveTerms t;
  t.l1 = add(l1_loss(direct, target), l1_loss(final, target));
  // Only the fake pair matters for the generator-side term.
  t.cgan_g = add(bce_with_logits(d_direct.forward(aerial, direct), 1.0f),
                 bce_with_logits(d_final.forward(aerial, final), 1.0f));
  t.tv = tv_loss(final);
  t.per = perceptual_loss(final, target, ext);
  Tensor total = mul_scalar(t.l1, static_cast<float>(w.l1));
  total = add(total, mul_scalar(t.cgan_g, static_cast<float>(w.cgan)));
  total = add(total, mul_scalar(t.tv, static_cast<float>(w.tv)));
  t.g_total = add(total, mul_scalar(t.per, static_cast<float>(w.per)));
  return t;
}

Tensor discriminator_objective(const Tensor& direct, const Tensor& final, const Tensor& target,
                               const Tensor& aerial, PatchDiscriminator& d_direct, PatchDiscriminator& d_final) {
  const auto a = adversarial_loss(d_direct.forward(aerial, target), d_direct.forward(aerial, direct));
  const auto b = adversarial_loss(d_final.forward(aerial, target), d_final.forward(aerial, final));
  return add(a.d_loss, b.d_loss);
}

TotalObjective total_objective(const Tensor& direct, const Tensor& final, const Tensor& target, const Tensor& aerial,
                               PatchDiscriminator& d_direct, PatchDiscriminator& d_final,
                               const PerceptualExtractor& ext, const LossWeights& w) {
  if (direct.shape() != target.shape() || final.shape() != target.shape() || aerial.shape() != target.shape())
    throw DimensionError("total_objective: all images must share one shape");
  TotalObjective out;
  out.generator = generator_objective(direct, final, target, aerial, d_direct, d_final, ext, w);
  out.d_total = discriminator_objective(direct, final, target, aerial, d_direct, d_final);
  return out;
}

}  // namespace pitrans
