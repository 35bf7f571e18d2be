#include "pitrans/implicit_transform.hpp"

#include <cmath>

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

ImplicitTransform::ImplicitTransform(const std::string& name, std::int64_t channels, bool scale_scores, Rng& rng)
    : name_(name), c_(channels), scale_scores_(scale_scores) {
  if (channels < 4 || channels % 4 != 0)
    throw ConfigError(name + ": channel count " + std::to_string(channels) + " is not divisible by 4");
  q_proj = Conv2d(name + ".q_proj", channels, channels / 4, 1, 1, 0, rng);
  k_proj = Conv2d(name + ".k_proj", channels, channels / 4, 1, 1, 0, rng);
}

Tensor ImplicitTransform::attention(const Tensor& fq, const Tensor& fk) const {
  if (fq.rank() != 4 || fk.shape() != fq.shape())
    throw DimensionError(name_ + ": query/key shapes differ: " + shape_str(fq.shape()) + " vs " + shape_str(fk.shape()));
  if (fq.dim(1) != c_)
    throw DimensionError(name_ + ": expects " + std::to_string(c_) + " channels, got " + std::to_string(fq.dim(1)));
  const auto b = fq.dim(0), n = fq.dim(2) * fq.dim(3);
  Tensor q = reshape(q_proj.forward(fq), {b, c_ / 4, n});
  Tensor k = reshape(k_proj.forward(fk), {b, c_ / 4, n});
  Tensor scores = matmul(transpose(q), k);
  if (scale_scores_) scores = mul_scalar(scores, 1.0f / std::sqrt(static_cast<float>(c_ / 4)));
  return softmax(scores, -1);
}

Tensor ImplicitTransform::forward(const Tensor& fq, const Tensor& fk, const Tensor& fv) const {
  if (fv.shape() != fq.shape())
    throw DimensionError(name_ + ": value shape " + shape_str(fv.shape()) + " differs from query shape " +
                         shape_str(fq.shape()));
  Tensor a = attention(fq, fk);
  const auto b = fv.dim(0), n = fv.dim(2) * fv.dim(3);
  Tensor v = reshape(fv, {b, c_, n});
  Tensor out = reshape(add(v, matmul(v, transpose(a))), fv.shape());
  trace_point(name_ + ".attn", out);
  return out;
}

Shape ImplicitTransform::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[0] != c_)
    throw DimensionError(name_ + ": expects " + std::to_string(c_) + " x h x w, got " + shape_str(in));
  q_proj.describe(in, report);
  k_proj.describe(in, report);
  const std::int64_t n = in[1] * in[2];
  report.add(name_ + ".attn", in, 0, n * n * (c_ / 4) + n * n * c_);
  return in;
}

void ImplicitTransform::collect(TensorList& out) const {
  q_proj.collect(out);
  k_proj.collect(out);
}

// ---------------------------------------------------------------------------

namespace {
const char* kLevelNames[3] = {"L4", "L3", "L2"};
}

LevelChain::LevelChain(const std::string& name, std::int64_t c_l4, bool use_itm, bool scale_scores, Rng& rng,
                       BnSettings bn)
    : name_(name), use_itm_(use_itm) {
  if (use_itm) {
    itms[0] = ImplicitTransform(name + ".itm_l4", c_l4, scale_scores, rng);
    itms[1] = ImplicitTransform(name + ".itm_l3", c_l4 / 2, scale_scores, rng);
    itms[2] = ImplicitTransform(name + ".itm_l2", c_l4 / 4, scale_scores, rng);
  }
  ups[0] = UpsampleBlock(name + ".up_l3", c_l4, c_l4 / 2, rng, bn);
  ups[1] = UpsampleBlock(name + ".up_l2", c_l4 / 2, c_l4 / 4, rng, bn);
}

Tensor LevelChain::forward(const LevelFeatures& queries, const LevelFeatures& keys) {
  for (int l = 0; l < 3; ++l) {
    if (queries[static_cast<std::size_t>(l)].shape() != keys[static_cast<std::size_t>(l)].shape())
      throw DimensionError(name_ + ": level " + kLevelNames[l] + " query " +
                           shape_str(queries[static_cast<std::size_t>(l)].shape()) + " and key " +
                           shape_str(keys[static_cast<std::size_t>(l)].shape()) + " differ");
  }
  Tensor v = add(queries[0], keys[0]);
  for (int l = 0; l < 3; ++l) {
    const auto li = static_cast<std::size_t>(l);
    if (l > 0) {
      v = ups[li - 1].forward(v);
      if (v.shape() != queries[li].shape())
        throw DimensionError(name_ + ": level " + kLevelNames[l] + " value " + shape_str(v.shape()) +
                             " does not match query " + shape_str(queries[li].shape()));
    }
    if (use_itm_) v = itms[li].forward(queries[li], keys[li], v);
  }
  return v;
}

Shape LevelChain::describe(const Shape& in, CostReport& report) const {
  Shape s = in;
  for (std::size_t l = 0; l < 3; ++l) {
    if (l > 0) s = ups[l - 1].describe(s, report);
    if (use_itm_) s = itms[l].describe(s, report);
  }
  return s;
}

void LevelChain::collect(TensorList& out) const {
  if (use_itm_) itms[0].collect(out);
  ups[0].collect(out);
  if (use_itm_) itms[1].collect(out);
  ups[1].collect(out);
  if (use_itm_) itms[2].collect(out);
}

void LevelChain::set_training(bool t) {
  for (auto& u : ups) u.set_training(t);
}

}  // namespace pitrans
