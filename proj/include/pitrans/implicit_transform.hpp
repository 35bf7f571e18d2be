#pragma once

#include <array>
#include <string>

#include "pitrans/blocks.hpp"

namespace pitrans {

/// Residual cross attention. With n = h*w:
///   Q = q_proj(F_Q) as b x c/4 x n,  K = k_proj(F_K) as b x c/4 x n,  V = F_V as b x c x n
///   A = softmax_rows(Q^T K)          (b x n x n; row p = output position p)
///   out = V + V A^T                  reshaped to b x c x h x w
class ImplicitTransform {
 public:
  ImplicitTransform() = default;
  ImplicitTransform(const std::string& name, std::int64_t channels, bool scale_scores, Rng& rng);

  Tensor forward(const Tensor& fq, const Tensor& fk, const Tensor& fv) const;
  /// The attention map A alone (b x n x n).
  Tensor attention(const Tensor& fq, const Tensor& fk) const;

  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;

  std::int64_t channels() const { return c_; }

  Conv2d q_proj, k_proj;

 private:
  std::string name_;
  std::int64_t c_ = 0;
  bool scale_scores_ = false;
};

/// Feature maps at levels L4, L3, L2 (index 0, 1, 2).
using LevelFeatures = std::array<Tensor, 3>;

/// The fused decoder's multi-level chain:
///   V4 = Q4 + K4;  O4 = itm(Q4, K4, V4)
///   V3 = up(O4);   O3 = itm(Q3, K3, V3)
///   V2 = up(O3);   O2 = itm(Q2, K2, V2)  -> returned
/// With attention disabled each itm(...) is the identity on V.
class LevelChain {
 public:
  LevelChain() = default;
  /// c_l4 = channels at L4 (divisible by 16 so that L2 = c_l4/4 stays divisible by 4).
  LevelChain(const std::string& name, std::int64_t c_l4, bool use_itm, bool scale_scores, Rng& rng, BnSettings bn);

  Tensor forward(const LevelFeatures& queries, const LevelFeatures& keys);
  /// `in` is the L4 shape.
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  bool use_itm() const { return use_itm_; }

  std::array<ImplicitTransform, 3> itms;
  std::array<UpsampleBlock, 2> ups;

 private:
  std::string name_;
  bool use_itm_ = true;
};

}  // namespace pitrans
