#pragma once

#include <optional>
#include <string>
#include <utility>

#include "pitrans/blocks.hpp"

namespace pitrans {

struct PConvMlpSettings {
  /// false gives the plain strided-conv + conv encoder stage (no MLP branches).
  bool with_mlps = true;
  /// Channel-MLP hidden width = c * hc_expansion.
  std::int64_t hc_expansion = 1;
  /// Spatial-MLP hidden width = min(n, hs_cap).
  std::int64_t hs_cap = 1024;
  BnSettings bn;
};

/// Splits channels by parity: first = 0-based even channels (1-based odd),
/// second = 0-based odd channels. Throws DimensionError for an odd channel count.
std::pair<Tensor, Tensor> parity_split(const Tensor& x);
/// Inverse of parity_split.
Tensor parity_interleave(const Tensor& odd_indexed, const Tensor& even_indexed);

/// Parallel-ConvMLP encoder stage: b x c x h x w -> b x 2c x h/2 x w/2.
///
///   X'   = ReLU(BN(conv(ReLU(BN(down_conv(x))))))
///   Xc   = channels 0, 2, 4, ... of X'      Xs = channels 1, 3, 5, ...
///   Fc'  = channel MLP of Xc, applied per spatial site over its c channels
///   Fs'  = spatial MLP of Xs, applied per channel over its n = h/2 * w/2 sites
///   out  = X' + concat(Fc', Fs')
///
/// The spatial MLP weights bind the block to one input resolution.
class PConvMLPBlock {
 public:
  PConvMLPBlock() = default;
  PConvMLPBlock(const std::string& name, std::int64_t c_in, std::int64_t h_in, std::int64_t w_in,
                const PConvMlpSettings& settings, Rng& rng);

  Tensor conv_encode(const Tensor& x);
  std::pair<Tensor, Tensor> parallel_mlps(const Tensor& xc, const Tensor& xs) const;
  Tensor forward(const Tensor& x);

  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  bool has_mlps() const { return mlps.has_value(); }
  std::int64_t in_channels() const { return c_; }
  std::int64_t sites() const { return n_; }
  std::int64_t channel_hidden() const { return h_c_; }
  std::int64_t spatial_hidden() const { return h_s_; }

  struct Mlps {
    Linear ch_fc1, ch_fc2, sp_fc1, sp_fc2;
  };

  ConvBnRelu down, conv;
  std::optional<Mlps> mlps;

 private:
  void check_input(const Shape& s, bool batched) const;

  std::string name_;
  std::int64_t c_ = 0, h_in_ = 0, w_in_ = 0, n_ = 0, h_c_ = 0, h_s_ = 0;
};

}  // namespace pitrans
