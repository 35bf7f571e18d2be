#pragma once

#include <string>

#include "pitrans/layers.hpp"

namespace pitrans {

/// Batch-norm hyperparameters shared by every block.
struct BnSettings {
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Image -> L1 features: conv(3 -> c/2, stride 2), conv(c/2 -> c), conv(c -> c),
/// each 3x3 / padding 1 with BN + ReLU. With c = 32 this is the 16/32/32 stem.
class EncoderStem {
 public:
  EncoderStem() = default;
  EncoderStem(const std::string& name, std::int64_t out_channels, Rng& rng, BnSettings bn = {});

  Tensor forward(const Tensor& x);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  ConvBnRelu down, mid, out;

 private:
  std::string name_;
};

/// Nearest x2 upsampling followed by two 3x3 ConvBnRelu layers (c_in -> c_out -> c_out).
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(const std::string& name, std::int64_t c_in, std::int64_t c_out, Rng& rng, BnSettings bn = {});

  Tensor forward(const Tensor& x);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  std::int64_t in_channels() const { return first.conv.in_channels(); }
  std::int64_t out_channels() const { return second.conv.out_channels(); }

  ConvBnRelu first, second;

 private:
  std::string name_;
};

/// Three 3x3 stride-1 convs (c -> c -> c -> 3); BN + ReLU after the first two,
/// Tanh after the last.
class DecoderHead {
 public:
  DecoderHead() = default;
  DecoderHead(const std::string& name, std::int64_t c_in, Rng& rng, BnSettings bn = {});

  Tensor forward(const Tensor& x);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t);

  std::int64_t in_channels() const { return first.conv.in_channels(); }

  ConvBnRelu first, second;
  Conv2d last;

 private:
  std::string name_;
};

}  // namespace pitrans
