#pragma once

#include <string>
#include <vector>

#include "pitrans/cost.hpp"
#include "pitrans/rng.hpp"
#include "pitrans/tensor.hpp"

namespace pitrans {

/// A named handle into a model's state. Buffers (BN running statistics) are
/// serialized with the parameters but are not trainable.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};
using TensorList = std::vector<NamedTensor>;

/// Trainable subset of a TensorList, in order.
std::vector<Tensor> trainable(const TensorList& list);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::int64_t c_in, std::int64_t c_out, int kernel, int stride, int padding, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;

  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
  int kernel() const { return static_cast<int>(weight.dim(2)); }
  const std::string& name() const { return name_; }

  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;

 private:
  std::string name_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::int64_t channels, float momentum = 0.1f, float eps = 1e-5f);

  /// Updates the running statistics when in training mode.
  Tensor forward(const Tensor& x);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t) { training_ = t; }
  bool training() const { return training_; }

  Tensor gamma, beta, running_mean, running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;

 private:
  std::string name_;
  bool training_ = true;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::int64_t in, std::int64_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  /// `sites` is how many independent vectors the layer is applied to per image.
  Shape describe(const Shape& in, std::int64_t sites, CostReport& report) const;
  void collect(TensorList& out) const;

  Tensor weight, bias;

 private:
  std::string name_;
};

/// conv -> BN -> ReLU
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, std::int64_t c_in, std::int64_t c_out, int kernel, int stride, int padding,
             Rng& rng, float bn_momentum = 0.1f, float bn_eps = 1e-5f);

  Tensor forward(const Tensor& x);
  Shape describe(const Shape& in, CostReport& report) const;
  void collect(TensorList& out) const;
  void set_training(bool t) { bn.set_training(t); }

  Conv2d conv;
  BatchNorm2d bn;
};

/// Conv weights ~ Normal(0, 0.02), conv biases 0.
void init_weights(Conv2d& layer, Rng& rng);
/// Dense weights ~ Normal(0, 0.02), biases 0.
void init_weights(Linear& layer, Rng& rng);
/// gamma 1, beta 0, running mean 0, running var 1.
void init_weights(BatchNorm2d& layer, Rng& rng);

/// Output spatial size of a convolution.
std::int64_t conv_out_size(std::int64_t in, int kernel, int stride, int padding);

}  // namespace pitrans
