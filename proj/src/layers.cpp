#include "pitrans/layers.hpp"

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

std::vector<Tensor> trainable(const TensorList& list) {
  std::vector<Tensor> out;
  for (const auto& nt : list)
    if (nt.trainable) out.push_back(nt.tensor);
  return out;
}

std::int64_t conv_out_size(std::int64_t in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

void init_weights(Conv2d& layer, Rng& rng) {
  for (auto& w : layer.weight.mutable_data()) w = static_cast<float>(rng.normal(0.0, 0.02));
  for (auto& b : layer.bias.mutable_data()) b = 0.0f;
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
}

void init_weights(Linear& layer, Rng& rng) {
  for (auto& w : layer.weight.mutable_data()) w = static_cast<float>(rng.normal(0.0, 0.02));
  for (auto& b : layer.bias.mutable_data()) b = 0.0f;
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
}

void init_weights(BatchNorm2d& layer, Rng&) {
  for (auto& v : layer.gamma.mutable_data()) v = 1.0f;
  for (auto& v : layer.beta.mutable_data()) v = 0.0f;
  for (auto& v : layer.running_mean.mutable_data()) v = 0.0f;
  for (auto& v : layer.running_var.mutable_data()) v = 1.0f;
  layer.gamma.set_requires_grad(true);
  layer.beta.set_requires_grad(true);
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, std::int64_t c_in, std::int64_t c_out, int kernel, int stride_, int padding_,
               Rng& rng)
    : weight(Shape{c_out, c_in, kernel, kernel}),
      bias(Shape{c_out}),
      stride(stride_),
      padding(padding_),
      name_(std::move(name)) {
  if (kernel < 1 || stride < 1 || padding < 0) throw ConfigError("conv " + name_ + ": invalid kernel/stride/padding");
  init_weights(*this, rng);
}

Tensor Conv2d::forward(const Tensor& x) const {
  Tensor y = conv2d(x, weight, bias, stride, padding);
  trace_point(name_, y);
  return y;
}

Shape Conv2d::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[0] != in_channels())
    throw DimensionError(name_ + ": expects " + std::to_string(in_channels()) + " input channels, got shape " +
                         shape_str(in));
  const int k = kernel();
  if (in[1] + 2 * padding < k || in[2] + 2 * padding < k)
    throw DimensionError(name_ + ": kernel larger than padded input " + shape_str(in));
  Shape out{out_channels(), conv_out_size(in[1], k, stride, padding), conv_out_size(in[2], k, stride, padding)};
  const std::int64_t params = weight.numel() + bias.numel();
  const std::int64_t macs = static_cast<std::int64_t>(k) * k * in_channels() * out_channels() * out[1] * out[2];
  report.add(name_, out, params, macs);
  return out;
}

void Conv2d::collect(TensorList& out) const {
  out.push_back({name_ + ".weight", weight, true});
  out.push_back({name_ + ".bias", bias, true});
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, std::int64_t channels, float momentum_, float eps_)
    : gamma(Shape{channels}),
      beta(Shape{channels}),
      running_mean(Shape{channels}),
      running_var(Shape{channels}),
      momentum(momentum_),
      eps(eps_),
      name_(std::move(name)) {
  Rng unused(0, "bn");
  init_weights(*this, unused);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  Tensor y = batch_norm(x, gamma, beta, running_mean, running_var, training_, momentum, eps);
  trace_point(name_, y);
  return y;
}

Shape BatchNorm2d::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[0] != gamma.dim(0))
    throw DimensionError(name_ + ": expects " + std::to_string(gamma.dim(0)) + " channels, got shape " + shape_str(in));
  report.add(name_, in, gamma.numel() + beta.numel(), 0);
  return in;
}

void BatchNorm2d::collect(TensorList& out) const {
  out.push_back({name_ + ".gamma", gamma, true});
  out.push_back({name_ + ".beta", beta, true});
  out.push_back({name_ + ".running_mean", running_mean, false});
  out.push_back({name_ + ".running_var", running_var, false});
}

// ---------------------------------------------------------------------------

Linear::Linear(std::string name, std::int64_t in, std::int64_t out, Rng& rng)
    : weight(Shape{out, in}), bias(Shape{out}), name_(std::move(name)) {
  init_weights(*this, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = linear(x, weight, bias);
  trace_point(name_, y);
  return y;
}

Shape Linear::describe(const Shape& in, std::int64_t sites, CostReport& report) const {
  if (in.empty() || in.back() != weight.dim(1))
    throw DimensionError(name_ + ": expects last dim " + std::to_string(weight.dim(1)) + ", got " + shape_str(in));
  Shape out = in;
  out.back() = weight.dim(0);
  report.add(name_, out, weight.numel() + bias.numel(), weight.dim(0) * weight.dim(1) * sites);
  return out;
}

void Linear::collect(TensorList& out) const {
  out.push_back({name_ + ".weight", weight, true});
  out.push_back({name_ + ".bias", bias, true});
}

// ---------------------------------------------------------------------------

ConvBnRelu::ConvBnRelu(const std::string& name, std::int64_t c_in, std::int64_t c_out, int kernel, int stride,
                       int padding, Rng& rng, float bn_momentum, float bn_eps)
    : conv(name + ".conv", c_in, c_out, kernel, stride, padding, rng), bn(name + ".bn", c_out, bn_momentum, bn_eps) {}

Tensor ConvBnRelu::forward(const Tensor& x) { return relu(bn.forward(conv.forward(x))); }

Shape ConvBnRelu::describe(const Shape& in, CostReport& report) const {
  return bn.describe(conv.describe(in, report), report);
}

void ConvBnRelu::collect(TensorList& out) const {
  conv.collect(out);
  bn.collect(out);
}

}  // namespace pitrans
