#include "pitrans/blocks.hpp"

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

namespace {
void require_channels(const std::string& who, std::int64_t expected, std::int64_t got) {
  if (expected != got)
    throw DimensionError(who + ": expects " + std::to_string(expected) + " input channels, got " + std::to_string(got));
}
}  // namespace

EncoderStem::EncoderStem(const std::string& name, std::int64_t out_channels, Rng& rng, BnSettings bn)
    : down(name + ".down", 3, out_channels / 2, 3, 2, 1, rng, bn.momentum, bn.eps),
      mid(name + ".mid", out_channels / 2, out_channels, 3, 1, 1, rng, bn.momentum, bn.eps),
      out(name + ".out", out_channels, out_channels, 3, 1, 1, rng, bn.momentum, bn.eps),
      name_(name) {
  if (out_channels < 2 || out_channels % 2 != 0) throw ConfigError(name + ": stem width must be even");
}

Tensor EncoderStem::forward(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError(name_ + ": expected b x 3 x H x W, got " + shape_str(x.shape()));
  require_channels(name_, 3, x.dim(1));
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw DimensionError(name_ + ": H and W must be even, got " + shape_str(x.shape()));
  return out.forward(mid.forward(down.forward(x)));
}

Shape EncoderStem::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0)
    throw DimensionError(name_ + ": H and W must be even, got " + shape_str(in));
  return out.describe(mid.describe(down.describe(in, report), report), report);
}

void EncoderStem::collect(TensorList& list) const {
  down.collect(list);
  mid.collect(list);
  out.collect(list);
}

void EncoderStem::set_training(bool t) {
  down.set_training(t);
  mid.set_training(t);
  out.set_training(t);
}

// ---------------------------------------------------------------------------

UpsampleBlock::UpsampleBlock(const std::string& name, std::int64_t c_in, std::int64_t c_out, Rng& rng, BnSettings bn)
    : first(name + ".conv0", c_in, c_out, 3, 1, 1, rng, bn.momentum, bn.eps),
      second(name + ".conv1", c_out, c_out, 3, 1, 1, rng, bn.momentum, bn.eps),
      name_(name) {}

Tensor UpsampleBlock::forward(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError(name_ + ": expected b x c x h x w, got " + shape_str(x.shape()));
  require_channels(name_, in_channels(), x.dim(1));
  Tensor up = upsample_nearest2x(x);
  trace_point(name_ + ".upsample", up);
  return second.forward(first.forward(up));
}

Shape UpsampleBlock::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3) throw DimensionError(name_ + ": expected c x h x w, got " + shape_str(in));
  require_channels(name_, in_channels(), in[0]);
  Shape up{in[0], 2 * in[1], 2 * in[2]};
  report.add(name_ + ".upsample", up, 0, 0);
  return second.describe(first.describe(up, report), report);
}

void UpsampleBlock::collect(TensorList& list) const {
  first.collect(list);
  second.collect(list);
}

void UpsampleBlock::set_training(bool t) {
  first.set_training(t);
  second.set_training(t);
}

// ---------------------------------------------------------------------------

DecoderHead::DecoderHead(const std::string& name, std::int64_t c_in, Rng& rng, BnSettings bn)
    : first(name + ".conv0", c_in, c_in, 3, 1, 1, rng, bn.momentum, bn.eps),
      second(name + ".conv1", c_in, c_in, 3, 1, 1, rng, bn.momentum, bn.eps),
      last(name + ".conv2", c_in, 3, 3, 1, 1, rng),
      name_(name) {}

Tensor DecoderHead::forward(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError(name_ + ": expected b x c x h x w, got " + shape_str(x.shape()));
  require_channels(name_, in_channels(), x.dim(1));
  Tensor y = tanh(last.forward(second.forward(first.forward(x))));
  trace_point(name_ + ".tanh", y);
  return y;
}

Shape DecoderHead::describe(const Shape& in, CostReport& report) const {
  if (in.size() != 3) throw DimensionError(name_ + ": expected c x h x w, got " + shape_str(in));
  require_channels(name_, in_channels(), in[0]);
  Shape out = last.describe(second.describe(first.describe(in, report), report), report);
  report.add(name_ + ".tanh", out, 0, 0);
  return out;
}

void DecoderHead::collect(TensorList& list) const {
  first.collect(list);
  second.collect(list);
  last.collect(list);
}

void DecoderHead::set_training(bool t) {
  first.set_training(t);
  second.set_training(t);
}

}  // namespace pitrans
