#include "pitrans/pconvmlp.hpp"

#include <algorithm>

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

namespace {
std::vector<std::int64_t> strided_indices(std::int64_t start, std::int64_t count) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + 2 * i;
  return idx;
}
}  // namespace

std::pair<Tensor, Tensor> parity_split(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("parity_split: expected a channel axis, got " + shape_str(x.shape()));
  const auto c2 = x.dim(1);
  if (c2 % 2 != 0) throw DimensionError("parity_split: channel count " + std::to_string(c2) + " is odd");
  return {index_select(x, 1, strided_indices(0, c2 / 2)), index_select(x, 1, strided_indices(1, c2 / 2))};
}

Tensor parity_interleave(const Tensor& odd_indexed, const Tensor& even_indexed) {
  if (odd_indexed.shape() != even_indexed.shape())
    throw DimensionError("parity_interleave: halves differ " + shape_str(odd_indexed.shape()) + " vs " +
                         shape_str(even_indexed.shape()));
  const auto c = odd_indexed.dim(1);
  std::vector<std::int64_t> order(static_cast<std::size_t>(2 * c));
  for (std::int64_t i = 0; i < c; ++i) {
    order[static_cast<std::size_t>(2 * i)] = i;
    order[static_cast<std::size_t>(2 * i + 1)] = c + i;
  }
  return index_select(concat({odd_indexed, even_indexed}, 1), 1, order);
}

PConvMLPBlock::PConvMLPBlock(const std::string& name, std::int64_t c_in, std::int64_t h_in, std::int64_t w_in,
                             const PConvMlpSettings& s, Rng& rng)
    : down(name + ".down", c_in, 2 * c_in, 3, 2, 1, rng, s.bn.momentum, s.bn.eps),
      conv(name + ".conv", 2 * c_in, 2 * c_in, 3, 1, 1, rng, s.bn.momentum, s.bn.eps),
      name_(name),
      c_(c_in),
      h_in_(h_in),
      w_in_(w_in) {
  if (h_in % 2 != 0 || w_in % 2 != 0) throw ConfigError(name + ": bound resolution must be even");
  if (s.hc_expansion < 1 || s.hs_cap < 1) throw ConfigError(name + ": hidden widths must be positive");
  n_ = (h_in / 2) * (w_in / 2);
  if (s.with_mlps) {
    h_c_ = c_in * s.hc_expansion;
    h_s_ = std::min(n_, s.hs_cap);
    mlps = Mlps{Linear(name + ".ch_fc1", c_in, h_c_, rng), Linear(name + ".ch_fc2", h_c_, c_in, rng),
                Linear(name + ".sp_fc1", n_, h_s_, rng), Linear(name + ".sp_fc2", h_s_, n_, rng)};
  }
}

void PConvMLPBlock::check_input(const Shape& s, bool batched) const {
  const std::size_t off = batched ? 1 : 0;
  if (s.size() != 3 + off) throw DimensionError(name_ + ": expected c x h x w input, got " + shape_str(s));
  if (s[off] != c_)
    throw DimensionError(name_ + ": expects " + std::to_string(c_) + " channels, got " + std::to_string(s[off]));
  if (s[off + 1] % 2 != 0 || s[off + 2] % 2 != 0)
    throw DimensionError(name_ + ": H and W must be even, got " + shape_str(s));
  if (mlps && (s[off + 1] / 2) * (s[off + 2] / 2) != n_)
    throw DimensionError(name_ + ": spatial MLP is bound to n = " + std::to_string(n_) + " sites (input " +
                         std::to_string(h_in_) + "x" + std::to_string(w_in_) + "), got input " + shape_str(s));
}

Tensor PConvMLPBlock::conv_encode(const Tensor& x) {
  check_input(x.shape(), true);
  return conv.forward(down.forward(x));
}

std::pair<Tensor, Tensor> PConvMLPBlock::parallel_mlps(const Tensor& xc, const Tensor& xs) const {
  if (!mlps) throw ConfigError(name_ + ": block was built without MLP branches");
  if (xc.rank() != 4 || xs.shape() != xc.shape())
    throw DimensionError(name_ + ": MLP inputs must share a b x c x h x w shape");
  const auto b = xc.dim(0), c = xc.dim(1), h = xc.dim(2), w = xc.dim(3);
  if (h * w != n_)
    throw DimensionError(name_ + ": spatial MLP is bound to n = " + std::to_string(n_) + " sites, got " +
                         std::to_string(h * w));
  if (c != c_) throw DimensionError(name_ + ": channel MLP expects " + std::to_string(c_) + " channels");

  // Channel branch: per-site vectors over channels.
  Tensor fc = reshape(permute(xc, {0, 2, 3, 1}), {b, n_, c});
  fc = mlps->ch_fc2.forward(gelu(mlps->ch_fc1.forward(fc)));
  Tensor fc_out = permute(reshape(fc, {b, h, w, c}), {0, 3, 1, 2});

  // Spatial branch: per-channel vectors over sites.
  Tensor fs = reshape(xs, {b, c, n_});
  fs = mlps->sp_fc2.forward(gelu(mlps->sp_fc1.forward(fs)));
  Tensor fs_out = reshape(fs, {b, c, h, w});
  return {fc_out, fs_out};
}

Tensor PConvMLPBlock::forward(const Tensor& x) {
  Tensor encoded = conv_encode(x);
  Tensor out = encoded;
  if (mlps) {
    auto [xc, xs] = parity_split(encoded);
    auto [fc, fs] = parallel_mlps(xc, xs);
    out = add(encoded, concat({fc, fs}, 1));
  }
  trace_point(name_ + ".out", out);
  return out;
}

Shape PConvMLPBlock::describe(const Shape& in, CostReport& report) const {
  check_input(in, false);
  Shape enc = conv.describe(down.describe(in, report), report);
  if (mlps) {
    const std::int64_t c = c_;
    mlps->ch_fc2.describe(mlps->ch_fc1.describe(Shape{n_, c}, n_, report), n_, report);
    mlps->sp_fc2.describe(mlps->sp_fc1.describe(Shape{c, n_}, c, report), c, report);
  }
  report.add(name_ + ".out", enc, 0, 0);
  return enc;
}

void PConvMLPBlock::collect(TensorList& out) const {
  down.collect(out);
  conv.collect(out);
  if (mlps) {
    mlps->ch_fc1.collect(out);
    mlps->ch_fc2.collect(out);
    mlps->sp_fc1.collect(out);
    mlps->sp_fc2.collect(out);
  }
}

void PConvMLPBlock::set_training(bool t) {
  down.set_training(t);
  conv.set_training(t);
}

}  // namespace pitrans
