#include "pitrans/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "pitrans/errors.hpp"
#include "pitrans/tape.hpp"

namespace pitrans {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using detail::check_output;
using detail::record;
using detail::tracking;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

// outer x axis x inner decomposition around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, size = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.size = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd f, Deriv dydx) {
  Tensor out(x.shape());
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  if (tracking({&x})) {
    record(name, {x}, out, [x, out, dydx]() mutable {
      const auto g = out.grad();
      const auto xv = x.data();
      const auto yv = out.data();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
    });
  }
  check_output(out, name);
  return out;
}

void accumulate(const Tensor& t, std::span<const float> g, float scale = 1.0f) {
  auto gt = t.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) gt[i] += scale * g[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto ad = a.data(), bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  if (tracking({&a, &b})) {
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    record("add", {a, b}, out, [a, b, out, ga, gb]() mutable {
      if (ga) accumulate(a, out.grad());
      if (gb) accumulate(b, out.grad());
    });
  }
  check_output(out, "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const auto ad = a.data(), bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  if (tracking({&a, &b})) {
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    record("sub", {a, b}, out, [a, b, out, ga, gb]() mutable {
      if (ga) accumulate(a, out.grad());
      if (gb) accumulate(b, out.grad(), -1.0f);
    });
  }
  check_output(out, "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto ad = a.data(), bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  if (tracking({&a, &b})) {
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    record("mul", {a, b}, out, [a, b, out, ga, gb]() mutable {
      const auto g = out.grad();
      const auto av = a.data(), bv = b.data();
      if (ga) {
        auto gx = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bv[i];
      }
      if (gb) {
        auto gy = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * av[i];
      }
    });
  }
  check_output(out, "mul");
  return out;
}

Tensor add_scalar(const Tensor& x, float c) {
  return unary(x, "add_scalar", [c](float v) { return v + c; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float c) {
  return unary(x, "mul_scalar", [c](float v) { return v * c; }, [c](float, float) { return c; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary(
      x, "leaky_relu", [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh",
      [](float v) {
        // float tanh rounds to +-1 beyond |v| ~ 9; keep the range open
        constexpr float kMax = 0.99999994f;
        return std::clamp(std::tanh(v), -kMax, kMax);
      },
      [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor log(const Tensor& x) {
  for (float v : x.data())
    if (!(v > 0.0f)) throw NumericError("log: non-positive input " + std::to_string(v));
  return unary(
      x, "log", [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor gelu(const Tensor& x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float a = 0.044715f;
  return unary(
      x, "gelu",
      [](float v) { return 0.5f * v * (1.0f + std::tanh(k * (v + a * v * v * v))); },
      [](float v, float) {
        const float t = std::tanh(k * (v + a * v * v * v));
        return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * k * (1.0f + 3.0f * a * v * v);
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tracking({&x})) {
    record("sum", {x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (auto& v : x.grad_buffer()) v += g;
    });
  }
  check_output(out, "sum");
  return out;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const auto n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (tracking({&x})) {
    record("mean", {x}, out, [x, out, n]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      for (auto& v : x.grad_buffer()) v += g;
    });
  }
  check_output(out, "mean");
  return out;
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (tracking({&x})) {
    record("reshape", {x}, out, [x, out]() mutable { accumulate(x, out.grad()); });
  }
  return out;
}

namespace {

// Gathers `src` (shape `in_shape`) into permuted layout; when `inverse` the mapping
// runs from the permuted layout back (used for the gradient).
void permute_copy(std::span<const float> src, std::span<float> dst, const Shape& in_shape,
                  const std::vector<int>& perm, bool scatter_add) {
  const std::size_t r = in_shape.size();
  std::vector<std::int64_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::int64_t> stride_for_out(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
    stride_for_out[i] = in_stride[static_cast<std::size_t>(perm[i])];
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t in_off = 0;
  const std::int64_t n = shape_numel(out_shape);
  for (std::int64_t o = 0; o < n; ++o) {
    if (scatter_add)
      dst[static_cast<std::size_t>(in_off)] += src[static_cast<std::size_t>(o)];
    else
      dst[static_cast<std::size_t>(o)] = src[static_cast<std::size_t>(in_off)];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      in_off += stride_for_out[d];
      if (idx[d] < out_shape[d]) break;
      in_off -= stride_for_out[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) throw DimensionError("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  Tensor out(out_shape);
  permute_copy(x.data(), out.mutable_data(), x.shape(), perm, false);
  if (tracking({&x})) {
    record("permute", {x}, out, [x, out, perm]() mutable {
      permute_copy(out.grad(), x.grad_buffer(), x.shape(), perm, true);
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  const int r = x.rank();
  if (r < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<int> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(r - 1)], perm[static_cast<std::size_t>(r - 2)]);
  return permute(x, perm);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int r = parts[0].rank();
  axis = normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != parts[0].shape()[static_cast<std::size_t>(d)])
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  Tensor out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  auto od = out.mutable_data();
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    const AxisSplit ps = split_at(p.shape(), axis);
    const std::int64_t chunk = ps.size * ps.inner;
    const auto pd = p.data();
    for (std::int64_t o = 0; o < os.outer; ++o)
      std::copy_n(pd.begin() + o * chunk, chunk, od.begin() + o * os.size * os.inner + offset);
    offsets.push_back(offset);
    offset += chunk;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (active_tape() && any) {
    std::vector<bool> flags;
    for (const auto& p : parts) flags.push_back(p.requires_grad());
    record("concat", parts, out, [parts, out, offsets, flags, os]() mutable {
      const auto g = out.grad();
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!flags[k]) continue;
        const std::int64_t chunk = parts[k].numel() / os.outer;
        auto gp = parts[k].grad_buffer();
        for (std::int64_t o = 0; o < os.outer; ++o)
          for (std::int64_t i = 0; i < chunk; ++i)
            gp[static_cast<std::size_t>(o * chunk + i)] += g[static_cast<std::size_t>(o * os.size * os.inner + offsets[k] + i)];
      }
    });
  }
  return out;
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "narrow");
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > s.size)
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of size " + std::to_string(s.size));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out(out_shape);
  const auto xd = x.data();
  auto od = out.mutable_data();
  const std::int64_t chunk = length * s.inner;
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.begin() + o * s.size * s.inner + start * s.inner, chunk, od.begin() + o * chunk);
  if (tracking({&x})) {
    record("narrow", {x}, out, [x, out, s, start, chunk]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t i = 0; i < chunk; ++i)
          gx[static_cast<std::size_t>(o * s.size * s.inner + start * s.inner + i)] += g[static_cast<std::size_t>(o * chunk + i)];
    });
  }
  return out;
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::int64_t>& indices) {
  axis = normalize_axis(axis, x.rank(), "index_select");
  const AxisSplit s = split_at(x.shape(), axis);
  if (indices.empty()) throw DimensionError("index_select: empty index list");
  for (auto i : indices)
    if (i < 0 || i >= s.size) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
  Shape out_shape = x.shape();
  const auto m = static_cast<std::int64_t>(indices.size());
  out_shape[static_cast<std::size_t>(axis)] = m;
  Tensor out(out_shape);
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < m; ++j)
      std::copy_n(xd.begin() + (o * s.size + indices[static_cast<std::size_t>(j)]) * s.inner, s.inner,
                  od.begin() + (o * m + j) * s.inner);
  if (tracking({&x})) {
    record("index_select", {x}, out, [x, out, s, m, indices]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t j = 0; j < m; ++j) {
          const std::int64_t src = (o * m + j) * s.inner;
          const std::int64_t dst = (o * s.size + indices[static_cast<std::size_t>(j)]) * s.inner;
          for (std::int64_t i = 0; i < s.inner; ++i)
            gx[static_cast<std::size_t>(dst + i)] += g[static_cast<std::size_t>(src + i)];
        }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("upsample_nearest2x: expected b x c x h x w, got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2), w = x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < 2 * w; ++j)
        od[static_cast<std::size_t>((p * 2 * h + i) * 2 * w + j)] = xd[static_cast<std::size_t>((p * h + i / 2) * w + j / 2)];
  if (tracking({&x})) {
    record("upsample_nearest2x", {x}, out, [x, out, planes, h, w]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < 2 * h; ++i)
          for (std::int64_t j = 0; j < 2 * w; ++j)
            gx[static_cast<std::size_t>((p * h + i / 2) * w + j / 2)] += g[static_cast<std::size_t>((p * 2 * h + i) * 2 * w + j)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out(x.shape());
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.size * s.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < s.size; ++k) mx = std::max(mx, xd[static_cast<std::size_t>(base + k * s.inner)]);
      double z = 0.0;
      for (std::int64_t k = 0; k < s.size; ++k) {
        const float e = std::exp(xd[static_cast<std::size_t>(base + k * s.inner)] - mx);
        od[static_cast<std::size_t>(base + k * s.inner)] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (std::int64_t k = 0; k < s.size; ++k) od[static_cast<std::size_t>(base + k * s.inner)] *= inv;
    }
  if (tracking({&x})) {
    record("softmax", {x}, out, [x, out, s]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t in = 0; in < s.inner; ++in) {
          const std::int64_t base = o * s.size * s.inner + in;
          double dot = 0.0;
          for (std::int64_t k = 0; k < s.size; ++k) {
            const auto i = static_cast<std::size_t>(base + k * s.inner);
            dot += static_cast<double>(g[i]) * y[i];
          }
          for (std::int64_t k = 0; k < s.size; ++k) {
            const auto i = static_cast<std::size_t>(base + k * s.inner);
            gx[i] += y[i] * (g[i] - static_cast<float>(dot));
          }
        }
    });
  }
  check_output(out, "softmax");
  return out;
}

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != a.rank())
    throw DimensionError("matmul: operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " need equal rank >= 2");
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("matmul: batch dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
  if (b.dim(r - 2) != k)
    throw DimensionError("matmul: inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t batch = a.numel() / (m * k);
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(r - 1)] = n;
  Tensor out(out_shape);
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  float* op = out.mutable_data().data();
  for (std::int64_t t = 0; t < batch; ++t) {
    MatMap(op + t * m * n, m, n).noalias() = ConstMatMap(ap + t * m * k, m, k) * ConstMatMap(bp + t * k * n, k, n);
  }
  if (tracking({&a, &b})) {
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    record("matmul", {a, b}, out, [a, b, out, ga, gb, batch, m, k, n]() mutable {
      const float* g = out.grad().data();
      const float* av = a.data().data();
      const float* bv = b.data().data();
      float* gap = ga ? a.grad_buffer().data() : nullptr;
      float* gbp = gb ? b.grad_buffer().data() : nullptr;
      for (std::int64_t t = 0; t < batch; ++t) {
        ConstMatMap dc(g + t * m * n, m, n);
        if (ga) MatMap(gap + t * m * k, m, k).noalias() += dc * ConstMatMap(bv + t * k * n, k, n).transpose();
        if (gb) MatMap(gbp + t * k * n, k, n).noalias() += ConstMatMap(av + t * m * k, m, k).transpose() * dc;
      }
    });
  }
  check_output(out, "matmul");
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::int64_t c_in, h, w, k, stride, pad, h_out, w_out;
  std::int64_t col_rows() const { return c_in * k * k; }
  std::int64_t col_cols() const { return h_out * w_out; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const float* img, const ConvGeom& g, float* cols) {
  for (std::int64_t c = 0; c < g.c_in; ++c)
    for (std::int64_t ki = 0; ki < g.k; ++ki)
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        float* row = cols + ((c * g.k + ki) * g.k + kj) * g.col_cols();
        const float* plane = img + c * g.h * g.w;
        for (std::int64_t oi = 0; oi < g.h_out; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          float* dst = row + oi * g.w_out;
          if (ii < 0 || ii >= g.h) {
            std::fill_n(dst, g.w_out, 0.0f);
            continue;
          }
          const float* src = plane + ii * g.w;
          for (std::int64_t oj = 0; oj < g.w_out; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            dst[oj] = (jj >= 0 && jj < g.w) ? src[jj] : 0.0f;
          }
        }
      }
}

void col2im_add(const float* cols, const ConvGeom& g, float* img) {
  for (std::int64_t c = 0; c < g.c_in; ++c)
    for (std::int64_t ki = 0; ki < g.k; ++ki)
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const float* row = cols + ((c * g.k + ki) * g.k + kj) * g.col_cols();
        float* plane = img + c * g.h * g.w;
        for (std::int64_t oi = 0; oi < g.h_out; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h) continue;
          const float* src = row + oi * g.w_out;
          float* dst = plane + ii * g.w;
          for (std::int64_t oj = 0; oj < g.w_out; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            if (jj >= 0 && jj < g.w) dst[jj] += src[oj];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (input.rank() != 4) throw DimensionError("conv2d: input must be b x c x h x w, got " + shape_str(input.shape()));
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
    throw DimensionError("conv2d: weight must be c_out x c_in x k x k, got " + shape_str(weight.shape()));
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
  const auto batch = input.dim(0);
  ConvGeom g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), stride, padding, 0, 0};
  const auto c_out = weight.dim(0);
  if (weight.dim(1) != g.c_in)
    throw DimensionError("conv2d: input has " + std::to_string(g.c_in) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out))
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match c_out " + std::to_string(c_out));
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k)
    throw DimensionError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(input.shape()));
  g.h_out = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  Tensor out(Shape{batch, c_out, g.h_out, g.w_out});
  const float* xp = input.data().data();
  const float* wp = weight.data().data();
  float* op = out.mutable_data().data();
  const auto rows = g.col_rows(), cols_n = g.col_cols();
  FloatBuffer cols(g.pointwise() ? 0 : static_cast<std::size_t>(rows * cols_n));
  ConstMatMap wmat(wp, c_out, rows);
  for (std::int64_t b = 0; b < batch; ++b) {
    const float* img = xp + b * g.c_in * g.h * g.w;
    const float* cp = img;
    if (!g.pointwise()) {
      im2col(img, g, cols.data());
      cp = cols.data();
    }
    MatMap o(op + b * c_out * cols_n, c_out, cols_n);
    o.noalias() = wmat * ConstMatMap(cp, rows, cols_n);
    if (bias.defined()) {
      const auto bd = bias.data();
      for (std::int64_t c = 0; c < c_out; ++c) o.row(c).array() += bd[static_cast<std::size_t>(c)];
    }
  }

  if (tracking({&input, &weight, &bias})) {
    const bool gx = input.requires_grad(), gw = weight.requires_grad(), gb = bias.defined() && bias.requires_grad();
    std::vector<Tensor> ins{input, weight};
    if (bias.defined()) ins.push_back(bias);
    record("conv2d", std::move(ins), out, [input, weight, bias, out, g, batch, c_out, gx, gw, gb]() mutable {
      const auto rows = g.col_rows(), cols_n = g.col_cols();
      const float* go = out.grad().data();
      const float* xp = input.data().data();
      ConstMatMap wmat(weight.data().data(), c_out, rows);
      FloatBuffer cols(static_cast<std::size_t>(rows * cols_n));
      float* gwp = gw ? weight.grad_buffer().data() : nullptr;
      float* gxp = gx ? input.grad_buffer().data() : nullptr;
      float* gbp = gb ? bias.grad_buffer().data() : nullptr;
      for (std::int64_t b = 0; b < batch; ++b) {
        ConstMatMap dout(go + b * c_out * cols_n, c_out, cols_n);
        if (gb)
          for (std::int64_t c = 0; c < c_out; ++c) gbp[c] += dout.row(c).sum();
        if (gw) {
          const float* img = xp + b * g.c_in * g.h * g.w;
          const float* cp = img;
          if (!g.pointwise()) {
            im2col(img, g, cols.data());
            cp = cols.data();
          }
          MatMap(gwp, c_out, rows).noalias() += dout * ConstMatMap(cp, rows, cols_n).transpose();
        }
        if (gx) {
          float* gimg = gxp + b * g.c_in * g.h * g.w;
          if (g.pointwise()) {
            MatMap(gimg, rows, cols_n).noalias() += wmat.transpose() * dout;
          } else {
            MatMap(cols.data(), rows, cols_n).noalias() = wmat.transpose() * dout;
            col2im_add(cols.data(), g, gimg);
          }
        }
      }
    });
  }
  check_output(out, "conv2d");
  return out;
}

// ---------------------------------------------------------------------------
// Dense

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be out x in, got " + shape_str(weight.shape()));
  const auto out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(in_f));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f))
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(out_f));
  const std::int64_t m = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  MatMap o(out.mutable_data().data(), m, out_f);
  ConstMatMap xm(x.data().data(), m, in_f);
  ConstMatMap wm(weight.data().data(), out_f, in_f);
  o.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXf> bv(bias.data().data(), out_f);
    o.rowwise() += bv;
  }
  if (tracking({&x, &weight, &bias})) {
    const bool gx = x.requires_grad(), gw = weight.requires_grad(), gb = bias.defined() && bias.requires_grad();
    std::vector<Tensor> ins{x, weight};
    if (bias.defined()) ins.push_back(bias);
    record("linear", std::move(ins), out, [x, weight, bias, out, m, in_f, out_f, gx, gw, gb]() mutable {
      ConstMatMap dy(out.grad().data(), m, out_f);
      if (gx)
        MatMap(x.grad_buffer().data(), m, in_f).noalias() += dy * ConstMatMap(weight.data().data(), out_f, in_f);
      if (gw)
        MatMap(weight.grad_buffer().data(), out_f, in_f).noalias() += dy.transpose() * ConstMatMap(x.data().data(), m, in_f);
      if (gb) Eigen::Map<Eigen::RowVectorXf>(bias.grad_buffer().data(), out_f) += dy.colwise().sum();
    });
  }
  check_output(out, "linear");
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum, float eps) {
  if (x.rank() != 4) throw DimensionError("batch_norm: expected b x c x h x w, got " + shape_str(x.shape()));
  const auto b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)})
    if (t->rank() != 1 || t->dim(0) != c)
      throw DimensionError("batch_norm: per-channel tensor shape " + shape_str(t->shape()) + " does not match " +
                           std::to_string(c) + " channels");
  const std::int64_t count = b * hw;
  if (training && count < 2) throw DimensionError("batch_norm: training mode needs more than one value per channel");

  std::vector<float> mu(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  const auto xd = x.data();
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0, ss = 0.0;
      for (std::int64_t n = 0; n < b; ++n) {
        const float* p = xd.data() + (n * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::int64_t n = 0; n < b; ++n) {
        const float* p = xd.data() + (n * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = p[i] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mu[static_cast<std::size_t>(ch)] = static_cast<float>(m);
      invstd[static_cast<std::size_t>(ch)] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const auto i = static_cast<std::size_t>(ch);
      rm[i] = static_cast<float>((1.0 - momentum) * rm[i] + momentum * m);
      rv[i] = static_cast<float>((1.0 - momentum) * rv[i] +
                                 momentum * ss / static_cast<double>(count - 1));
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto i = static_cast<std::size_t>(ch);
      mu[i] = rm[i];
      invstd[i] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[i]) + eps));
    }
  }

  Tensor out(x.shape());
  auto od = out.mutable_data();
  const auto gd = gamma.data(), bd = beta.data();
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto i = static_cast<std::size_t>(ch);
      const float scale = gd[i] * invstd[i];
      const float shift = bd[i] - mu[i] * scale;
      const float* p = xd.data() + (n * c + ch) * hw;
      float* q = od.data() + (n * c + ch) * hw;
      for (std::int64_t k = 0; k < hw; ++k) q[k] = p[k] * scale + shift;
    }

  if (tracking({&x, &gamma, &beta})) {
    const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gbt = beta.requires_grad();
    record("batch_norm", {x, gamma, beta}, out,
           [x, gamma, beta, out, mu, invstd, training, b, c, hw, count, gx, gg, gbt]() mutable {
             const auto go = out.grad();
             const auto xd = x.data();
             const auto gd = gamma.data();
             for (std::int64_t ch = 0; ch < c; ++ch) {
               const auto i = static_cast<std::size_t>(ch);
               double sum_dy = 0.0, sum_dy_xhat = 0.0;
               for (std::int64_t n = 0; n < b; ++n) {
                 const float* p = xd.data() + (n * c + ch) * hw;
                 const float* g = go.data() + (n * c + ch) * hw;
                 for (std::int64_t k = 0; k < hw; ++k) {
                   sum_dy += g[k];
                   sum_dy_xhat += static_cast<double>(g[k]) * (p[k] - mu[i]) * invstd[i];
                 }
               }
               if (gg) gamma.grad_buffer()[i] += static_cast<float>(sum_dy_xhat);
               if (gbt) beta.grad_buffer()[i] += static_cast<float>(sum_dy);
               if (!gx) continue;
               auto gxb = x.grad_buffer();
               const float gscale = gd[i] * invstd[i];
               const auto inv_n = 1.0 / static_cast<double>(count);
               for (std::int64_t n = 0; n < b; ++n) {
                 const float* p = xd.data() + (n * c + ch) * hw;
                 const float* g = go.data() + (n * c + ch) * hw;
                 float* q = gxb.data() + (n * c + ch) * hw;
                 for (std::int64_t k = 0; k < hw; ++k) {
                   if (training) {
                     const double xhat = (p[k] - mu[i]) * invstd[i];
                     q[k] += static_cast<float>(gscale * (g[k] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat));
                   } else {
                     q[k] += gscale * g[k];
                   }
                 }
               }
             }
           });
  }
  check_output(out, "batch_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Loss

Tensor bce_with_logits(const Tensor& logits, float target) {
  if (target != 0.0f && target != 1.0f) throw ContractError("bce_with_logits: target must be 0 or 1");
  const double cap = -std::log(1e-12);
  const auto xd = logits.data();
  double acc = 0.0;
  std::vector<bool> capped(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    double l = std::max(v, 0.0) - v * target + std::log1p(std::exp(-std::fabs(v)));
    if (l > cap) {
      l = cap;
      capped[i] = true;
    }
    acc += l;
  }
  const auto n = static_cast<double>(xd.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (tracking({&logits})) {
    record("bce_with_logits", {logits}, out, [logits, out, capped, target, n]() mutable {
      const double g = out.grad()[0] / n;
      const auto xv = logits.data();
      auto gx = logits.grad_buffer();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (capped[i]) continue;
        const double v = xv[i];
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        gx[i] += static_cast<float>(g * (s - target));
      }
    });
  }
  check_output(out, "bce_with_logits");
  return out;
}

}  // namespace pitrans
