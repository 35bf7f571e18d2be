#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace pitrans {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);

/// 64-byte aligned storage. Eigen's vectorized reductions peel leading elements up to
/// the first aligned address, so the summation order (and the rounding) depends on
/// where a buffer starts; a fixed alignment keeps results independent of heap history.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;
std::string shape_str(const Shape& shape);

/// Dense row-major float32 tensor with an optional gradient buffer.
///
/// `Tensor` is a shared handle: copies alias the same storage, which is what the
/// tape relies on to route gradients back to the tensors an op consumed. Values are
/// treated as immutable once an op has produced them; only parameters are updated
/// in place (by the optimizer) through `mutable_data()`.
class Tensor {
 public:
  /// A 0-element placeholder; `defined()` is false.
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  std::int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data() const;
  float item() const;
  float at(std::int64_t flat_index) const { return data()[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const;
  void set_requires_grad(bool value) const;

  bool has_grad() const;
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const float> grad() const;
  /// Gradient buffer, allocated and zero-filled on first use.
  std::span<float> grad_buffer() const;
  void zero_grad() const;

  /// New leaf sharing no storage or history with this tensor.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// True when both handles refer to the same storage.
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    FloatBuffer data;
    FloatBuffer grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

}  // namespace pitrans
