#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pitrans/tensor.hpp"

namespace pitrans {

/// One statically described layer (or level marker). Shapes exclude the batch axis;
/// MACs are per single image.
struct CostRow {
  std::string name;
  Shape out_shape;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::vector<CostRow> rows;

  void add(std::string name, Shape out_shape, std::int64_t params, std::int64_t macs) {
    rows.push_back({std::move(name), std::move(out_shape), params, macs});
  }
  std::int64_t total_params() const;
  std::int64_t total_macs() const;
};

/// A (name, shape) pair observed while running a real forward pass. Shapes include
/// the batch axis.
struct TraceEntry {
  std::string name;
  Shape shape;
};

/// Collects `trace_point` calls made on this thread while alive.
class ShapeTraceScope {
 public:
  explicit ShapeTraceScope(std::vector<TraceEntry>& sink);
  ~ShapeTraceScope();
  ShapeTraceScope(const ShapeTraceScope&) = delete;
  ShapeTraceScope& operator=(const ShapeTraceScope&) = delete;

 private:
  std::vector<TraceEntry>* previous_;
};

void trace_point(const std::string& name, const Tensor& t);

}  // namespace pitrans
