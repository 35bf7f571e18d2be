#include "pitrans/cost.hpp"

namespace pitrans {

namespace {
thread_local std::vector<TraceEntry>* g_trace = nullptr;
}

std::int64_t CostReport::total_params() const {
  std::int64_t n = 0;
  for (const auto& r : rows) n += r.params;
  return n;
}

std::int64_t CostReport::total_macs() const {
  std::int64_t n = 0;
  for (const auto& r : rows) n += r.macs;
  return n;
}

ShapeTraceScope::ShapeTraceScope(std::vector<TraceEntry>& sink) : previous_(g_trace) { g_trace = &sink; }
ShapeTraceScope::~ShapeTraceScope() { g_trace = previous_; }

void trace_point(const std::string& name, const Tensor& t) {
  if (g_trace) g_trace->push_back({name, t.shape()});
}

}  // namespace pitrans
