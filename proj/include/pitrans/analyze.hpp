#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pitrans/config.hpp"
#include "pitrans/cost.hpp"
#include "pitrans/gan.hpp"
#include "pitrans/generator.hpp"

namespace pitrans {

struct ModuleTotal {
  std::string module;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Module key of a row: its first two dot-separated components ("G.enc_a", "D1.conv0").
/// Discriminator rows collapse to "D1"/"D2".
std::string module_of(const std::string& row_name);
/// Per-module sums in first-appearance order.
std::vector<ModuleTotal> module_totals(const CostReport& report);

/// Static report of the generator and both discriminators for one 3 x H x W input.
struct ModelAnalysis {
  RunConfig config;
  CostReport generator;
  CostReport discriminators;
  std::int64_t generator_params() const { return generator.total_params(); }
  std::int64_t generator_macs() const { return generator.total_macs(); }
  std::int64_t total_params() const { return generator.total_params() + discriminators.total_params(); }
  std::int64_t total_macs() const { return generator.total_macs() + discriminators.total_macs(); }
};

ModelAnalysis analyze_model(const RunConfig& cfg);

/// Sum of trainable elements (BN running statistics excluded).
std::int64_t count_params(const TensorList& params);

/// Shapes recorded while running the real forward pass on a zero batch of one.
std::vector<TraceEntry> dynamic_trace(Generator& g);
std::vector<TraceEntry> dynamic_trace(PatchDiscriminator& d, std::int64_t image_size);

/// Compares a real forward trace against the static rows: every traced name must
/// exist in the report with the same shape (batch axis dropped). Returns one message
/// per mismatch; empty means consistent.
std::vector<std::string> cross_check(const CostReport& report, const std::vector<TraceEntry>& trace);

/// Level markers ("<prefix>.L1" .. "<prefix>.L4") from a report.
std::vector<CostRow> level_rows(const CostReport& report, const std::string& prefix);

std::string format_table(const CostReport& report);
/// CSV with header `layer,out_shape,params,macs`.
std::string format_csv(const CostReport& report);
/// Per-module breakdown plus generator-only and generator+discriminator totals.
std::string format_summary(const ModelAnalysis& a);

}  // namespace pitrans
