#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pitrans {

struct GradcheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-2;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Central-difference checks of every differentiable primitive, each composite block,
/// the losses and an end-to-end desk generator probe. Inputs and weights derive from
/// `seed`; batch norm runs in inference mode inside composite blocks.
std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed);

}  // namespace pitrans
