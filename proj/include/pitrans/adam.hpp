#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pitrans/config.hpp"
#include "pitrans/layers.hpp"

namespace pitrans {

/// Moments for one parameter, kept in double.
struct AdamSlot {
  std::string name;
  Tensor param;
  std::vector<double> m, v;
};

/// Bias-corrected Adam over the trainable entries of a TensorList.
class Adam {
 public:
  Adam() = default;
  Adam(const TensorList& params, AdamSettings settings = {});

  /// One update from the accumulated gradients; throws ContractError naming any
  /// parameter without a gradient.
  void step();
  void zero_grad();

  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  const AdamSettings& settings() const { return settings_; }
  std::vector<AdamSlot>& slots() { return slots_; }
  const std::vector<AdamSlot>& slots() const { return slots_; }

 private:
  AdamSettings settings_;
  std::vector<AdamSlot> slots_;
  std::int64_t t_ = 0;
};

/// Single-parameter update in double precision; returns the new parameter value.
/// `t` is the step count after incrementing (first call uses t = 1).
double adam_update(double param, double grad, double& m, double& v, std::int64_t t, const AdamSettings& s);

}  // namespace pitrans
