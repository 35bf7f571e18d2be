#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pitrans/trainer.hpp"

namespace pitrans {

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  /// Held-out evaluation after every epoch (index 0 = epoch 1).
  std::vector<EvalResult> history;
  double seconds = 0.0;

  const EvalResult& first() const { return history.front(); }
  const EvalResult& last() const { return history.back(); }
};

/// Trains variant `variant` ("A", "E" or "F") of `base` with generator seed `seed` for
/// base.train.epochs epochs. When `log_dir` is non-empty the step and eval CSVs and the
/// final checkpoint are written there.
AblationRun run_variant(const RunConfig& base, const std::string& variant, std::uint64_t seed,
                        const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                        const std::filesystem::path& log_dir = {});

double median(std::vector<double> values);

/// Median over seeds of the final-epoch held-out L1 of I_g'' for one variant.
double median_final_l1(const std::vector<AblationRun>& runs, const std::string& variant);

/// Per-seed and median held-out L1 (I_g'' and I_g') for every variant present.
std::string format_ablation_table(const std::vector<AblationRun>& runs);

}  // namespace pitrans
