#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "pitrans/data.hpp"
#include "pitrans/gan.hpp"
#include "pitrans/generator.hpp"

namespace pitrans {

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 4;
  int epochs = 30;
  /// Base width of both patch discriminators.
  std::int64_t disc_channels = 16;
  LossWeights weights;
  AdamSettings adam;
};

/// Everything a run needs, loaded from a flat key=value file.
struct RunConfig {
  GeneratorConfig generator = GeneratorConfig::desk();
  TrainConfig train;
  DatasetSpec dataset;
  std::string data_dir = "data";
  std::string out_dir = "runs/default";
};

/// Parses `key = value` lines; blank lines and `#` comments are ignored. Keys not
/// listed in the text keep their defaults. Unknown keys, duplicate keys and bad
/// values raise ConfigError naming the line.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text: every key in a fixed order, floats printed to round-trip.
std::string to_text(const RunConfig& cfg);
/// Canonical text of the model-defining part only (generator, trainer); stored in checkpoints.
std::string model_text(const RunConfig& cfg);

}  // namespace pitrans
