#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pitrans/adam.hpp"
#include "pitrans/config.hpp"
#include "pitrans/data.hpp"
#include "pitrans/gan.hpp"
#include "pitrans/generator.hpp"
#include "pitrans/tape.hpp"

namespace pitrans {

/// Component losses of one step (values after the forward pass, before the updates).
struct StepLosses {
  double l1 = 0, cgan_g = 0, tv = 0, per = 0, g_total = 0, d_total = 0;
};

/// Held-out mean L1 of both generator outputs against the ground truth.
struct EvalResult {
  double l1_direct = 0;
  double l1_final = 0;
};

/// Models, optimizers and stream positions of a run.
class TrainState {
 public:
  explicit TrainState(const RunConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  const RunConfig& config() const { return cfg_; }

  Generator generator;
  PatchDiscriminator d_direct, d_final;
  PerceptualExtractor perceptual;
  Adam g_opt, d_opt;
  /// Drives the per-epoch shuffle.
  Rng shuffle_rng;
  int epoch = 0;
  std::int64_t step = 0;

  /// Generator entries (named "G.*") followed by both discriminators ("D1.*", "D2.*").
  TensorList named_state() const;
  TensorList generator_parameters() const;
  TensorList discriminator_parameters() const;
  void set_training(bool t);

 private:
  RunConfig cfg_;
};

/// One discriminator step on detached fakes, then one generator step with the
/// discriminators frozen. Throws NumericError naming the step and component when a
/// loss is not finite.
StepLosses train_step(TrainState& state, const Batch& batch);

/// The two halves of train_step. `fake` is the generator forward for `batch`, recorded on
/// `g_tape`; `step` is the 1-based index used in error messages. The discriminator half
/// returns d_total; the generator half fills the remaining fields of `out`.
double discriminator_half_step(TrainState& state, const GeneratorOutputs& fake, const Batch& batch,
                               std::int64_t step);
void generator_half_step(TrainState& state, const GeneratorOutputs& fake, const Batch& batch, Tape& g_tape,
                         std::int64_t step, StepLosses& out);

/// Mean L1 over `samples` with batch norm in inference mode. Restores training mode.
EvalResult evaluate(TrainState& state, const std::vector<Sample>& samples, int batch_size);

inline constexpr const char* kStepLogHeader = "epoch,step,l1,cgan_g,tv,per,g_total,d_total";
inline constexpr const char* kEvalLogHeader = "epoch,l1_direct,l1_final";

std::string format_step_line(int epoch, std::int64_t step, const StepLosses& l);
std::string format_eval_line(int epoch, const EvalResult& e);

struct TrainLogs {
  /// Append-only CSVs; headers are written when the files are new or empty.
  std::filesystem::path step_csv;
  std::filesystem::path eval_csv;
};

/// Runs epochs state.epoch + 1 .. `until_epoch`. After each epoch the held-out set is
/// evaluated and `on_epoch` (if set) is called.
void train(TrainState& state, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
           int until_epoch, const TrainLogs& logs,
           const std::function<void(const TrainState&, const EvalResult&)>& on_epoch = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: "PITR", u32 version, u32-length model config text, u32 record
/// count and named tensor records (u32 name length, name, u32 rank, i64 dims, f32
/// payload), then per optimizer i64 t, u32 slot count and f64 moments, then the
/// shuffle RNG (u64 key, u64 counter), i32 epoch and i64 step. Little-endian.
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);

/// Restores into an existing state; rejects a checkpoint whose model config differs.
void decode_checkpoint(std::span<const std::uint8_t> bytes, TrainState& state);
void load_checkpoint(const std::filesystem::path& path, TrainState& state);

/// Builds a state from the model config stored in the checkpoint, then restores it.
/// Non-model keys (paths, dataset) come from `base`.
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path, const RunConfig& base = {});

/// Order-sensitive FNV-1a hash of the values of a tensor list.
std::uint64_t hash_tensors(const TensorList& list);

}  // namespace pitrans
