#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pitrans/tensor.hpp"

namespace pitrans {

/// One recorded op: which tensors it read, which it produced, and the closure that
/// turns the output's gradient into input-gradient contributions.
struct OpRecord {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

/// Reverse-mode record. Ops append to the tape that is active on the calling thread
/// (see `TapeScope`); append order is a topological order because an op can only
/// consume tensors that already exist.
class Tape {
 public:
  void record(OpRecord rec) { records_.push_back(std::move(rec)); }
  const std::vector<OpRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<OpRecord> records_;
};

/// Makes `tape` the recording target for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (inference, oracles).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Populates d(root)/d(leaf) for every requires-grad tensor reachable from `root`.
/// Gradients accumulate into existing buffers. Throws ContractError when `root` is
/// not a single-element tensor produced on `tape`.
void backward(const Tensor& root, Tape& tape);

/// Opt-in NaN/Inf checking after every forward op (off by default).
void set_check_finite(bool enabled);
bool check_finite_enabled();

namespace detail {

/// True when a tape is active and any input requires grad.
bool tracking(std::initializer_list<const Tensor*> inputs);
/// Appends a record to the active tape and marks `output` as requiring grad.
void record(std::string op, std::vector<Tensor> inputs, const Tensor& output, std::function<void()> backward);
/// Throws NumericError naming `op` when checking is enabled and `t` is not finite.
void check_output(const Tensor& t, const char* op);

}  // namespace detail
}  // namespace pitrans
