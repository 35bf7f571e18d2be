#include "pitrans/tape.hpp"

#include <atomic>
#include <cmath>

#include "pitrans/errors.hpp"

namespace pitrans {

namespace {
thread_local Tape* g_active = nullptr;
std::atomic<bool> g_check_finite{false};
}  // namespace

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

Tape* active_tape() { return g_active; }

void set_check_finite(bool enabled) { g_check_finite.store(enabled); }
bool check_finite_enabled() { return g_check_finite.load(); }

void backward(const Tensor& root, Tape& tape) {
  if (!root.defined() || root.numel() != 1)
    throw ContractError("backward root must be a scalar, got shape " + shape_str(root.shape()));
  const auto& recs = tape.records();
  bool found = false;
  for (const auto& r : recs)
    if (r.output.same_as(root)) {
      found = true;
      break;
    }
  if (!found) throw ContractError("backward root was not produced on the given tape");

  Tensor seed = root;
  seed.grad_buffer()[0] += 1.0f;
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

namespace detail {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!g_active) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void record(std::string op, std::vector<Tensor> inputs, const Tensor& output, std::function<void()> backward) {
  output.set_requires_grad(true);
  g_active->record(OpRecord{std::move(op), std::move(inputs), output, std::move(backward)});
}

void check_output(const Tensor& t, const char* op) {
  if (!g_check_finite.load(std::memory_order_relaxed)) return;
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(d[i]))
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " + std::to_string(i));
}

}  // namespace detail
}  // namespace pitrans
