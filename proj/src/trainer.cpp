#include "pitrans/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "pitrans/errors.hpp"
#include "pitrans/ops.hpp"
#include "pitrans/tape.hpp"

namespace pitrans {

namespace {

Generator make_generator(const RunConfig& cfg) { return Generator(cfg.generator); }

PatchDiscriminator make_disc(const std::string& name, const RunConfig& cfg, Rng& rng) {
  const BnSettings bn{cfg.generator.bn_momentum, cfg.generator.bn_eps};
  return PatchDiscriminator(name, cfg.train.disc_channels, rng, bn);
}

void append(TensorList& out, const TensorList& in) { out.insert(out.end(), in.begin(), in.end()); }

}  // namespace

TrainState::TrainState(const RunConfig& cfg)
    : generator(make_generator(cfg)), shuffle_rng(cfg.generator.seed, "shuffle"), cfg_(cfg) {
  Rng d_rng(cfg.generator.seed, "discriminator");
  d_direct = make_disc("D1", cfg, d_rng);
  d_final = make_disc("D2", cfg, d_rng);
  g_opt = Adam(generator_parameters(), cfg.train.adam);
  d_opt = Adam(discriminator_parameters(), cfg.train.adam);
}

TensorList TrainState::generator_parameters() const {
  TensorList out;
  append(out, generator.parameters());
  return out;
}

TensorList TrainState::discriminator_parameters() const {
  TensorList out;
  append(out, d_direct.parameters());
  append(out, d_final.parameters());
  return out;
}

TensorList TrainState::named_state() const {
  TensorList out = generator_parameters();
  for (auto& e : discriminator_parameters()) out.push_back(std::move(e));
  return out;
}

void TrainState::set_training(bool t) {
  generator.set_training(t);
  d_direct.set_training(t);
  d_final.set_training(t);
}

namespace {

double checked(const Tensor& t, std::int64_t step, const char* component) {
  const double v = t.item();
  if (!std::isfinite(v))
    throw NumericError("step " + std::to_string(step) + ": non-finite " + component + " loss (" + std::to_string(v) +
                       ")");
  return v;
}

}  // namespace

double discriminator_half_step(TrainState& s, const GeneratorOutputs& fake, const Batch& batch, std::int64_t step) {
  Tape d_tape;
  TapeScope scope(d_tape);
  Tensor d_total = discriminator_objective(fake.direct.detach(), fake.final.detach(), batch.ground, batch.aerial,
                                           s.d_direct, s.d_final);
  const double value = checked(d_total, step, "d_total");
  s.d_opt.zero_grad();
  backward(d_total, d_tape);
  s.d_opt.step();
  return value;
}

void generator_half_step(TrainState& s, const GeneratorOutputs& fake, const Batch& batch, Tape& g_tape,
                         std::int64_t step, StepLosses& out) {
  s.d_direct.set_trainable(false);
  s.d_final.set_trainable(false);
  try {
    TapeScope scope(g_tape);
    ObjectiveTerms t = generator_objective(fake.direct, fake.final, batch.ground, batch.aerial, s.d_direct,
                                           s.d_final, s.perceptual, s.config().train.weights);
    out.l1 = checked(t.l1, step, "l1");
    out.cgan_g = checked(t.cgan_g, step, "cgan_g");
    out.tv = checked(t.tv, step, "tv");
    out.per = checked(t.per, step, "per");
    out.g_total = checked(t.g_total, step, "g_total");
    s.g_opt.zero_grad();
    backward(t.g_total, g_tape);
    s.g_opt.step();
  } catch (...) {
    s.d_direct.set_trainable(true);
    s.d_final.set_trainable(true);
    throw;
  }
  s.d_direct.set_trainable(true);
  s.d_final.set_trainable(true);
  s.d_opt.zero_grad();
}

StepLosses train_step(TrainState& s, const Batch& batch) {
  const std::int64_t step = s.step + 1;
  StepLosses out;
  Tape g_tape;
  GeneratorOutputs fake;
  {
    TapeScope scope(g_tape);
    fake = s.generator.forward(batch.aerial, batch.semantic);
  }
  out.d_total = discriminator_half_step(s, fake, batch, step);
  generator_half_step(s, fake, batch, g_tape, step, out);
  s.step = step;
  return out;
}

EvalResult evaluate(TrainState& s, const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) return {};
  NoGradScope no_grad;
  s.set_training(false);
  double sum_direct = 0, sum_final = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const GeneratorOutputs o = s.generator.forward(b.aerial, b.semantic);
    // Per-batch means weighted by batch size give the per-sample mean.
    sum_direct += static_cast<double>(l1_loss(o.direct, b.ground).item()) * static_cast<double>(idx.size());
    sum_final += static_cast<double>(l1_loss(o.final, b.ground).item()) * static_cast<double>(idx.size());
  }
  s.set_training(true);
  const auto n = static_cast<double>(samples.size());
  return {sum_direct / n, sum_final / n};
}

std::string format_step_line(int epoch, std::int64_t step, const StepLosses& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", epoch, static_cast<long long>(step), l.l1,
                l.cgan_g, l.tv, l.per, l.g_total, l.d_total);
  return buf;
}

std::string format_eval_line(int epoch, const EvalResult& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f", epoch, e.l1_direct, e.l1_final);
  return buf;
}

namespace {

std::ofstream open_log(const std::filesystem::path& path, const char* header) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot open log " + path.string());
  if (fresh) f << header << '\n';
  return f;
}

}  // namespace

void train(TrainState& s, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set, int until_epoch,
           const TrainLogs& logs, const std::function<void(const TrainState&, const EvalResult&)>& on_epoch) {
  if (train_set.empty()) throw ConfigError("training set is empty");
  std::ofstream step_log, eval_log;
  if (!logs.step_csv.empty()) step_log = open_log(logs.step_csv, kStepLogHeader);
  if (!logs.eval_csv.empty()) eval_log = open_log(logs.eval_csv, kEvalLogHeader);
  const auto bs = static_cast<std::size_t>(s.config().train.batch_size);
  std::vector<std::size_t> order(train_set.size());
  while (s.epoch < until_epoch) {
    const int epoch = s.epoch + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[s.shuffle_rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const Batch b = make_batch(train_set, std::span<const std::size_t>(order.data() + start, end - start));
      const StepLosses l = train_step(s, b);
      if (step_log.is_open()) step_log << format_step_line(epoch, s.step, l) << '\n';
    }
    s.epoch = epoch;
    const EvalResult e = evaluate(s, test_set, s.config().train.batch_size);
    if (step_log.is_open()) step_log.flush();
    if (eval_log.is_open()) eval_log << format_eval_line(epoch, e) << '\n' << std::flush;
    if (on_epoch) on_epoch(s, e);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kMagic[4] = {'P', 'I', 'T', 'R'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    // Hosts are little-endian; the loop keeps the byte order explicit.
    std::uint64_t bits = 0;
    std::memcpy(&bits, raw, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw ParseError(std::string("checkpoint truncated while reading ") + what, b_.size());
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_adam(Writer& w, const Adam& a) {
  w.put(a.t());
  w.put(static_cast<std::uint32_t>(a.slots().size()));
  for (const auto& s : a.slots()) {
    w.put_string(s.name);
    w.put(static_cast<std::uint64_t>(s.m.size()));
    for (double x : s.m) w.put(x);
    for (double x : s.v) w.put(x);
  }
}

void read_adam(Reader& r, Adam& a, const char* which) {
  const std::size_t at = r.pos();
  const auto t = r.get<std::int64_t>("optimizer step");
  if (t < 0) throw ParseError(std::string(which) + " optimizer step is negative", at);
  const auto count = r.get<std::uint32_t>("optimizer slot count");
  if (count != a.slots().size())
    throw ParseError(std::string(which) + " optimizer slot count mismatch: " + std::to_string(count) + " vs " +
                         std::to_string(a.slots().size()),
                     at + 8);
  for (auto& s : a.slots()) {
    const std::size_t name_at = r.pos();
    const std::string name = r.get_string("optimizer slot name");
    if (name != s.name) throw ParseError("optimizer slot '" + name + "' where '" + s.name + "' expected", name_at);
    const std::size_t n_at = r.pos();
    const auto n = r.get<std::uint64_t>("optimizer slot size");
    if (n != s.m.size()) throw ParseError("optimizer slot '" + name + "' has the wrong size", n_at);
    r.need(n * 16, "optimizer moments");
    for (auto& x : s.m) x = r.get<double>("moment");
    for (auto& x : s.v) x = r.get<double>("moment");
  }
  a.set_t(t);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& s) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.put(kCheckpointVersion);
  w.put_string(model_text(s.config()));
  const TensorList state = s.named_state();
  w.put(static_cast<std::uint32_t>(state.size()));
  for (const auto& e : state) {
    w.put_string(e.name);
    w.put(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.put(static_cast<std::int64_t>(d));
    for (float x : e.tensor.data()) w.put(x);
  }
  write_adam(w, s.g_opt);
  write_adam(w, s.d_opt);
  w.put(s.shuffle_rng.key());
  w.put(s.shuffle_rng.counter());
  w.put(static_cast<std::int32_t>(s.epoch));
  w.put(s.step);
  return std::move(w.bytes);
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  const auto bytes = encode_checkpoint(s);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

namespace {

std::string read_config_blob(Reader& r) {
  r.need(4, "magic");
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t at = r.pos();
    if (r.get<std::uint8_t>("magic") != static_cast<std::uint8_t>(kMagic[i]))
      throw ParseError("checkpoint: bad magic (expected PITR)", at);
  }
  const std::size_t at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), at);
  return r.get_string("config");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

void decode_checkpoint(std::span<const std::uint8_t> bytes, TrainState& s) {
  Reader r(bytes);
  const std::size_t config_at = 8;
  const std::string blob = read_config_blob(r);
  if (blob != model_text(s.config()))
    throw ConfigError("checkpoint was written under a different model config (config record at byte " +
                      std::to_string(config_at) + ")");

  // Parse everything into scratch buffers first so a bad file leaves the state untouched.
  const TensorList state = s.named_state();
  std::size_t at = r.pos();
  const auto count = r.get<std::uint32_t>("record count");
  if (count != state.size())
    throw ParseError("checkpoint holds " + std::to_string(count) + " records, model has " +
                         std::to_string(state.size()),
                     at);
  std::vector<std::vector<float>> values(state.size());
  for (std::size_t k = 0; k < state.size(); ++k) {
    const auto& e = state[k];
    at = r.pos();
    const std::string name = r.get_string("record name");
    if (name != e.name) throw ParseError("record '" + name + "' where '" + e.name + "' expected", at);
    at = r.pos();
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank != static_cast<std::uint32_t>(e.tensor.rank()))
      throw ParseError("record '" + name + "' has rank " + std::to_string(rank), at);
    for (std::uint32_t d = 0; d < rank; ++d) {
      at = r.pos();
      if (r.get<std::int64_t>("dim") != e.tensor.dim(static_cast<int>(d)))
        throw ParseError("record '" + name + "' has mismatched dims", at);
    }
    r.need(static_cast<std::size_t>(e.tensor.numel()) * 4, "tensor payload");
    values[k].resize(static_cast<std::size_t>(e.tensor.numel()));
    for (auto& x : values[k]) x = r.get<float>("tensor payload");
  }
  // Copies alias the live parameters; only their moments are scratch.
  Adam g_opt = s.g_opt, d_opt = s.d_opt;
  read_adam(r, g_opt, "generator");
  read_adam(r, d_opt, "discriminator");
  const auto key = r.get<std::uint64_t>("rng key");
  const auto counter = r.get<std::uint64_t>("rng counter");
  at = r.pos();
  const auto epoch = r.get<std::int32_t>("epoch");
  if (epoch < 0) throw ParseError("checkpoint: negative epoch", at);
  const auto step = r.get<std::int64_t>("step");
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());

  for (std::size_t k = 0; k < state.size(); ++k) {
    auto d = state[k].tensor.mutable_data();
    std::copy(values[k].begin(), values[k].end(), d.begin());
  }
  s.g_opt = std::move(g_opt);
  s.d_opt = std::move(d_opt);
  s.shuffle_rng = Rng::from_state(key, counter);
  s.epoch = epoch;
  s.step = step;
}

void load_checkpoint(const std::filesystem::path& path, TrainState& s) {
  const auto bytes = read_file(path);
  try {
    decode_checkpoint(bytes, s);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path, const RunConfig& base) {
  const auto bytes = read_file(path);
  Reader r(bytes);
  std::string blob;
  try {
    blob = read_config_blob(r);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
  auto state = std::make_unique<TrainState>(parse_run_config(blob, base));
  load_checkpoint(path, *state);
  return state;
}

std::uint64_t hash_tensors(const TensorList& list) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : list)
    for (float x : e.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, 4);
      for (int i = 0; i < 4; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

}  // namespace pitrans
