// Acceptance suite: one PASS/FAIL line per criterion. Exit status 0 only when every
// selected criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <cstring>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pitrans/ablation.hpp"
#include "pitrans/analyze.hpp"
#include "pitrans/blocks.hpp"
#include "pitrans/data.hpp"
#include "pitrans/gan.hpp"
#include "pitrans/generator.hpp"
#include "pitrans/gradcheck_suite.hpp"
#include "pitrans/implicit_transform.hpp"
#include "pitrans/ops.hpp"
#include "pitrans/pconvmlp.hpp"
#include "pitrans/tape.hpp"
#include "pitrans/trainer.hpp"

using namespace pitrans;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects the failed checks of one criterion.
struct Checks {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(Rng& rng, const Shape& shape, double sd = 1.0) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal(0, sd));
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

void gradient_oracle(Checks& c) {
  const auto t0 = Clock::now();
  std::size_t cases = 0, probes = 0, skipped = 0;
  double worst = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& g : run_gradcheck_suite(seed)) {
      ++cases;
      probes += g.probes;
      skipped += g.skipped;
      worst = std::max(worst, g.max_rel_error / g.tolerance);
      c.expect(g.passed(), fmt("seed %llu %s: rel err %.3e > %.0e", static_cast<unsigned long long>(seed),
                               g.name.c_str(), g.max_rel_error, g.tolerance));
      c.expect(g.probes > 0, "seed " + std::to_string(seed) + " " + g.name + ": no probes");
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, fmt("runtime %.1f s >= 120 s", secs));
  c.note(fmt("%zu cases over 3 seeds, %zu probes (%zu kink skips), worst err/tol %.3f, %.1f s", cases, probes,
             skipped, worst, secs));
}

// ---------------------------------------------------------------------------
// 2. Shape law

void shape_law(Checks& c) {
  auto check = [&c](const GeneratorConfig& cfg, std::int64_t batch) {
    Generator g(cfg);
    g.set_training(false);
    const auto h = cfg.image_size;
    Rng rng(cfg.seed, "shape-law");
    const auto aerial = random_tensor(rng, {batch, 3, h, h}, 3.0);
    const auto semantic = random_tensor(rng, {batch, 3, h, h}, 3.0);
    std::vector<TraceEntry> trace;
    GeneratorOutputs out;
    {
      NoGradScope no_grad;
      ShapeTraceScope scope(trace);
      out = g.forward(aerial, semantic);
    }
    std::map<std::string, Shape> seen;
    for (const auto& e : trace) seen[e.name] = e.shape;
    const std::string tag = fmt("H=%lld C_L1=%lld", static_cast<long long>(h), static_cast<long long>(cfg.c_l1));
    for (const char* enc : {"G.enc_a", "G.enc_s"})
      for (int l = 1; l <= 4; ++l) {
        const auto name = std::string(enc) + ".L" + std::to_string(l);
        const Shape want{batch, cfg.c_l1 << (l - 1), h >> l, h >> l};
        const auto it = seen.find(name);
        c.expect(it != seen.end(), tag + ": level " + name + " not traced");
        if (it != seen.end())
          c.expect(it->second == want, tag + ": " + name + " is " + shape_str(it->second) + ", want " + shape_str(want));
      }
    for (const auto* t : {&out.direct, &out.final}) {
      c.expect(t->shape() == Shape({batch, 3, h, h}), tag + ": output shape " + shape_str(t->shape()));
      bool inside = true;
      for (float v : t->data()) inside = inside && v > -1.0f && v < 1.0f;
      c.expect(inside, tag + ": output value outside (-1, 1)");
    }
  };
  for (std::int64_t h : {32, 64, 128, 256}) {
    auto cfg = GeneratorConfig::desk();
    cfg.image_size = h;
    check(cfg, 2);
  }
  check(GeneratorConfig::full(), 1);
  c.note("desk C_L1=8 at 32/64/128/256 (batch 2) and full C_L1=32 at 256");
}

// ---------------------------------------------------------------------------
// 3. Micro-oracles

void micro_oracles(Checks& c) {
  Rng rng(11, "micro");

  // Parity split / interleave.
  for (std::int64_t ch : {2, 8, 64}) {
    const auto x = random_tensor(rng, {2, ch, 5, 3});
    const auto [odd, even] = parity_split(x);
    c.expect(bit_equal(parity_interleave(odd, even), x), "parity round trip not bit-exact at c=" + std::to_string(ch));
    bool gathered = true;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t k = 0; k < ch / 2; ++k)
        for (std::int64_t p = 0; p < 15; ++p) {
          gathered = gathered && odd.at((b * ch / 2 + k) * 15 + p) == x.at((b * ch + 2 * k) * 15 + p);
          gathered = gathered && even.at((b * ch / 2 + k) * 15 + p) == x.at((b * ch + 2 * k + 1) * 15 + p);
        }
    c.expect(gathered, "parity split does not gather alternate channels");
  }

  // Zero MLPs: the block reduces to its conv path.
  {
    Rng brng(3, "block");
    PConvMLPBlock block("blk", 8, 16, 16, PConvMlpSettings{}, brng);
    for (auto* l : {&block.mlps->ch_fc1, &block.mlps->ch_fc2, &block.mlps->sp_fc1, &block.mlps->sp_fc2})
      for (const auto* t : {&l->weight, &l->bias})
        for (auto& v : t->mutable_data()) v = 0.0f;
    block.set_training(false);
    NoGradScope no_grad;
    const auto x = random_tensor(rng, {2, 8, 16, 16});
    c.expect(bit_equal(block.forward(x), block.conv_encode(x)), "zero-MLP block output differs from X'");
  }

  // Attention rows and value linearity.
  {
    Rng irng(5, "itm");
    ImplicitTransform itm("itm", 16, false, irng);
    for (auto* conv : {&itm.q_proj, &itm.k_proj})
      for (auto& v : conv->weight.mutable_data()) v = static_cast<float>(irng.normal(0, 1.0));
    NoGradScope no_grad;
    const auto fq = random_tensor(rng, {2, 16, 6, 6}, 3.0);
    const auto fk = random_tensor(rng, {2, 16, 6, 6}, 3.0);
    const auto fv = random_tensor(rng, {2, 16, 6, 6});
    const auto a = itm.attention(fq, fk);
    double worst = 0;
    for (std::int64_t row = 0; row < 2 * 36; ++row) {
      double s = 0;
      for (std::int64_t j = 0; j < 36; ++j) s += a.at(row * 36 + j);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    c.expect(worst <= 1e-5, fmt("attention row sum off by %.3e", worst));
    const auto base = itm.forward(fq, fk, fv);
    for (float alpha : {2.0f, 0.5f, -4.0f}) {
      const auto y = itm.forward(fq, fk, mul_scalar(fv, alpha));
      bool exact = true;
      for (std::int64_t i = 0; i < y.numel(); ++i) exact = exact && y.at(i) == alpha * base.at(i);
      c.expect(exact, fmt("V-linearity not exact for alpha %g", alpha));
    }
    c.note(fmt("max |row sum - 1| = %.2e", worst));
  }

  // Loss arithmetic.
  auto near = [&c](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) <= 1e-5, fmt("%s = %.7f, want %.5f", what.c_str(), got, want));
  };
  {
    const auto zero = adversarial_loss(Tensor(Shape{1, 1, 6, 6}), Tensor(Shape{1, 1, 6, 6}));
    near(zero.d_loss.item(), 1.38629, "d_loss(0, 0)");
    near(zero.g_loss.item(), 0.69315, "g_loss(0, 0)");
    const auto hand = adversarial_loss(Tensor(Shape{1}, 2.0f), Tensor(Shape{1}, -1.0f));
    near(hand.d_loss.item(), 0.44019, "d_loss([2], [-1])");
    const auto perfect = adversarial_loss(Tensor(Shape{4}, 80.0f), Tensor(Shape{4}, -80.0f));
    near(perfect.d_loss.item(), 0.0, "d_loss(+inf, -inf)");
    near(tv_loss(Tensor(Shape{1, 1, 2, 2}, {0, 1, 0, 1})).item(), 1.0, "tv([[0,1],[0,1]])");
    near(tv_loss(Tensor(Shape{1, 3, 4, 4}, 0.3f)).item(), 0.0, "tv(constant)");
    near(weighted_total(0.2, 0.7, 0.05, 0.1, LossWeights{}), 28.55, "weighted total");

    Rng drng(1, "disc");
    PatchDiscriminator d1("D1", 8, drng), d2("D2", 8, drng);
    for (const auto* d : {&d1, &d2})
      for (const auto& p : d->parameters())
        if (p.trainable)
          for (auto& v : p.tensor.mutable_data()) v = 0.0f;
    PerceptualExtractor ext;
    const Tensor img(Shape{2, 3, 64, 64}, 0.25f);
    const auto aerial = random_tensor(rng, {2, 3, 64, 64});
    NoGradScope no_grad;
    const auto t = total_objective(img, img, img, aerial, d1, d2, ext, LossWeights{});
    near(t.generator.l1.item(), 0.0, "L1 at perfect reconstruction");
    near(t.generator.per.item(), 0.0, "Per at perfect reconstruction");
    near(t.generator.g_total.item(), 6.93147, "g_total at zero logits");
    near(t.d_total.item(), 4 * std::log(2.0), "d_total at zero logits");
  }
}

// ---------------------------------------------------------------------------
// 4. Complexity

void complexity(Checks& c, const fs::path& work) {
  Rng rng(1, "units");
  CostReport r;
  Conv2d conv("conv", 3, 16, 3, 2, 1, rng);
  conv.describe({3, 64, 64}, r);
  c.expect(r.rows.back().params == 448, "conv(3->16,k3) params " + std::to_string(r.rows.back().params));
  c.expect(r.rows.back().macs == 442368, "conv(3->16,k3,s2,p1) @64 MACs " + std::to_string(r.rows.back().macs));
  BatchNorm2d bn("bn", 32);
  bn.describe({32, 8, 8}, r);
  c.expect(r.rows.back().params == 64, "BN(32) params " + std::to_string(r.rows.back().params));
  Linear dense("dense", 4096, 256, rng);
  dense.describe({4096}, 1, r);
  c.expect(r.rows.back().params == 1048832, "dense(4096->256) params " + std::to_string(r.rows.back().params));
  ImplicitTransform itm("itm", 64, false, rng);
  CostReport ri;
  itm.describe({64, 4, 4}, ri);
  c.expect(ri.rows.back().macs == 20480, "attention MACs at c=64, n=16: " + std::to_string(ri.rows.back().macs));

  RunConfig cfg;
  cfg.generator = GeneratorConfig::full();
  cfg.train.disc_channels = 64;
  const auto a = analyze_model(cfg);
  {
    Generator g(cfg.generator);
    const auto problems = cross_check(a.generator, dynamic_trace(g));
    c.expect(problems.empty(), "full generator static/forward mismatch: " + (problems.empty() ? "" : problems[0]));
  }
  std::ofstream(work / "analysis_full.txt") << format_summary(a);

  const double ref_params = 40.87e6, ref_macs = 6.64e9;
  const double p = static_cast<double>(a.total_params()), m = static_cast<double>(a.total_macs());
  c.expect(p >= ref_params / 2 && p <= ref_params * 2,
           fmt("G+D params %.2f M outside [%.2f M, %.2f M]", p / 1e6, ref_params / 2e6, ref_params * 2 / 1e6));
  c.expect(m >= ref_macs / 2 && m <= ref_macs * 2,
           fmt("G+D MACs %.3f G outside [%.2f G, %.2f G]", m / 1e9, ref_macs / 2e9, ref_macs * 2 / 1e9));
  c.note(fmt("generator %.2f M params / %.3f GMac; G+D %.2f M / %.3f GMac", a.generator_params() / 1e6,
             a.generator_macs() / 1e9, p / 1e6, m / 1e9));
}

// ---------------------------------------------------------------------------
// 5-6. Desk-scale learning and ablation direction

struct DeskData {
  fs::path dir;
  std::vector<Sample> train, test;
};

DeskData desk_data(const fs::path& work) {
  DeskData d;
  d.dir = work / "data";
  const DatasetSpec spec;  // seed 7, 200 triplets, 64 px, 160/40
  if (!fs::exists(d.dir / "split.txt")) write_dataset(d.dir, spec);
  d.train = load_dataset(d.dir, Split::train);
  d.test = load_dataset(d.dir, Split::test);
  return d;
}

std::vector<AblationRun> run_protocol(const DeskData& data, const fs::path& work) {
  RunConfig cfg;
  cfg.train.epochs = 30;
  cfg.train.batch_size = 4;
  std::vector<AblationRun> runs;
  for (const char* v : {"F", "E", "A"})
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto dir = work / (std::string(v) + "_seed" + std::to_string(seed));
      runs.push_back(run_variant(cfg, v, seed, data.train, data.test, dir));
      const auto& r = runs.back();
      std::printf("  run %s seed %llu: epoch-1 L1 %.4f, final L1 %.4f, direct L1 %.4f, %.0f s\n", v,
                  static_cast<unsigned long long>(seed), r.first().l1_final, r.last().l1_final, r.last().l1_direct,
                  r.seconds);
      std::fflush(stdout);
    }
  std::ofstream(work / "ablation.txt") << format_ablation_table(runs);
  return runs;
}

void desk_learning(Checks& c, const std::vector<AblationRun>& runs) {
  std::vector<double> ratio, final, direct;
  for (const auto& r : runs) {
    if (r.variant != "F") continue;
    c.expect(r.history.size() == 30, "seed " + std::to_string(r.seed) + " did not run 30 epochs");
    c.expect(r.seconds < 1800.0, fmt("seed %llu took %.0f s", static_cast<unsigned long long>(r.seed), r.seconds));
    ratio.push_back(r.last().l1_final / r.first().l1_final);
    final.push_back(r.last().l1_final);
    direct.push_back(r.last().l1_direct);
  }
  const double mr = median(ratio), mf = median(final), md = median(direct);
  c.expect(mr <= 0.5, fmt("median final/epoch-1 L1 ratio %.3f > 0.5", mr));
  c.expect(mf < md, fmt("median final L1 %.4f not below direct %.4f", mf, md));
  c.note(fmt("median ratio %.3f, median final %.4f vs direct %.4f", mr, mf, md));
}

void ablation_direction(Checks& c, const std::vector<AblationRun>& runs) {
  const double f = median_final_l1(runs, "F"), e = median_final_l1(runs, "E"), a = median_final_l1(runs, "A");
  c.expect(f <= e, fmt("F %.4f > E %.4f", f, e));
  c.expect(e <= a, fmt("E %.4f > A %.4f", e, a));
  c.note(fmt("median final L1: F %.4f, E %.4f, A %.4f", f, e, a));
  std::printf("%s", format_ablation_table(runs).c_str());
}

// ---------------------------------------------------------------------------
// 7. Determinism and resume

void determinism(Checks& c, const DeskData& data, const fs::path& work) {
  constexpr int kEpochs = 3, kSplit = 1;
  // Same model as the protocol's full-model seed-1 run.
  RunConfig cfg;
  cfg.generator = apply_ablation(cfg.generator, "F");
  cfg.generator.seed = 1;
  auto fresh = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    return TrainLogs{dir / "steps.csv", dir / "eval.csv"};
  };

  auto la = fresh(work / "det_a"), lb = fresh(work / "det_b"), lr = fresh(work / "det_resume");
  TrainState a(cfg), b(cfg);
  train(a, data.train, data.test, kEpochs, la);
  train(b, data.train, data.test, kEpochs, lb);
  c.expect(read_file(la.step_csv) == read_file(lb.step_csv), "repeat run step CSV differs");
  c.expect(read_file(la.eval_csv) == read_file(lb.eval_csv), "repeat run eval CSV differs");
  c.expect(hash_tensors(a.named_state()) == hash_tensors(b.named_state()), "repeat run final state differs");

  {
    TrainState first(cfg);
    train(first, data.train, data.test, kSplit, lr);
    save_checkpoint(work / "det_resume" / "checkpoint.bin", first);
  }
  TrainState resumed(cfg);
  load_checkpoint(work / "det_resume" / "checkpoint.bin", resumed);
  c.expect(resumed.epoch == kSplit, "checkpoint epoch " + std::to_string(resumed.epoch));
  train(resumed, data.train, data.test, kEpochs, lr);
  c.expect(read_file(lr.step_csv) == read_file(la.step_csv), "resumed step CSV differs from uninterrupted run");
  c.expect(read_file(lr.eval_csv) == read_file(la.eval_csv), "resumed eval CSV differs from uninterrupted run");
  c.expect(hash_tensors(resumed.named_state()) == hash_tensors(a.named_state()),
           "resumed final state differs from uninterrupted run");
  c.expect(encode_checkpoint(resumed) == encode_checkpoint(a), "resumed checkpoint bytes differ");

  // The protocol's seed-1 full-model run must start with the same bytes.
  const auto long_run = work / "F_seed1" / "steps.csv";
  if (fs::exists(long_run)) {
    const auto full = read_file(long_run), short_run = read_file(la.step_csv);
    c.expect(full.compare(0, short_run.size(), short_run) == 0, "30-epoch run does not extend the 3-epoch run");
  }
  c.note(fmt("%d-epoch runs, resume at epoch %d; state hash %016llx", kEpochs, kSplit,
             static_cast<unsigned long long>(hash_tensors(a.named_state()))));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-7"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for datasets, logs and checkpoints")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-7)")->check(CLI::Range(1, 7));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7} : std::set<int>(only.begin(), only.end());
  fs::create_directories(work);

  const std::map<int, std::string> titles = {
      {1, "gradient oracle"},   {2, "shape law"},           {3, "micro-oracles"},
      {4, "complexity"},        {5, "desk-scale learning"}, {6, "ablation direction"},
      {7, "determinism and resume"}};

  std::optional<DeskData> data;
  std::optional<std::vector<AblationRun>> runs;
  auto need_data = [&]() -> const DeskData& {
    if (!data) data = desk_data(work);
    return *data;
  };
  auto need_runs = [&]() -> const std::vector<AblationRun>& {
    if (!runs) runs = run_protocol(need_data(), work);
    return *runs;
  };

  const std::map<int, std::function<void(Checks&)>> body = {
      {1, gradient_oracle},
      {2, shape_law},
      {3, micro_oracles},
      {4, [&](Checks& c) { complexity(c, work); }},
      {5, [&](Checks& c) { desk_learning(c, need_runs()); }},
      {6, [&](Checks& c) { ablation_direction(c, need_runs()); }},
      {7, [&](Checks& c) { determinism(c, need_data(), work); }}};

  std::vector<std::string> summary;
  bool all = true;
  for (int id : selected) {
    Checks c;
    const auto t0 = Clock::now();
    try {
      body.at(id)(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    all = all && ok;
    std::string line = fmt("criterion %d (%s): %s  [%.1f s]", id, titles.at(id).c_str(), ok ? "PASS" : "FAIL",
                           seconds_since(t0));
    std::printf("%s\n", line.c_str());
    for (const auto& n : c.notes) std::printf("    %s\n", n.c_str());
    for (const auto& f : c.failures) std::printf("    failed: %s\n", f.c_str());
    std::fflush(stdout);
    summary.push_back(line);
  }
  std::printf("\nsummary\n");
  for (const auto& s : summary) std::printf("  %s\n", s.c_str());
  return all ? 0 : 1;
}
