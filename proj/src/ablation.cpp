#include "pitrans/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "pitrans/errors.hpp"

namespace pitrans {

AblationRun run_variant(const RunConfig& base, const std::string& variant, std::uint64_t seed,
                        const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                        const std::filesystem::path& log_dir) {
  RunConfig cfg = base;
  cfg.generator = apply_ablation(cfg.generator, variant);
  cfg.generator.seed = seed;
  AblationRun run;
  run.variant = variant;
  run.seed = seed;
  TrainLogs logs;
  if (!log_dir.empty()) {
    std::filesystem::create_directories(log_dir);
    for (const char* f : {"steps.csv", "eval.csv"}) std::filesystem::remove(log_dir / f);
    logs = {log_dir / "steps.csv", log_dir / "eval.csv"};
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainState state(cfg);
  train(state, train_set, test_set, cfg.train.epochs, logs,
        [&run](const TrainState&, const EvalResult& e) { run.history.push_back(e); });
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!log_dir.empty()) save_checkpoint(log_dir / "checkpoint.bin", state);
  if (run.history.empty()) throw ConfigError("ablation run needs at least one epoch");
  return run;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double median_final_l1(const std::vector<AblationRun>& runs, const std::string& variant) {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.variant == variant) v.push_back(r.last().l1_final);
  return median(v);
}

std::string format_ablation_table(const std::vector<AblationRun>& runs) {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  std::ostringstream out;
  char buf[256];
  out << "held-out mean L1 at the final epoch (I_g'' / I_g')\n";
  std::snprintf(buf, sizeof buf, "%-8s", "variant");
  out << buf;
  for (auto s : seeds) {
    std::snprintf(buf, sizeof buf, "  seed %-14llu", static_cast<unsigned long long>(s));
    out << buf;
  }
  out << "  median\n";
  for (const auto& v : variants) {
    std::snprintf(buf, sizeof buf, "%-8s", v.c_str());
    out << buf;
    std::vector<double> finals, directs;
    for (auto s : seeds) {
      const auto it = std::find_if(runs.begin(), runs.end(), [&](const AblationRun& r) {
        return r.variant == v && r.seed == s;
      });
      if (it == runs.end()) {
        out << "  " << std::string(19, '-');
        continue;
      }
      finals.push_back(it->last().l1_final);
      directs.push_back(it->last().l1_direct);
      std::snprintf(buf, sizeof buf, "  %.6f / %.6f", it->last().l1_final, it->last().l1_direct);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %.6f / %.6f\n", median(finals), median(directs));
    out << buf;
  }
  return out.str();
}

}  // namespace pitrans
