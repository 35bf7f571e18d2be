#include "pitrans/analyze.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "pitrans/errors.hpp"
#include "pitrans/tape.hpp"

namespace pitrans {

std::string module_of(const std::string& row_name) {
  const auto first = row_name.find('.');
  if (first == std::string::npos) return row_name;
  const std::string head = row_name.substr(0, first);
  if (head != "G") return head;
  const auto second = row_name.find('.', first + 1);
  return second == std::string::npos ? row_name : row_name.substr(0, second);
}

std::vector<ModuleTotal> module_totals(const CostReport& report) {
  std::vector<ModuleTotal> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : report.rows) {
    const std::string m = module_of(r.name);
    auto [it, inserted] = index.emplace(m, out.size());
    if (inserted) out.push_back({m, 0, 0});
    out[it->second].params += r.params;
    out[it->second].macs += r.macs;
  }
  return out;
}

ModelAnalysis analyze_model(const RunConfig& cfg) {
  ModelAnalysis a;
  a.config = cfg;
  const Shape in{3, cfg.generator.image_size, cfg.generator.image_size};
  Generator g(cfg.generator);
  g.describe(in, a.generator);
  Rng rng(cfg.generator.seed, "discriminator");
  const BnSettings bn{cfg.generator.bn_momentum, cfg.generator.bn_eps};
  PatchDiscriminator d1("D1", cfg.train.disc_channels, rng, bn);
  PatchDiscriminator d2("D2", cfg.train.disc_channels, rng, bn);
  d1.describe(in, a.discriminators);
  d2.describe(in, a.discriminators);
  return a;
}

std::int64_t count_params(const TensorList& params) {
  std::int64_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

std::vector<TraceEntry> dynamic_trace(Generator& g) {
  const auto s = g.config().image_size;
  const Tensor x(Shape{1, 3, s, s});
  std::vector<TraceEntry> trace;
  NoGradScope no_grad;
  g.set_training(false);
  {
    ShapeTraceScope scope(trace);
    g.forward(x, x);
  }
  g.set_training(true);
  return trace;
}

std::vector<TraceEntry> dynamic_trace(PatchDiscriminator& d, std::int64_t image_size) {
  const Tensor x(Shape{1, 3, image_size, image_size});
  std::vector<TraceEntry> trace;
  NoGradScope no_grad;
  d.set_training(false);
  {
    ShapeTraceScope scope(trace);
    d.forward(x, x);
  }
  d.set_training(true);
  return trace;
}

std::vector<std::string> cross_check(const CostReport& report, const std::vector<TraceEntry>& trace) {
  std::map<std::string, Shape> rows;
  for (const auto& r : report.rows) rows.emplace(r.name, r.out_shape);
  std::vector<std::string> problems;
  for (const auto& e : trace) {
    const auto it = rows.find(e.name);
    if (it == rows.end()) {
      problems.push_back(e.name + ": traced but missing from the static report");
      continue;
    }
    const Shape unbatched(e.shape.begin() + 1, e.shape.end());
    if (unbatched != it->second)
      problems.push_back(e.name + ": static " + shape_str(it->second) + " vs forward " + shape_str(unbatched));
  }
  return problems;
}

std::vector<CostRow> level_rows(const CostReport& report, const std::string& prefix) {
  std::vector<CostRow> out;
  for (int level = 1; level <= 4; ++level) {
    const std::string name = prefix + ".L" + std::to_string(level);
    for (const auto& r : report.rows)
      if (r.name == name) out.push_back(r);
  }
  return out;
}

namespace {

std::string human(std::int64_t n, const char* unit) {
  char buf[64];
  if (n >= 1'000'000'000)
    std::snprintf(buf, sizeof buf, "%.3f G%s", static_cast<double>(n) / 1e9, unit);
  else if (n >= 1'000'000)
    std::snprintf(buf, sizeof buf, "%.3f M%s", static_cast<double>(n) / 1e6, unit);
  else if (n >= 1'000)
    std::snprintf(buf, sizeof buf, "%.3f k%s", static_cast<double>(n) / 1e3, unit);
  else
    std::snprintf(buf, sizeof buf, "%lld %s", static_cast<long long>(n), unit);
  return buf;
}

}  // namespace

std::string format_table(const CostReport& report) {
  std::size_t width = 5;
  for (const auto& r : report.rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s  %-16s %12s %16s\n", static_cast<int>(width), "layer", "out_shape", "params",
                "macs");
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %-16s %12lld %16lld\n", static_cast<int>(width), r.name.c_str(),
                  shape_str(r.out_shape).c_str(), static_cast<long long>(r.params), static_cast<long long>(r.macs));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %-16s %12lld %16lld\n", static_cast<int>(width), "total", "",
                static_cast<long long>(report.total_params()), static_cast<long long>(report.total_macs()));
  out << buf;
  return out.str();
}

std::string format_csv(const CostReport& report) {
  std::ostringstream out;
  out << "layer,out_shape,params,macs\n";
  for (const auto& r : report.rows) {
    std::string shape;
    for (std::size_t i = 0; i < r.out_shape.size(); ++i)
      shape += (i ? "x" : "") + std::to_string(r.out_shape[i]);
    out << r.name << ',' << shape << ',' << r.params << ',' << r.macs << '\n';
  }
  return out.str();
}

std::string format_summary(const ModelAnalysis& a) {
  std::ostringstream out;
  char buf[256];
  const auto size = a.config.generator.image_size;
  out << "input 3x" << size << "x" << size << ", c_l1 " << a.config.generator.c_l1 << ", hs_cap "
      << a.config.generator.hs_cap << ", hc_expansion " << a.config.generator.hc_expansion << ", disc_channels "
      << a.config.train.disc_channels << ", encoder " << to_string(a.config.generator.encoder_variant) << ", itm "
      << (a.config.generator.use_itm ? "on" : "off") << "\n\n";
  out << "levels (aerial encoder):\n";
  for (const auto& r : level_rows(a.generator, "G.enc_a")) out << "  " << r.name << "  " << shape_str(r.out_shape) << "\n";
  out << "\nmodule totals:\n";
  std::snprintf(buf, sizeof buf, "  %-12s %14s %18s\n", "module", "params", "macs");
  out << buf;
  auto emit = [&](const std::vector<ModuleTotal>& totals) {
    for (const auto& m : totals) {
      std::snprintf(buf, sizeof buf, "  %-12s %14lld %18lld\n", m.module.c_str(), static_cast<long long>(m.params),
                    static_cast<long long>(m.macs));
      out << buf;
    }
  };
  emit(module_totals(a.generator));
  emit(module_totals(a.discriminators));
  out << "\ngenerator only:           " << a.generator_params() << " params (" << human(a.generator_params(), "")
      << "), " << a.generator_macs() << " MACs (" << human(a.generator_macs(), "Mac") << ")\n";
  out << "generator+discriminators: " << a.total_params() << " params (" << human(a.total_params(), "") << "), "
      << a.total_macs() << " MACs (" << human(a.total_macs(), "Mac") << ")\n";
  return out.str();
}

}  // namespace pitrans
