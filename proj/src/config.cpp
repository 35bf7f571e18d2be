#include "pitrans/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "pitrans/errors.hpp"

namespace pitrans {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Exponent notation only where %g would use it at full precision (100, not 1e+02).
bool plain_enough(const char* buf, double v) {
  const double a = std::abs(v);
  return std::strchr(buf, 'e') == nullptr || a < 1e-4 || a >= 1e15;
}

std::string fmt_double(double v) {
  // Shortest form that parses back to the same value.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v && plain_enough(buf, v)) return buf;
  }
  return std::to_string(v);
}

std::string fmt_float(float v) {
  for (int prec = 1; prec <= 9; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
    if (std::strtof(buf, nullptr) == v && plain_enough(buf, v)) return buf;
  }
  return std::to_string(v);
}

template <class T>
T parse_int(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool model = false;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    auto i64 = [&v](std::string key, auto getter, bool model) {
      v.push_back({key,
                   [getter](RunConfig& c, const std::string& s) {
                     auto& ref = getter(c);
                     ref = parse_int<std::remove_reference_t<decltype(ref)>>(s);
                   },
                   [getter](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); },
                   model});
    };
    auto dbl = [&v](std::string key, auto getter, bool model) {
      v.push_back({key,
                   [getter](RunConfig& c, const std::string& s) {
                     auto& ref = getter(c);
                     ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_double(s));
                   },
                   [getter](const RunConfig& c) {
                     const auto val = getter(const_cast<RunConfig&>(c));
                     if constexpr (std::is_same_v<decltype(val), const float>) return fmt_float(val);
                     else return fmt_double(val);
                   },
                   model});
    };
    auto boolean = [&v](std::string key, auto getter, bool model) {
      v.push_back({key, [getter](RunConfig& c, const std::string& s) { getter(c) = parse_bool(s); },
                   [getter](const RunConfig& c) {
                     return std::string(getter(const_cast<RunConfig&>(c)) ? "true" : "false");
                   },
                   model});
    };
    auto str = [&v](std::string key, auto getter, bool model) {
      v.push_back({key, [getter](RunConfig& c, const std::string& s) { getter(c) = s; },
                   [getter](const RunConfig& c) { return getter(const_cast<RunConfig&>(c)); }, model});
    };

    i64("image_size", [](RunConfig& c) -> auto& { return c.generator.image_size; }, true);
    i64("c_l1", [](RunConfig& c) -> auto& { return c.generator.c_l1; }, true);
    i64("hc_expansion", [](RunConfig& c) -> auto& { return c.generator.hc_expansion; }, true);
    i64("hs_cap", [](RunConfig& c) -> auto& { return c.generator.hs_cap; }, true);
    boolean("itm_scale_scores", [](RunConfig& c) -> auto& { return c.generator.itm_scale_scores; }, true);
    v.push_back({"encoder_variant",
                 [](RunConfig& c, const std::string& s) { c.generator.encoder_variant = parse_encoder_variant(s); },
                 [](const RunConfig& c) { return std::string(to_string(c.generator.encoder_variant)); }, true});
    boolean("use_itm", [](RunConfig& c) -> auto& { return c.generator.use_itm; }, true);
    dbl("bn_momentum", [](RunConfig& c) -> auto& { return c.generator.bn_momentum; }, true);
    dbl("bn_eps", [](RunConfig& c) -> auto& { return c.generator.bn_eps; }, true);
    i64("seed", [](RunConfig& c) -> auto& { return c.generator.seed; }, true);

    i64("batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }, true);
    i64("epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }, false);
    i64("disc_channels", [](RunConfig& c) -> auto& { return c.train.disc_channels; }, true);
    dbl("lambda_l1", [](RunConfig& c) -> auto& { return c.train.weights.l1; }, true);
    dbl("lambda_cgan", [](RunConfig& c) -> auto& { return c.train.weights.cgan; }, true);
    dbl("lambda_tv", [](RunConfig& c) -> auto& { return c.train.weights.tv; }, true);
    dbl("lambda_per", [](RunConfig& c) -> auto& { return c.train.weights.per; }, true);
    dbl("lr", [](RunConfig& c) -> auto& { return c.train.adam.lr; }, true);
    dbl("beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; }, true);
    dbl("beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; }, true);
    dbl("adam_eps", [](RunConfig& c) -> auto& { return c.train.adam.eps; }, true);

    i64("data_seed", [](RunConfig& c) -> auto& { return c.dataset.seed; }, false);
    i64("data_count", [](RunConfig& c) -> auto& { return c.dataset.count; }, false);
    dbl("train_fraction", [](RunConfig& c) -> auto& { return c.dataset.train_fraction; }, false);
    str("data_dir", [](RunConfig& c) -> auto& { return c.data_dir; }, false);
    str("out_dir", [](RunConfig& c) -> auto& { return c.out_dir; }, false);
    return v;
  }();
  return f;
}

void validate(const RunConfig& c) {
  c.generator.validate();
  if (c.train.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (c.train.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (c.train.disc_channels < 1) throw ConfigError("disc_channels must be positive");
  if (c.train.adam.lr <= 0) throw ConfigError("lr must be positive");
  if (c.dataset.count < 1) throw ConfigError("data_count must be positive");
}

}  // namespace

RunConfig parse_run_config(std::string_view text, RunConfig cfg) {
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.dataset.size = static_cast<int>(cfg.generator.image_size);
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string model_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields())
    if (f.model) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace pitrans
