#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pitrans/ablation.hpp"
#include "pitrans/analyze.hpp"
#include "pitrans/config.hpp"
#include "pitrans/data.hpp"
#include "pitrans/errors.hpp"
#include "pitrans/gradcheck_suite.hpp"
#include "pitrans/tape.hpp"
#include "pitrans/trainer.hpp"

namespace pitrans {

namespace {

namespace fs = std::filesystem;

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<std::string> parse_variant_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    apply_ablation(GeneratorConfig::desk(), item);  // validates
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty variant list");
  return out;
}

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

void require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "split.txt"))
    throw std::runtime_error("no dataset at " + dir.string() + " (run gen-data first)");
}

struct Options {
  // shared
  std::string config;
  std::string out;
  std::string data;
  // gen-data
  std::uint64_t data_seed = 7;
  int count = 200;
  int size = 64;
  double train_fraction = 0.8;
  // train / ablate
  int epochs = -1;
  std::int64_t seed = -1;
  std::string variant;
  std::string resume;
  int keep_every = 0;
  std::string seeds = "1,2,3";
  std::string variants = "A,E,F";
  // infer
  std::string checkpoint, aerial, semantic;
  // analyze
  std::string csv;
  bool layers = false;
};

int cmd_gen_data(const Options& o, CLI::App& app, std::ostream& out) {
  DatasetSpec spec;
  if (!o.config.empty()) spec = load_run_config(o.config).dataset;
  if (app.count("--seed")) spec.seed = o.data_seed;
  if (app.count("--count")) spec.count = o.count;
  if (app.count("--size")) spec.size = o.size;
  if (app.count("--train-fraction")) spec.train_fraction = o.train_fraction;
  write_dataset(o.out, spec);
  out << "wrote " << spec.count << " triplets (" << 3 * spec.count << " PPM files) of " << spec.size << "x"
      << spec.size << " to " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o, CLI::App& app, std::ostream& out) {
  RunConfig cfg = base_config(o.config);
  if (!o.data.empty()) cfg.data_dir = o.data;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.epochs >= 0) cfg.train.epochs = o.epochs;
  if (app.count("--seed")) cfg.generator.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.variant.empty()) cfg.generator = apply_ablation(cfg.generator, o.variant);
  cfg = parse_run_config(to_text(cfg));  // validate the resolved config

  require_dataset(cfg.data_dir);
  const auto train_set = load_dataset(cfg.data_dir, Split::train);
  const auto test_set = load_dataset(cfg.data_dir, Split::test);
  if (!train_set.empty() && train_set.front().aerial.dim(1) != cfg.generator.image_size)
    throw ConfigError("dataset images are " + std::to_string(train_set.front().aerial.dim(1)) +
                      " px but image_size is " + std::to_string(cfg.generator.image_size));

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.txt", to_text(cfg));
  out << "# resolved config\n" << to_text(cfg) << std::flush;

  TrainState state(cfg);
  if (!o.resume.empty()) {
    load_checkpoint(o.resume, state);
    out << "resumed from " << o.resume << " at epoch " << state.epoch << "\n";
  } else {
    for (const char* f : {"steps.csv", "eval.csv"}) fs::remove(dir / f);
  }
  train(state, train_set, test_set, cfg.train.epochs, {dir / "steps.csv", dir / "eval.csv"},
        [&](const TrainState& s, const EvalResult& e) {
          save_checkpoint(dir / "checkpoint.bin", s);
          if (o.keep_every > 0 && s.epoch % o.keep_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.bin", s.epoch);
            save_checkpoint(dir / name, s);
          }
          char line[160];
          std::snprintf(line, sizeof line, "epoch %d  held-out L1  direct %.6f  final %.6f\n", s.epoch,
                        e.l1_direct, e.l1_final);
          out << line << std::flush;
        });
  return 0;
}

int cmd_infer(const Options& o, std::ostream& out) {
  auto state = load_checkpoint(o.checkpoint);
  const Image a = ppm_read(o.aerial), s = ppm_read(o.semantic);
  const auto size = state->config().generator.image_size;
  for (const Image* img : {&a, &s})
    if (img->width != size || img->height != size)
      throw DimensionError("input is " + std::to_string(img->width) + "x" + std::to_string(img->height) +
                           " but the model expects " + std::to_string(size) + "x" + std::to_string(size));
  NoGradScope no_grad;
  state->set_training(false);
  const GeneratorOutputs g = state->generator.forward(images_to_tensor({&a}), images_to_tensor({&s}));
  fs::create_directories(o.out);
  ppm_write(fs::path(o.out) / "direct.ppm", tensor_to_image(g.direct, 0));
  ppm_write(fs::path(o.out) / "final.ppm", tensor_to_image(g.final, 0));
  out << "wrote " << (fs::path(o.out) / "direct.ppm").string() << " and " << (fs::path(o.out) / "final.ppm").string()
      << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto seeds = parse_seed_list(o.seeds);
  std::vector<GradcheckCase> worst;
  for (auto seed : seeds) {
    const auto cases = run_gradcheck_suite(seed);
    if (worst.empty()) {
      worst = cases;
      continue;
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
      worst[i].probes += cases[i].probes;
      worst[i].skipped += cases[i].skipped;
      worst[i].max_rel_error = std::max(worst[i].max_rel_error, cases[i].max_rel_error);
    }
  }
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %12s %8s %7s %8s\n", "case", "max_rel_err", "tol", "probes", "result");
  out << line;
  for (const auto& c : worst) {
    std::snprintf(line, sizeof line, "%-26s %12.3e %8.0e %7zu %8s\n", c.name.c_str(), c.max_rel_error, c.tolerance,
                  c.probes, c.passed() ? "ok" : "FAIL");
    out << line;
    ok = ok && c.passed();
  }
  out << (ok ? "all cases within tolerance\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const RunConfig cfg = base_config(o.config);
  const ModelAnalysis a = analyze_model(cfg);
  out << format_summary(a);
  if (o.layers) out << "\n" << format_table(a.generator) << "\n" << format_table(a.discriminators);

  // Static rows against a real forward pass.
  Generator g(cfg.generator);
  auto problems = cross_check(a.generator, dynamic_trace(g));
  Rng rng(cfg.generator.seed, "discriminator");
  PatchDiscriminator d("D1", cfg.train.disc_channels, rng);
  for (auto& p : cross_check(a.discriminators, dynamic_trace(d, cfg.generator.image_size))) problems.push_back(p);
  out << "\nstatic/forward shape cross-check: " << (problems.empty() ? "consistent" : "MISMATCH") << "\n";
  for (const auto& p : problems) out << "  " << p << "\n";

  if (!o.csv.empty()) {
    CostReport all = a.generator;
    all.rows.insert(all.rows.end(), a.discriminators.rows.begin(), a.discriminators.rows.end());
    write_text(o.csv, format_csv(all));
    out << "wrote " << o.csv << "\n";
  }
  return problems.empty() ? 0 : 1;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  RunConfig cfg = base_config(o.config);
  if (!o.data.empty()) cfg.data_dir = o.data;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.epochs >= 0) cfg.train.epochs = o.epochs;
  if (cfg.train.epochs < 1) throw ConfigError("ablate needs at least one epoch");
  const auto seeds = parse_seed_list(o.seeds);
  const auto variants = parse_variant_list(o.variants);
  require_dataset(cfg.data_dir);
  const auto train_set = load_dataset(cfg.data_dir, Split::train);
  const auto test_set = load_dataset(cfg.data_dir, Split::test);

  const fs::path dir = cfg.out_dir;
  std::vector<AblationRun> runs;
  for (const auto& v : variants)
    for (auto seed : seeds) {
      const fs::path run_dir = dir / (v + "_seed" + std::to_string(seed));
      runs.push_back(run_variant(cfg, v, seed, train_set, test_set, run_dir));
      const auto& r = runs.back();
      char line[200];
      std::snprintf(line, sizeof line, "variant %s seed %llu: final L1 %.6f (epoch 1: %.6f), direct %.6f, %.0f s\n",
                    v.c_str(), static_cast<unsigned long long>(seed), r.last().l1_final, r.first().l1_final,
                    r.last().l1_direct, r.seconds);
      out << line << std::flush;
    }
  const std::string table = format_ablation_table(runs);
  out << "\n" << table;
  std::ostringstream csv;
  csv << "variant,seed,epoch1_l1_final,l1_final,l1_direct\n";
  for (const auto& r : runs) {
    char line[160];
    std::snprintf(line, sizeof line, "%s,%llu,%.6f,%.6f,%.6f\n", r.variant.c_str(),
                  static_cast<unsigned long long>(r.seed), r.first().l1_final, r.last().l1_final, r.last().l1_direct);
    csv << line;
  }
  write_text(dir / "ablation.csv", csv.str());
  write_text(dir / "ablation.txt", table);
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-view aerial-to-ground image translation: data, training, inference and analysis"};
  app.name(args.empty() ? "pitrans" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic (aerial, semantic, ground) PPM dataset");
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--seed", o.data_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--count", o.count, "Number of triplets")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--size", o.size, "Image size")->check(CLI::IsMember({32, 64, 128, 256}))->capture_default_str();
  gen->add_option("--train-fraction", o.train_fraction, "Leading fraction of ids in the train split")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gen->add_option("--config", o.config, "Take dataset defaults from a run config")->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("train", "Train a model; writes config.txt, steps.csv, eval.csv and checkpoints");
  tr->add_option("--config", o.config, "Run config file (defaults to the built-in desk config)")
      ->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Dataset directory (overrides data_dir)");
  tr->add_option("--out", o.out, "Run directory (overrides out_dir)");
  tr->add_option("--epochs", o.epochs, "Train until this epoch (overrides epochs)")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", o.seed, "Model seed (overrides seed)")->check(CLI::NonNegativeNumber);
  tr->add_option("--variant", o.variant, "Ablation variant A, E or F")->check(CLI::IsMember({"A", "E", "F"}));
  tr->add_option("--resume", o.resume, "Continue from a checkpoint written under the same config")
      ->check(CLI::ExistingFile);
  tr->add_option("--keep-every", o.keep_every, "Also keep epoch_NNNN.bin every K epochs (0 = only checkpoint.bin)")
      ->check(CLI::NonNegativeNumber);

  auto* inf = app.add_subcommand("infer", "Write direct.ppm (I_g') and final.ppm (I_g'') for one input pair");
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inf->add_option("--aerial", o.aerial, "Aerial image (PPM)")->required()->check(CLI::ExistingFile);
  inf->add_option("--semantic", o.semantic, "Ground-view semantic map (PPM)")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", o.out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and block");
  gc->add_option("--seeds", o.seeds, "Comma-separated seeds")->capture_default_str();

  auto* an = app.add_subcommand("analyze", "Parameter / MAC report and level-shape trace for a config");
  an->add_option("--config", o.config, "Run config file (defaults to the built-in desk config)")
      ->check(CLI::ExistingFile);
  an->add_option("--csv", o.csv, "Also write per-layer rows as CSV (layer,out_shape,params,macs)");
  an->add_flag("--layers", o.layers, "Print every layer row");

  auto* ab = app.add_subcommand("ablate", "Train variants under a seed set and compare held-out L1");
  ab->add_option("--config", o.config, "Run config file (defaults to the built-in desk config)")
      ->check(CLI::ExistingFile);
  ab->add_option("--data", o.data, "Dataset directory (overrides data_dir)");
  ab->add_option("--out", o.out, "Output directory (overrides out_dir)");
  ab->add_option("--epochs", o.epochs, "Epochs per run (overrides epochs)")->check(CLI::PositiveNumber);
  ab->add_option("--seeds", o.seeds, "Comma-separated model seeds")->capture_default_str();
  ab->add_option("--variants", o.variants, "Comma-separated variants")->capture_default_str();

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());  // CLI11 consumes a reversed vector
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, *gen, out);
    if (tr->parsed()) return cmd_train(o, *tr, out);
    if (inf->parsed()) return cmd_infer(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    if (an->parsed()) return cmd_analyze(o, out);
    if (ab->parsed()) return cmd_ablate(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pitrans
