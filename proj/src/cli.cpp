#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nlab/errors.hpp"
#include "nlab/harness.hpp"

namespace nlab {

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string strategy;
  std::string noise_kind;
  std::string seeds;
  double noise_rate = -1.0;
  int epochs = -1;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "Config file (INI-style sections)");
  cmd->add_option("--out", f.out_dir, "Output directory");
  cmd->add_option("--strategy", f.strategy, "Strategy name, e.g. dividemix-WS-WAW");
  cmd->add_option("--noise-rate", f.noise_rate, "Label noise rate in [0,1]");
  cmd->add_option("--noise-kind", f.noise_kind, "symmetric | asymmetric | none");
  cmd->add_option("--seed,--seeds", f.seeds, "Comma-separated training seeds");
  cmd->add_option("--epochs", f.epochs, "Total training epochs");
  cmd->add_option("--set", f.overrides, "Generic override key=value (repeatable)")
      ->take_all();
}

ExperimentConfig materialize(const CommonFlags& f) {
  ExperimentConfig cfg =
      f.config_path.empty() ? ExperimentConfig() : ExperimentConfig::from_file(f.config_path);
  if (!f.strategy.empty()) cfg.set("strategy.name", f.strategy);
  if (!f.noise_kind.empty()) cfg.set("noise.kind", f.noise_kind);
  if (f.noise_rate >= 0.0) cfg.set("noise.rate", std::to_string(f.noise_rate));
  if (!f.seeds.empty()) cfg.set("train.seeds", f.seeds);
  if (f.epochs >= 0) cfg.set("train.epochs", std::to_string(f.epochs));
  if (!f.out_dir.empty()) cfg.set("out.dir", f.out_dir);
  for (const std::string& kv : f.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(pos, comma - pos);
    if (!item.empty()) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("bad " + what + " value: " + item);
      }
    }
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError(what + " list is empty");
  return out;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Noisy-label training laboratory"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* cmd_run = app.add_subcommand("run", "Run one experiment over its seeds");
  add_common(cmd_run, run_flags);

  CommonFlags probe_flags;
  std::string p_strong_list = "0,0.25,0.5,0.75,1";
  CLI::App* cmd_probe =
      app.add_subcommand("probe", "Warm-up augmentation-strength probe (loss histograms)");
  add_common(cmd_probe, probe_flags);
  cmd_probe->add_option("--p-strong", p_strong_list,
                        "Comma-separated strong-augmentation probabilities");

  CommonFlags grid_flags;
  std::string grid_strategies, grid_rates;
  CLI::App* cmd_grid = app.add_subcommand("grid", "Cartesian strategy x noise-rate sweep");
  add_common(cmd_grid, grid_flags);
  cmd_grid->add_option("--strategies", grid_strategies, "Comma-separated strategy names")
      ->required();
  cmd_grid->add_option("--noise-rates", grid_rates, "Comma-separated noise rates")->required();

  std::string gen_out;
  int gen_classes = 4, gen_per_class = 200, gen_size = 16;
  std::uint64_t gen_seed = 7;
  std::string gen_noise_kind = "none";
  double gen_noise_rate = 0.0;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "Export a glyph dataset as IDX files");
  cmd_gen->add_option("--out", gen_out, "Output directory")->required();
  cmd_gen->add_option("--classes", gen_classes, "Number of glyph classes");
  cmd_gen->add_option("--per-class", gen_per_class, "Samples per class");
  cmd_gen->add_option("--size", gen_size, "Image side length");
  cmd_gen->add_option("--seed", gen_seed, "Generation seed");
  cmd_gen->add_option("--noise-kind", gen_noise_kind, "symmetric | asymmetric | none");
  cmd_gen->add_option("--noise-rate", gen_noise_rate, "Label noise rate in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_run->parsed()) {
      ExperimentConfig cfg = materialize(run_flags);
      AggregateResult agg = run(cfg, cfg.get("out.dir"));
      std::printf("strategy %s noise %s %.2f: best %.2f +- %.2f, last %.2f +- %.2f\n",
                  cfg.get("strategy.name").c_str(), cfg.get("noise.kind").c_str(),
                  cfg.get_double("noise.rate"), agg.best_mean, agg.best_std, agg.last_mean,
                  agg.last_std);
    } else if (cmd_probe->parsed()) {
      ExperimentConfig cfg = materialize(probe_flags);
      const std::vector<double> ps = parse_double_list(p_strong_list, "p-strong");
      const auto results = warmup_probe(cfg, ps, cfg.get("out.dir"));
      for (const ProbeResult& r : results)
        std::printf("p_strong %.2f seed %llu: separation auc %.4f\n", r.p_strong,
                    static_cast<unsigned long long>(r.seed), r.auc);
    } else if (cmd_grid->parsed()) {
      ExperimentConfig cfg = materialize(grid_flags);
      run_grid(cfg, [&] {
        std::vector<std::string> names;
        std::size_t pos = 0;
        while (pos <= grid_strategies.size()) {
          std::size_t comma = grid_strategies.find(',', pos);
          if (comma == std::string::npos) comma = grid_strategies.size();
          const std::string item = grid_strategies.substr(pos, comma - pos);
          if (!item.empty()) names.push_back(item);
          pos = comma + 1;
        }
        return names;
      }(),
               parse_double_list(grid_rates, "noise-rate"), cfg.get("out.dir"));
      std::printf("grid written under %s\n", cfg.get("out.dir").c_str());
    } else if (cmd_gen->parsed()) {
      GlyphSpec spec;
      spec.num_classes = gen_classes;
      spec.per_class = gen_per_class;
      spec.image_size = gen_size;
      NoisyDataset ds = generate_glyphs(spec, gen_seed);
      if (gen_noise_kind == "symmetric") {
        ds = inject_symmetric(ds, gen_noise_rate, gen_seed);
      } else if (gen_noise_kind == "asymmetric") {
        ds = inject_asymmetric(ds, gen_noise_rate, gen_seed);
      } else if (gen_noise_kind != "none") {
        throw ConfigError("unknown noise kind: " + gen_noise_kind);
      }
      std::filesystem::create_directories(gen_out);
      const auto base = std::filesystem::path(gen_out);
      save_idx(ds, (base / "images.idx").string(), (base / "labels.idx").string());
      std::printf("wrote %zu images to %s\n", ds.size(), gen_out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace nlab
