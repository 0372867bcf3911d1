#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlab/strategies.hpp"

namespace nlab {

// Experiment configuration: a flat key/value store with INI-style sections
// ("[train]" + "lr = 0.02" becomes "train.lr"). Every key has a default and
// every key can be overridden from the CLI, so a run directory's config echo
// reproduces the run exactly.
class ExperimentConfig {
 public:
  ExperimentConfig();  // defaults

  static ExperimentConfig from_file(const std::string& path);

  // Throws ConfigError for unknown keys (typo protection).
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Parsed strategy string, e.g. "dividemix-WS-WAW".
struct StrategySpec {
  enum class Method { ce, coteaching_plus, mdyrh, dividemix } method = Method::dividemix;
  AugStrategy aug;       // variant from the -WW/-SS/-WS suffix (or default)
  bool has_aug_suffix = false;
};

StrategySpec parse_strategy(const std::string& name);

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<double> test_acc;    // per epoch, percent
  std::vector<double> train_loss;  // per epoch, mean eval CE on given labels
  std::vector<double> auc;         // per epoch clean/noisy separation
  std::vector<double> lr;          // per epoch learning rate
  double best = 0.0;               // max over epochs
  double last = 0.0;               // mean of the final 5 epochs
  double wall_seconds = 0.0;
};

struct AggregateResult {
  std::vector<RunResult> per_seed;
  double best_mean = 0.0, best_std = 0.0;
  double last_mean = 0.0, last_std = 0.0;
};

// Materialized datasets for one experiment (train with injected noise, clean
// test set normalized with the train stats).
struct ExperimentData {
  NoisyDataset train;
  NoisyDataset test;
};

ExperimentData build_experiment_data(const ExperimentConfig& cfg, std::uint64_t run_seed);

// One fully deterministic run. If out_dir is non-empty, writes epochs.csv,
// summary.json and final checkpoints there.
RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed,
                     const std::string& out_dir);

// All seeds from train.seeds; writes per-seed subdirectories plus
// aggregate.json when out_dir is non-empty.
AggregateResult run(const ExperimentConfig& cfg, const std::string& out_dir);

void emit_metrics(const RunResult& result, const ExperimentConfig& cfg,
                  const std::string& dir);

struct ProbeResult {
  double p_strong = 0.0;
  std::uint64_t seed = 0;
  double auc = 0.0;
  LossHistogram histogram;
};

// Warm-up augmentation-strength probe: for each p in p_list runs a fresh
// warm-up with stochastic strong augmentation probability p, then records
// the clean/noisy normalized-loss histogram and separation AUC at the probe
// epoch ([probe] epoch). Writes histograms/epoch_<e>.csv per (p, seed) plus
// probe_summary.csv when out_dir is non-empty.
std::vector<ProbeResult> warmup_probe(const ExperimentConfig& cfg,
                                      const std::vector<double>& p_list,
                                      const std::string& out_dir);

// Cartesian strategy x noise-rate sweep; one result directory per cell.
// NLAB_THREADS caps how many cells run concurrently.
void run_grid(const ExperimentConfig& base, const std::vector<std::string>& strategies,
              const std::vector<double>& noise_rates, const std::string& out_dir);

// CLI entry point (subcommands: run, probe, grid, gen-data). Returns the
// process exit code: 0 ok, 2 usage error, 1 runtime failure.
int cli_main(int argc, char** argv);

}  // namespace nlab
