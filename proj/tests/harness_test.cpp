#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nlab/errors.hpp"
#include "nlab/harness.hpp"

using namespace nlab;
namespace fs = std::filesystem;

namespace {

// Small enough to train in a second or two.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.set("data.classes", "3");
  cfg.set("data.per_class", "12");
  cfg.set("data.test_per_class", "8");
  cfg.set("train.batch_size", "16");
  cfg.set("train.epochs", "3");
  cfg.set("train.warmup_epochs", "1");
  cfg.set("train.hidden", "16");
  cfg.set("train.filters", "4");
  cfg.set("train.seeds", "5");
  cfg.set("noise.rate", "0.4");
  cfg.set("dividemix.lambda_u", "5");
  cfg.set("dividemix.alpha", "4");
  return cfg;
}

int run_cli(std::initializer_list<const char*> args) {
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>("nlab"));
  for (const char* a : args) argv.push_back(const_cast<char*>(a));
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config: defaults, typed getters and typo protection") {
  ExperimentConfig cfg;
  CHECK(cfg.get("strategy.name") == "dividemix-WS-WAW");
  CHECK(cfg.get_int("train.batch_size") == 32);
  CHECK(cfg.get_double("train.lr") == doctest::Approx(0.02));
  CHECK(cfg.get_bool("dividemix.conf_penalty"));
  CHECK_THROWS_AS(cfg.set("train.learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.get("no.such.key"), ConfigError);
  cfg.set("train.batch_size", "oops");
  CHECK_THROWS_AS(cfg.get_int("train.batch_size"), ConfigError);
}

TEST_CASE("config: INI files parse sections, comments and whitespace") {
  const char* text =
      "# comment\n"
      "[train]\n"
      "epochs = 42\n"
      "  lr=0.5\n"
      "\n"
      "[noise]\n"
      "kind = asymmetric\n";
  {
    std::ofstream f("test_config.ini");
    f << text;
  }
  ExperimentConfig cfg = ExperimentConfig::from_file("test_config.ini");
  CHECK(cfg.get_int("train.epochs") == 42);
  CHECK(cfg.get_double("train.lr") == doctest::Approx(0.5));
  CHECK(cfg.get("noise.kind") == "asymmetric");
  fs::remove("test_config.ini");

  {
    std::ofstream f("test_config_bad.ini");
    f << "[train]\nno equals sign here\n";
  }
  CHECK_THROWS_AS(ExperimentConfig::from_file("test_config_bad.ini"), FormatError);
  fs::remove("test_config_bad.ini");
}

TEST_CASE("strategy names parse into method, variant and warm-up") {
  StrategySpec s = parse_strategy("dividemix-WS-WAW");
  CHECK(s.method == StrategySpec::Method::dividemix);
  CHECK(s.aug.variant == AugVariant::augdesc_ws);
  CHECK(s.aug.warmup == WarmupVariant::waw);

  s = parse_strategy("dividemix");
  CHECK(s.aug.variant == AugVariant::runtime_w);

  s = parse_strategy("coteaching+-SAW");
  CHECK(s.method == StrategySpec::Method::coteaching_plus);
  CHECK(s.aug.warmup == WarmupVariant::saw);

  s = parse_strategy("mdyrh-WW");
  CHECK(s.method == StrategySpec::Method::mdyrh);
  CHECK(s.aug.variant == AugVariant::augdesc_ww);

  CHECK(parse_strategy("ce").method == StrategySpec::Method::ce);
  CHECK_THROWS_AS(parse_strategy("sgdmix"), ConfigError);
  CHECK_THROWS_AS(parse_strategy("dividemix-XY"), ConfigError);
  CHECK_THROWS_AS(parse_strategy("ce-WS"), ConfigError);
}

TEST_CASE("build_experiment_data: noise kinds and normalization stats") {
  ExperimentConfig cfg = tiny_config();
  ExperimentData data = build_experiment_data(cfg, 1);
  CHECK(data.train.size() == 36);
  CHECK(data.test.size() == 24);
  data.train.validate();
  CHECK(data.test.mean == data.train.mean);
  int flipped = 0;
  for (auto f : data.train.flip_mask) flipped += f;
  CHECK(flipped > 0);

  cfg.set("noise.kind", "none");
  ExperimentData clean = build_experiment_data(cfg, 1);
  for (auto f : clean.train.flip_mask) CHECK(f == 0);

  cfg.set("noise.kind", "bogus");
  CHECK_THROWS_AS(build_experiment_data(cfg, 1), ConfigError);
}

TEST_CASE("run_single: deterministic per seed, best is the series max") {
  ExperimentConfig cfg = tiny_config();
  cfg.set("strategy.name", "ce");
  cfg.set("augment.policy", "weak");
  RunResult a = run_single(cfg, 5, "");
  RunResult b = run_single(cfg, 5, "");
  CHECK(a.test_acc == b.test_acc);
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.auc == b.auc);
  REQUIRE(a.test_acc.size() == 3);
  CHECK(a.best == *std::max_element(a.test_acc.begin(), a.test_acc.end()));
  for (double acc : a.test_acc) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 100.0);
  }
  // "last" is the mean of the final window (all 3 epochs here).
  CHECK(a.last ==
        doctest::Approx((a.test_acc[0] + a.test_acc[1] + a.test_acc[2]) / 3.0).epsilon(1e-12));

  RunResult c = run_single(cfg, 6, "");
  CHECK(a.train_loss != c.train_loss);
}

TEST_CASE("run_single: every strategy string dispatches end to end") {
  ExperimentConfig cfg = tiny_config();
  for (const char* name : {"ce", "dividemix", "dividemix-WS-WAW", "dividemix-SS-SAW",
                           "coteaching+-WS", "mdyrh-WS"}) {
    cfg.set("strategy.name", name);
    RunResult r = run_single(cfg, 3, "");
    CHECK(r.test_acc.size() == 3);
  }
}

TEST_CASE("run_single: expansion strategies double the train set up front") {
  ExperimentConfig cfg = tiny_config();
  cfg.set("strategy.name", "ce");
  cfg.set("augment.strategy", "expansion-w");
  // Indirect check: the run completes and is deterministic; expansion is
  // covered directly in the augment tests.
  RunResult r = run_single(cfg, 4, "");
  CHECK(r.test_acc.size() == 3);
}

TEST_CASE("emit_metrics: files round-trip the summary and row counts") {
  TempDir tmp("harness_test_out");
  ExperimentConfig cfg = tiny_config();
  cfg.set("strategy.name", "ce");
  RunResult r = run_single(cfg, 5, tmp.path.string());

  std::ifstream csv(tmp.path / "epochs.csv");
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "epoch,test_acc,train_loss,auc,lr");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);

  const auto j = nlohmann::json::parse(slurp(tmp.path / "summary.json"));
  CHECK(j["best"].get<double>() == doctest::Approx(r.best).epsilon(1e-12));
  CHECK(j["last"].get<double>() == doctest::Approx(r.last).epsilon(1e-12));
  CHECK(j["seed"].get<std::uint64_t>() == 5);
  CHECK(j["config"]["strategy.name"].get<std::string>() == "ce");
  CHECK(j["config"]["noise.rate"].get<std::string>() == "0.4");

  CHECK(fs::exists(tmp.path / "checkpoint_net1.nlab"));
}

TEST_CASE("run: aggregates mean and sample standard deviation over seeds") {
  TempDir tmp("harness_test_agg");
  ExperimentConfig cfg = tiny_config();
  cfg.set("strategy.name", "ce");
  cfg.set("train.seeds", "1,2");
  AggregateResult agg = run(cfg, tmp.path.string());
  REQUIRE(agg.per_seed.size() == 2);
  const double mean = (agg.per_seed[0].best + agg.per_seed[1].best) / 2.0;
  CHECK(agg.best_mean == doctest::Approx(mean).epsilon(1e-12));
  const double dev = std::fabs(agg.per_seed[0].best - mean);
  CHECK(agg.best_std == doctest::Approx(std::sqrt(2.0 * dev * dev)).epsilon(1e-9));
  CHECK(fs::exists(tmp.path / "aggregate.json"));
  CHECK(fs::exists(tmp.path / "seed_1" / "epochs.csv"));
  CHECK(fs::exists(tmp.path / "seed_2" / "epochs.csv"));
}

TEST_CASE("warmup_probe: writes histograms per p and matches a plain warm-up") {
  TempDir tmp("harness_test_probe");
  ExperimentConfig cfg = tiny_config();
  cfg.set("probe.epoch", "2");
  cfg.set("train.seeds", "9");
  const auto results = warmup_probe(cfg, {0.0, 1.0}, tmp.path.string());
  REQUIRE(results.size() == 2);
  CHECK(fs::exists(tmp.path / "p_0.00" / "seed_9" / "histograms" / "epoch_2.csv"));
  CHECK(fs::exists(tmp.path / "p_1.00" / "seed_9" / "histograms" / "epoch_2.csv"));
  CHECK(fs::exists(tmp.path / "probe_summary.csv"));

  // Histogram bin counts account for every training sample.
  int total = 0;
  for (std::size_t b = 0; b < results[0].histogram.bin_left.size(); ++b)
    total += results[0].histogram.clean_count[b] + results[0].histogram.noisy_count[b];
  CHECK(total == 36);

  // p=0 is exactly the weakly augmented warm-up: rerunning it by hand gives
  // the same losses, hence the same histogram.
  ExperimentData data = build_experiment_data(cfg, 9);
  TrainSettings s;
  s.batch_size = cfg.get_int("train.batch_size");
  s.schedule = LrSchedule{cfg.get_double("train.lr"), cfg.get_int("train.lr_drop_epoch")};
  const Image& img = data.train.images.front();
  EpochContext ctx = make_context(1, data.train.num_classes, img.channels, img.height,
                                  img.width, 9, s, cfg.get_int("train.filters"),
                                  cfg.get_int("train.hidden"));
  WarmupOptions wo;
  wo.variant = WarmupVariant::waw;
  wo.conf_penalty = cfg.get_bool("dividemix.conf_penalty");
  warmup(ctx, data.train, s, wo, 2);
  const auto losses = eval_per_sample_losses(ctx.nets[0], data.train);
  const auto norm = normalize_losses(losses);
  LossHistogram manual = loss_histogram(norm, data.train.flip_mask, cfg.get_int("probe.bins"));
  CHECK(manual.clean_count == results[0].histogram.clean_count);
  CHECK(manual.noisy_count == results[0].histogram.noisy_count);
}

TEST_CASE("cli: help exits zero, junk exits two") {
  CHECK(run_cli({"run", "--help"}) == 0);
  CHECK(run_cli({"definitely-not-a-subcommand"}) == 2);
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"run", "--no-such-flag"}) == 2);
}

TEST_CASE("cli: run with overrides writes results and reports bad values") {
  TempDir tmp("harness_test_cli");
  const int rc = run_cli({"run", "--strategy", "ce", "--noise-rate", "0.4", "--seed", "3",
                          "--out", "harness_test_cli", "--epochs", "2",
                          "--set", "data.per_class=10", "--set", "data.classes=3",
                          "--set", "data.test_per_class=6", "--set", "train.hidden=16",
                          "--set", "train.filters=4", "--set", "train.warmup_epochs=0"});
  CHECK(rc == 0);
  CHECK(fs::exists(tmp.path / "seed_3" / "summary.json"));

  CHECK(run_cli({"run", "--strategy", "not-a-strategy"}) == 1);
  CHECK(run_cli({"run", "--set", "malformed"}) == 1);
}

TEST_CASE("cli: grid produces one directory per cell") {
  TempDir tmp("harness_test_grid");
  const int rc = run_cli({"grid", "--strategies", "ce,mdyrh-WS", "--noise-rates", "0.2,0.6",
                          "--out", "harness_test_grid", "--seed", "2", "--epochs", "2",
                          "--set", "data.per_class=8", "--set", "data.classes=3",
                          "--set", "data.test_per_class=6", "--set", "train.hidden=12",
                          "--set", "train.filters=2", "--set", "train.warmup_epochs=1",
                          "--set", "train.batch_size=16"});
  CHECK(rc == 0);
  int cells = 0;
  for (const auto& entry : fs::directory_iterator(tmp.path))
    if (entry.is_directory()) ++cells;
  CHECK(cells == 4);
  CHECK(fs::exists(tmp.path / "ce_symmetric0.20" / "seed_2" / "epochs.csv"));
}

TEST_CASE("cli: gen-data exports an IDX pair that loads back") {
  TempDir tmp("harness_test_gen");
  const int rc = run_cli({"gen-data", "--out", "harness_test_gen", "--classes", "3",
                          "--per-class", "4", "--size", "16", "--seed", "11",
                          "--noise-kind", "symmetric", "--noise-rate", "0.5"});
  CHECK(rc == 0);
  NoisyDataset ds =
      load_idx((tmp.path / "images.idx").string(), (tmp.path / "labels.idx").string());
  CHECK(ds.size() == 12);
  CHECK(ds.images[0].height == 16);
}
