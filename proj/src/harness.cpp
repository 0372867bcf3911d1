#include "nlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nlab/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nlab {

namespace {

const std::map<std::string, std::string>& default_entries() {
  static const std::map<std::string, std::string> defaults = {
      {"data.kind", "glyphs"},
      {"data.classes", "4"},
      {"data.per_class", "200"},
      {"data.test_per_class", "100"},
      {"data.image_size", "16"},
      {"data.channels", "1"},
      {"data.seed", "7"},
      {"data.rotate_deg", "20"},
      {"data.translate_px", "2"},
      {"data.scale_lo", "0.9"},
      {"data.scale_hi", "1.1"},
      {"data.pixel_noise", "0.05"},
      {"data.idx_images", ""},
      {"data.idx_labels", ""},
      {"data.idx_test_images", ""},
      {"data.idx_test_labels", ""},
      {"noise.kind", "symmetric"},
      {"noise.rate", "0.8"},
      {"noise.seed", "auto"},
      {"noise.uniform_over_all", "true"},
      {"train.batch_size", "32"},
      {"train.epochs", "60"},
      {"train.warmup_epochs", "10"},
      {"train.lr", "0.02"},
      {"train.lr_drop_epoch", "40"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.filters", "8"},
      {"train.hidden", "64"},
      {"train.seeds", "1,2,3"},
      {"strategy.name", "dividemix-WS-WAW"},
      {"augment.policy", "raw"},
      {"augment.strategy", ""},
      {"augment.rand_n", "1"},
      {"augment.rand_m", "6"},
      {"augment.p_strong", "-1"},
      {"dividemix.m", "2"},
      {"dividemix.t", "0.5"},
      {"dividemix.tau", "0.5"},
      {"dividemix.alpha", "auto"},
      {"dividemix.lambda_u", "auto"},
      {"dividemix.lambda_r", "1"},
      {"dividemix.ramp_epochs", "16"},
      {"dividemix.conf_penalty", "true"},
      {"dividemix.gmm_max_iter", "10"},
      {"dividemix.gmm_tol", "1e-4"},
      {"dividemix.max_lambda", "true"},
      {"coteaching.forget_rate", "auto"},
      {"coteaching.tk", "10"},
      {"mdyrh.alpha", "4"},
      {"mdyrh.lambda_r", "1"},
      {"mdyrh.bmm_max_iter", "10"},
      {"mdyrh.bmm_tol", "1e-4"},
      {"probe.epoch", "20"},
      {"probe.bins", "50"},
      {"out.dir", "runs"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() : kv_(default_entries()) {}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  ExperimentConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw FormatError(path + ":" + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

bool ExperimentConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string ExperimentConfig::get(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int ExperimentConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + get(key));
  }
}

double ExperimentConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + get(key));
  }
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

StrategySpec parse_strategy(const std::string& name) {
  const std::vector<std::string> parts = split_list(name, '-');
  if (parts.empty()) throw ConfigError("empty strategy name");

  StrategySpec spec;
  const std::string& method = parts[0];
  if (method == "ce") {
    spec.method = StrategySpec::Method::ce;
  } else if (method == "coteaching+") {
    spec.method = StrategySpec::Method::coteaching_plus;
  } else if (method == "mdyrh") {
    spec.method = StrategySpec::Method::mdyrh;
  } else if (method == "dividemix") {
    spec.method = StrategySpec::Method::dividemix;
    spec.aug.variant = AugVariant::runtime_w;  // the baseline
  } else {
    throw ConfigError("unknown strategy: " + method);
  }

  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string& suffix = parts[i];
    if (suffix == "WW") {
      spec.aug.variant = AugVariant::augdesc_ww;
      spec.has_aug_suffix = true;
    } else if (suffix == "SS") {
      spec.aug.variant = AugVariant::augdesc_ss;
      spec.has_aug_suffix = true;
    } else if (suffix == "WS") {
      spec.aug.variant = AugVariant::augdesc_ws;
      spec.has_aug_suffix = true;
    } else if (suffix == "WAW") {
      spec.aug.warmup = WarmupVariant::waw;
    } else if (suffix == "SAW") {
      spec.aug.warmup = WarmupVariant::saw;
    } else {
      throw ConfigError("unknown strategy suffix: " + suffix);
    }
  }
  if (spec.method == StrategySpec::Method::ce && spec.has_aug_suffix)
    throw ConfigError("the ce baseline takes its augmentation from [augment] policy");
  return spec;
}

namespace {

AugVariant parse_aug_variant(const std::string& s) {
  if (s == "raw") return AugVariant::raw;
  if (s == "expansion-w") return AugVariant::expansion_w;
  if (s == "expansion-s") return AugVariant::expansion_s;
  if (s == "runtime-w") return AugVariant::runtime_w;
  if (s == "runtime-s") return AugVariant::runtime_s;
  if (s == "augdesc-ww") return AugVariant::augdesc_ww;
  if (s == "augdesc-ss") return AugVariant::augdesc_ss;
  if (s == "augdesc-ws") return AugVariant::augdesc_ws;
  throw ConfigError("unknown augmentation strategy: " + s);
}

struct ResolvedRun {
  StrategySpec strategy;
  AugStrategy aug;  // effective variant (config override applied)
  RandAugmentConfig rand;
  TrainSettings settings;
  int epochs = 0;
  int warmup_epochs = 0;
  int num_nets = 1;
};

ResolvedRun resolve(const ExperimentConfig& cfg) {
  ResolvedRun r;
  r.strategy = parse_strategy(cfg.get("strategy.name"));
  r.aug = r.strategy.aug;
  const std::string aug_override = cfg.get("augment.strategy");
  if (!aug_override.empty()) r.aug.variant = parse_aug_variant(aug_override);

  r.rand.n = cfg.get_int("augment.rand_n");
  r.rand.m = cfg.get_double("augment.rand_m");

  r.settings.batch_size = cfg.get_int("train.batch_size");
  r.settings.schedule.base = cfg.get_double("train.lr");
  r.settings.schedule.drop_epoch = cfg.get_int("train.lr_drop_epoch");
  r.settings.momentum = cfg.get_double("train.momentum");
  r.settings.weight_decay = cfg.get_double("train.weight_decay");

  r.epochs = cfg.get_int("train.epochs");
  r.warmup_epochs = cfg.get_int("train.warmup_epochs");
  if (r.strategy.method == StrategySpec::Method::ce) r.warmup_epochs = 0;
  if (r.warmup_epochs > r.epochs) throw ConfigError("warmup_epochs exceeds total epochs");

  r.num_nets = (r.strategy.method == StrategySpec::Method::dividemix ||
                r.strategy.method == StrategySpec::Method::coteaching_plus)
                   ? 2
                   : 1;
  return r;
}

double auto_or(const ExperimentConfig& cfg, const std::string& key, double auto_value) {
  const std::string v = cfg.get(key);
  if (v == "auto") return auto_value;
  return cfg.get_double(key);
}

std::vector<std::uint64_t> seed_list(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& s : split_list(cfg.get("train.seeds")))
    seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
  if (seeds.empty()) throw ConfigError("train.seeds must name at least one seed");
  return seeds;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

ExperimentData build_experiment_data(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  ExperimentData data;
  const std::string kind = cfg.get("data.kind");
  if (kind == "glyphs") {
    GlyphSpec spec;
    spec.num_classes = cfg.get_int("data.classes");
    spec.per_class = cfg.get_int("data.per_class");
    spec.image_size = cfg.get_int("data.image_size");
    spec.channels = cfg.get_int("data.channels");
    spec.jitter.rotate_deg = cfg.get_double("data.rotate_deg");
    spec.jitter.translate_px = cfg.get_double("data.translate_px");
    spec.jitter.scale_lo = cfg.get_double("data.scale_lo");
    spec.jitter.scale_hi = cfg.get_double("data.scale_hi");
    spec.jitter.pixel_noise_sigma = cfg.get_double("data.pixel_noise");

    const std::uint64_t data_seed = static_cast<std::uint64_t>(cfg.get_int("data.seed"));
    data.train = generate_glyphs(spec, data_seed);
    GlyphSpec test_spec = spec;
    test_spec.per_class = cfg.get_int("data.test_per_class");
    data.test = generate_glyphs(test_spec, Rng::mix(data_seed, 0x7e57));
  } else if (kind == "idx") {
    data.train = load_idx(cfg.get("data.idx_images"), cfg.get("data.idx_labels"));
    data.test = load_idx(cfg.get("data.idx_test_images"), cfg.get("data.idx_test_labels"));
  } else {
    throw ConfigError("unknown data.kind: " + kind);
  }

  // Test images are normalized with the training-set statistics.
  data.test.mean = data.train.mean;
  data.test.stddev = data.train.stddev;

  const std::string noise_kind = cfg.get("noise.kind");
  const double rate = cfg.get_double("noise.rate");
  if (rate < 0.0 || rate > 1.0) throw ConfigError("noise.rate must be in [0,1]");
  std::uint64_t noise_seed;
  if (cfg.get("noise.seed") == "auto") {
    noise_seed = Rng::mix(run_seed, 0x4015e);
  } else {
    noise_seed = static_cast<std::uint64_t>(cfg.get_int("noise.seed"));
  }
  if (noise_kind == "symmetric") {
    data.train = inject_symmetric(data.train, rate, noise_seed,
                                  cfg.get_bool("noise.uniform_over_all"));
  } else if (noise_kind == "asymmetric") {
    data.train = inject_asymmetric(data.train, rate, noise_seed);
  } else if (noise_kind != "none") {
    throw ConfigError("unknown noise.kind: " + noise_kind);
  }
  return data;
}

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed,
                     const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const ResolvedRun rr = resolve(cfg);

  ExperimentData data = build_experiment_data(cfg, seed);
  const double rate = cfg.get_double("noise.rate");

  if (rr.aug.variant == AugVariant::expansion_w || rr.aug.variant == AugVariant::expansion_s) {
    data.train =
        expand(data.train, rr.aug.variant == AugVariant::expansion_s, rr.rand, seed);
  }

  const Image& sample = data.train.images.front();
  EpochContext ctx = make_context(rr.num_nets, data.train.num_classes, sample.channels,
                                  sample.height, sample.width, seed, rr.settings,
                                  cfg.get_int("train.filters"), cfg.get_int("train.hidden"));

  // Method configs.
  DivideMixConfig dm;
  dm.m_augmentations = cfg.get_int("dividemix.m");
  dm.sharpen_t = cfg.get_double("dividemix.t");
  dm.tau = cfg.get_double("dividemix.tau");
  dm.alpha = auto_or(cfg, "dividemix.alpha", rate >= 0.8 ? 4.0 : 0.5);
  dm.lambda_u = auto_or(cfg, "dividemix.lambda_u", rate >= 0.8 ? 25.0 : 0.0);
  dm.lambda_r = cfg.get_double("dividemix.lambda_r");
  dm.lambda_u_ramp_epochs = cfg.get_int("dividemix.ramp_epochs");
  dm.warm_up = rr.warmup_epochs;
  dm.strategy = rr.aug;
  dm.rand = rr.rand;
  dm.gmm_max_iter = cfg.get_int("dividemix.gmm_max_iter");
  dm.gmm_tol = cfg.get_double("dividemix.gmm_tol");
  dm.use_max_lambda = cfg.get_bool("dividemix.max_lambda");

  CoTeachPlusConfig ct;
  {
    const int C = data.train.num_classes;
    const double flip_fraction =
        cfg.get("noise.kind") == "symmetric" ? rate * (C - 1) / C : rate;
    ct.forget_rate = std::clamp(auto_or(cfg, "coteaching.forget_rate", flip_fraction),
                                1e-3, 1.0 - 1e-3);
  }
  ct.tk = cfg.get_int("coteaching.tk");
  ct.first_epoch = rr.warmup_epochs;
  ct.rand = rr.rand;
  if (!rr.strategy.has_aug_suffix && cfg.get("augment.strategy").empty()) {
    ct.descent = CoTeachPlusConfig::Descent::none;
  } else {
    ct.descent = rr.aug.variant == AugVariant::augdesc_ww ? CoTeachPlusConfig::Descent::weak
                                                          : CoTeachPlusConfig::Descent::strong;
  }

  MdyrhConfig md;
  md.alpha = cfg.get_double("mdyrh.alpha");
  md.lambda_r = cfg.get_double("mdyrh.lambda_r");
  md.rand = rr.rand;
  md.bmm_max_iter = cfg.get_int("mdyrh.bmm_max_iter");
  md.bmm_tol = cfg.get_double("mdyrh.bmm_tol");
  if (!rr.strategy.has_aug_suffix && cfg.get("augment.strategy").empty()) {
    md.descent = MdyrhConfig::Descent::weak;
  } else {
    md.descent = rr.aug.variant == AugVariant::augdesc_ww ? MdyrhConfig::Descent::weak
                                                          : MdyrhConfig::Descent::strong;
  }

  const RuntimePolicy ce_policy = parse_policy(cfg.get("augment.policy"));

  WarmupOptions wo;
  wo.variant = rr.aug.warmup;
  wo.conf_penalty = rr.strategy.method == StrategySpec::Method::dividemix &&
                    cfg.get_bool("dividemix.conf_penalty");
  wo.p_strong = cfg.get_double("augment.p_strong");
  wo.rand = rr.rand;

  RunResult result;
  result.seed = seed;
  for (int e = 0; e < rr.epochs; ++e) {
    if (e < rr.warmup_epochs) {
      warmup(ctx, data.train, rr.settings, wo, 1);
    } else {
      switch (rr.strategy.method) {
        case StrategySpec::Method::ce:
          ce_baseline_epoch(ctx, data.train, rr.settings, ce_policy);
          break;
        case StrategySpec::Method::dividemix:
          dividemix_epoch(ctx, data.train, rr.settings, dm);
          break;
        case StrategySpec::Method::coteaching_plus:
          coteaching_plus_epoch(ctx, data.train, rr.settings, ct);
          break;
        case StrategySpec::Method::mdyrh:
          mdyrh_epoch(ctx, data.train, rr.settings, md);
          break;
      }
    }

    result.test_acc.push_back(test_accuracy(ctx.nets, data.test));
    const std::vector<double> losses = eval_per_sample_losses(ctx.nets[0], data.train);
    result.train_loss.push_back(mean_of(losses));
    double auc = 0.5;
    try {
      auc = separation_auc(losses, data.train.flip_mask);
    } catch (const DiagnosticError&) {
      // noise-free runs have no noisy class; report the uninformative value
    }
    result.auc.push_back(auc);
    result.lr.push_back(lr_at(e, rr.settings.schedule));
  }

  result.best = result.test_acc.empty()
                    ? 0.0
                    : *std::max_element(result.test_acc.begin(), result.test_acc.end());
  const std::size_t window = std::min<std::size_t>(5, result.test_acc.size());
  if (window > 0) {
    double s = 0.0;
    for (std::size_t i = result.test_acc.size() - window; i < result.test_acc.size(); ++i)
      s += result.test_acc[i];
    result.last = s / static_cast<double>(window);
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    emit_metrics(result, cfg, out_dir);
    for (std::size_t k = 0; k < ctx.nets.size(); ++k)
      save_checkpoint(ctx.nets[k],
                      (fs::path(out_dir) / ("checkpoint_net" + std::to_string(k + 1) + ".nlab"))
                          .string());
  }
  return result;
}

void emit_metrics(const RunResult& result, const ExperimentConfig& cfg,
                  const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "epochs.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write epochs.csv under " + dir);
    f << "epoch,test_acc,train_loss,auc,lr\n";
    char buf[160];
    for (std::size_t e = 0; e < result.test_acc.size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g\n", e, result.test_acc[e],
                    result.train_loss[e], result.auc[e], result.lr[e]);
      f << buf;
    }
    if (!f) throw IoError("failed writing epochs.csv under " + dir);
  }
  {
    json j;
    j["seed"] = result.seed;
    j["best"] = result.best;
    j["last"] = result.last;
    j["last_window"] = 5;  // "last" = mean test accuracy of the final 5 epochs
    j["epochs"] = result.test_acc.size();
    j["wall_seconds"] = result.wall_seconds;
    json config = json::object();
    for (const auto& [k, v] : cfg.entries()) config[k] = v;
    j["config"] = config;
    std::ofstream f(fs::path(dir) / "summary.json", std::ios::trunc);
    if (!f) throw IoError("cannot write summary.json under " + dir);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed writing summary.json under " + dir);
  }
}

AggregateResult run(const ExperimentConfig& cfg, const std::string& out_dir) {
  AggregateResult agg;
  for (std::uint64_t seed : seed_list(cfg)) {
    const std::string seed_dir =
        out_dir.empty() ? "" : (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string();
    agg.per_seed.push_back(run_single(cfg, seed, seed_dir));
  }
  std::vector<double> bests, lasts;
  for (const RunResult& r : agg.per_seed) {
    bests.push_back(r.best);
    lasts.push_back(r.last);
  }
  agg.best_mean = mean_of(bests);
  agg.best_std = sample_std(bests);
  agg.last_mean = mean_of(lasts);
  agg.last_std = sample_std(lasts);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json j;
    j["best_mean"] = agg.best_mean;
    j["best_std"] = agg.best_std;
    j["last_mean"] = agg.last_mean;
    j["last_std"] = agg.last_std;
    json per_seed = json::array();
    for (const RunResult& r : agg.per_seed) {
      per_seed.push_back({{"seed", r.seed},
                          {"best", r.best},
                          {"last", r.last},
                          {"wall_seconds", r.wall_seconds}});
    }
    j["per_seed"] = per_seed;
    j["strategy"] = cfg.get("strategy.name");
    j["noise"] = {{"kind", cfg.get("noise.kind")}, {"rate", cfg.get_double("noise.rate")}};
    std::ofstream f(fs::path(out_dir) / "aggregate.json", std::ios::trunc);
    if (!f) throw IoError("cannot write aggregate.json under " + out_dir);
    f << j.dump(2) << "\n";
  }
  return agg;
}

std::vector<ProbeResult> warmup_probe(const ExperimentConfig& cfg,
                                      const std::vector<double>& p_list,
                                      const std::string& out_dir) {
  for (double p : p_list)
    if (p < 0.0 || p > 1.0) throw ConfigError("p_strong values must be in [0,1]");
  const ResolvedRun rr = resolve(cfg);
  const int probe_epoch = cfg.get_int("probe.epoch");
  const int bins = cfg.get_int("probe.bins");

  std::vector<ProbeResult> results;
  for (double p : p_list) {
    for (std::uint64_t seed : seed_list(cfg)) {
      ExperimentData data = build_experiment_data(cfg, seed);
      const Image& sample = data.train.images.front();
      EpochContext ctx =
          make_context(1, data.train.num_classes, sample.channels, sample.height, sample.width,
                       seed, rr.settings, cfg.get_int("train.filters"),
                       cfg.get_int("train.hidden"));
      WarmupOptions wo;
      wo.variant = rr.aug.warmup;
      wo.conf_penalty = cfg.get_bool("dividemix.conf_penalty");
      wo.p_strong = p;
      wo.rand = rr.rand;
      warmup(ctx, data.train, rr.settings, wo, probe_epoch);

      ProbeResult pr;
      pr.p_strong = p;
      pr.seed = seed;
      const std::vector<double> losses = eval_per_sample_losses(ctx.nets[0], data.train);
      const std::vector<double> norm = normalize_losses(losses);
      pr.auc = separation_auc(norm, data.train.flip_mask);
      pr.histogram = loss_histogram(norm, data.train.flip_mask, bins);

      if (!out_dir.empty()) {
        char pbuf[32];
        std::snprintf(pbuf, sizeof(pbuf), "p_%.2f", p);
        const fs::path dir =
            fs::path(out_dir) / pbuf / ("seed_" + std::to_string(seed)) / "histograms";
        fs::create_directories(dir);
        write_histogram_csv(pr.histogram,
                            (dir / ("epoch_" + std::to_string(probe_epoch) + ".csv")).string());
      }
      results.push_back(std::move(pr));
    }
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "probe_summary.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write probe_summary.csv under " + out_dir);
    f << "p_strong,seed,auc\n";
    char buf[96];
    for (const ProbeResult& pr : results) {
      std::snprintf(buf, sizeof(buf), "%.4g,%llu,%.10g\n", pr.p_strong,
                    static_cast<unsigned long long>(pr.seed), pr.auc);
      f << buf;
    }
  }
  return results;
}

namespace {

int env_threads() {
  const char* v = std::getenv("NLAB_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

std::string cell_dir_name(const std::string& strategy, const std::string& noise_kind,
                          double rate) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_%s%.2f", noise_kind.c_str(), rate);
  return strategy + buf;
}

}  // namespace

void run_grid(const ExperimentConfig& base, const std::vector<std::string>& strategies,
              const std::vector<double>& noise_rates, const std::string& out_dir) {
  if (strategies.empty() || noise_rates.empty())
    throw ConfigError("grid needs at least one strategy and one noise rate");

  struct Cell {
    std::string strategy;
    double rate;
  };
  std::vector<Cell> cells;
  for (const std::string& s : strategies)
    for (double r : noise_rates) cells.push_back({s, r});

  // Validate all strategy names before burning CPU on any cell.
  for (const Cell& c : cells) parse_strategy(c.strategy);

  std::mutex mu;
  std::size_t next = 0;
  const int workers = std::min<int>(env_threads(), static_cast<int>(cells.size()));
  auto work = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= cells.size()) return;
        i = next++;
      }
      ExperimentConfig cfg = base;
      cfg.set("strategy.name", cells[i].strategy);
      char rate[32];
      std::snprintf(rate, sizeof(rate), "%g", cells[i].rate);
      cfg.set("noise.rate", rate);
      const std::string dir =
          (fs::path(out_dir) /
           cell_dir_name(cells[i].strategy, cfg.get("noise.kind"), cells[i].rate))
              .string();
      run(cfg, dir);
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
}

}  // namespace nlab
