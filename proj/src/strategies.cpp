#include "nlab/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "nlab/errors.hpp"

namespace nlab {

EpochContext make_context(int num_nets, int num_classes, int channels, int height, int width,
                          std::uint64_t run_seed, const TrainSettings& settings, int filters,
                          int hidden) {
  EpochContext ctx;
  ctx.run_seed = run_seed;
  for (int k = 0; k < num_nets; ++k) {
    const std::uint64_t net_seed =
        Rng::keyed({run_seed, rngkey::kInit, static_cast<std::uint64_t>(k)}).next_u64();
    ctx.nets.push_back(
        make_default_net(num_classes, channels, height, width, net_seed, filters, hidden));
    ctx.opt.push_back(make_optimizer(ctx.nets.back(), settings.momentum, settings.weight_decay,
                                     settings.schedule.base));
    ctx.clean_prob.emplace_back();
  }
  return ctx;
}

ProbVector sharpen(const ProbVector& p, double temperature) {
  if (temperature <= 0.0) throw ConfigError("sharpening temperature must be > 0");
  ProbVector out(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::pow(p[i], 1.0 / temperature) : 0.0;
    sum += out[i];
  }
  if (sum <= 0.0) throw NumericError("sharpen received an all-zero vector");
  for (double& x : out) x /= sum;
  return out;
}

ProbVector refine_label(const ProbVector& y, const ProbVector& p_avg, double w) {
  if (y.size() != p_avg.size()) throw ConfigError("refine_label size mismatch");
  if (w < 0.0 || w > 1.0) throw ConfigError("clean probability must be in [0,1]");
  ProbVector out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = w * y[i] + (1.0 - w) * p_avg[i];
  return out;
}

double r_schedule(int epoch, int tk, double tau) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  if (tk < 1) throw ConfigError("Tk must be >= 1");
  return 1.0 - std::min(static_cast<double>(epoch) / tk * tau, tau);
}

namespace {

std::vector<ProbVector> softmax_to_rows(const Tensor& p) {
  const std::size_t B = p.dim(0), C = p.dim(1);
  std::vector<ProbVector> out(B, ProbVector(C));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) out[b][c] = p.at2(b, c);
  return out;
}

// Mean softmax of the net over several view batches of the same samples.
std::vector<ProbVector> avg_softmax(const Network& net, const std::vector<Tensor>& views) {
  if (views.empty()) throw ConfigError("prediction averaging needs at least one view");
  std::vector<ProbVector> acc;
  for (const Tensor& v : views) {
    Tensor p = softmax_rows(forward(net, v));
    std::vector<ProbVector> rows = softmax_to_rows(p);
    if (acc.empty()) {
      acc = std::move(rows);
    } else {
      for (std::size_t b = 0; b < acc.size(); ++b)
        for (std::size_t c = 0; c < acc[b].size(); ++c) acc[b][c] += rows[b][c];
    }
  }
  const double inv = 1.0 / static_cast<double>(views.size());
  for (auto& row : acc)
    for (double& x : row) x *= inv;
  return acc;
}

int argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t C = t.dim(1);
  int best = 0;
  double bv = t.at2(row, 0);
  for (std::size_t c = 1; c < C; ++c) {
    if (t.at2(row, c) > bv) {
      bv = t.at2(row, c);
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<ProbVector> one_hot_targets(const NoisyDataset& ds, const std::vector<int>& idx) {
  std::vector<ProbVector> t;
  t.reserve(idx.size());
  for (int i : idx) t.push_back(one_hot(ds.given_labels[i], ds.num_classes));
  return t;
}

void apply_sgd(EpochContext& ctx, int k, const TrainSettings& settings, const Gradients& grads) {
  ctx.opt[k].lr = lr_at(ctx.epoch, settings.schedule);
  sgd_step(ctx.nets[k], grads, ctx.opt[k]);
}

}  // namespace

std::vector<ProbVector> co_guess(const Network& net1, const Network& net2,
                                 const std::vector<Tensor>& views) {
  if (views.empty()) throw ConfigError("co_guess needs at least one view");
  std::vector<ProbVector> acc;
  for (const Tensor& v : views) {
    for (const Network* net : {&net1, &net2}) {
      std::vector<ProbVector> rows = softmax_to_rows(softmax_rows(forward(*net, v)));
      if (acc.empty()) {
        acc = std::move(rows);
      } else {
        for (std::size_t b = 0; b < acc.size(); ++b)
          for (std::size_t c = 0; c < acc[b].size(); ++c) acc[b][c] += rows[b][c];
      }
    }
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(views.size()));
  for (auto& row : acc)
    for (double& x : row) x *= inv;
  return acc;
}

// ---- MixMatch ------------------------------------------------------------

MixedBatch build_mixmatch_batch(const MixmatchInput& input, double alpha, Rng& rng,
                                bool use_max_lambda, const double* forced_lambda) {
  if (input.labeled_x.empty()) throw ConfigError("MixMatch needs a labeled batch");
  if (input.labeled_x.size() != input.labeled_y.size() ||
      input.unlabeled_x.size() != input.unlabeled_q.size())
    throw ConfigError("MixMatch input sizes disagree");

  std::vector<const Image*> pool;
  std::vector<const ProbVector*> targets;
  for (std::size_t i = 0; i < input.labeled_x.size(); ++i) {
    pool.push_back(&input.labeled_x[i]);
    targets.push_back(&input.labeled_y[i]);
  }
  for (std::size_t i = 0; i < input.unlabeled_x.size(); ++i) {
    pool.push_back(&input.unlabeled_x[i]);
    targets.push_back(&input.unlabeled_q[i]);
  }

  double lambda = forced_lambda ? *forced_lambda : rng.beta(alpha, alpha);
  if (use_max_lambda) lambda = std::max(lambda, 1.0 - lambda);

  std::vector<std::size_t> perm(pool.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  const Image& first = *pool.front();
  MixedBatch mb;
  mb.lambda = lambda;
  mb.num_labeled = input.labeled_x.size();
  mb.x = Tensor::zeros({pool.size(), static_cast<std::size_t>(first.channels),
                        static_cast<std::size_t>(first.height),
                        static_cast<std::size_t>(first.width)});
  mb.targets.resize(pool.size());
  const std::size_t stride = first.px.size();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Image& a = *pool[i];
    const Image& b = *pool[perm[i]];
    if (a.px.size() != stride || b.px.size() != stride)
      throw ConfigError("ragged MixMatch batch");
    double* out = mb.x.v.data() + i * stride;
    for (std::size_t j = 0; j < stride; ++j)
      out[j] = lambda * a.px[j] + (1.0 - lambda) * b.px[j];
    const ProbVector& ta = *targets[i];
    const ProbVector& tb = *targets[perm[i]];
    ProbVector mixed(ta.size());
    for (std::size_t c = 0; c < ta.size(); ++c)
      mixed[c] = lambda * ta[c] + (1.0 - lambda) * tb[c];
    mb.targets[i] = std::move(mixed);
  }
  return mb;
}

MixmatchResult mixmatch_eval(const Network& net, const MixedBatch& batch, double lambda_u,
                             double lambda_r) {
  const std::size_t N = batch.x.dim(0);
  const std::size_t nl = batch.num_labeled;
  const std::size_t nu = N - nl;

  Activations cache = forward_cached(net, batch.x);
  const Tensor& logits = cache.logits();
  if (!logits.all_finite()) throw NumericError("non-finite logits in MixMatch");
  Tensor p = softmax_rows(logits);
  const std::size_t C = p.dim(1);

  MixmatchResult r;
  r.lambda = batch.lambda;
  Tensor dlogits = Tensor::zeros({N, C});

  // Lx: soft-target cross-entropy over the labeled slice.
  for (std::size_t b = 0; b < nl; ++b) {
    const double* pb = p.v.data() + b * C;
    double* db = dlogits.v.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double t = batch.targets[b][c];
      r.lx -= t * std::log(std::max(pb[c], 1e-12));
      db[c] += (pb[c] - t) / static_cast<double>(nl);
    }
  }
  r.lx /= static_cast<double>(nl);

  // Lu: squared error between softmax outputs and mixed guesses, averaged
  // over samples and classes.
  if (nu > 0 && lambda_u != 0.0) {
    const double scale = 1.0 / (static_cast<double>(nu) * static_cast<double>(C));
    for (std::size_t b = nl; b < N; ++b) {
      const double* pb = p.v.data() + b * C;
      double* db = dlogits.v.data() + b * C;
      double dot = 0.0;
      std::vector<double> g(C);
      for (std::size_t c = 0; c < C; ++c) {
        const double diff = pb[c] - batch.targets[b][c];
        r.lu += diff * diff * scale;
        g[c] = 2.0 * diff * scale;
      }
      for (std::size_t c = 0; c < C; ++c) dot += g[c] * pb[c];
      for (std::size_t c = 0; c < C; ++c) db[c] += lambda_u * pb[c] * (g[c] - dot);
    }
  } else if (nu > 0) {
    const double scale = 1.0 / (static_cast<double>(nu) * static_cast<double>(C));
    for (std::size_t b = nl; b < N; ++b) {
      const double* pb = p.v.data() + b * C;
      for (std::size_t c = 0; c < C; ++c) {
        const double diff = pb[c] - batch.targets[b][c];
        r.lu += diff * diff * scale;
      }
    }
  }

  // Lreg: KL(uniform prior || batch-mean prediction) over the whole batch.
  std::vector<double> pbar(C, 0.0);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c) pbar[c] += p.at2(b, c);
  for (double& x : pbar) x = std::max(x / static_cast<double>(N), 1e-12);
  const double prior = 1.0 / static_cast<double>(C);
  for (std::size_t c = 0; c < C; ++c) r.lreg += prior * std::log(prior / pbar[c]);
  if (lambda_r != 0.0) {
    std::vector<double> u(C);
    for (std::size_t c = 0; c < C; ++c)
      u[c] = -prior / pbar[c] / static_cast<double>(N);
    for (std::size_t b = 0; b < N; ++b) {
      const double* pb = p.v.data() + b * C;
      double* db = dlogits.v.data() + b * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += u[c] * pb[c];
      for (std::size_t c = 0; c < C; ++c) db[c] += lambda_r * pb[c] * (u[c] - dot);
    }
  }

  r.total = r.lx + lambda_u * r.lu + lambda_r * r.lreg;
  r.grads = backward(net, cache, dlogits);
  return r;
}

MixmatchResult mixmatch_losses(const Network& net, const MixmatchInput& input, double alpha,
                               double lambda_u, double lambda_r, Rng& rng, bool use_max_lambda,
                               const double* forced_lambda) {
  MixedBatch mb = build_mixmatch_batch(input, alpha, rng, use_max_lambda, forced_lambda);
  return mixmatch_eval(net, mb, lambda_u, lambda_r);
}

// ---- Warm-up ---------------------------------------------------------------

void warmup(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
            const WarmupOptions& options, int epochs) {
  const NormStats stats = NormStats::of(ds);
  double p_strong = options.p_strong;
  if (p_strong < 0.0) p_strong = options.variant == WarmupVariant::saw ? 1.0 : 0.0;
  if (p_strong > 1.0) throw ConfigError("p_strong must be in [0,1]");

  for (int e = 0; e < epochs; ++e) {
    const auto batches =
        make_batches(ds.size(), settings.batch_size, ctx.epoch, ctx.run_seed);
    for (std::size_t k = 0; k < ctx.nets.size(); ++k) {
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const std::vector<int>& idx = batches[bi];
        const bool strong =
            Rng::keyed({ctx.run_seed, rngkey::kWarmupCoin, k, static_cast<std::uint64_t>(ctx.epoch),
                        bi})
                .bernoulli(p_strong);
        std::vector<Image> views;
        views.reserve(idx.size());
        for (int i : idx) {
          Rng vr = Rng::keyed({ctx.run_seed, rngkey::kWarmupView, k,
                               static_cast<std::uint64_t>(ctx.epoch),
                               static_cast<std::uint64_t>(i)});
          views.push_back(strong ? strong_view(ds.images[i], stats, options.rand, vr)
                                 : weak_view(ds.images[i], stats, vr));
        }
        Tensor batch = to_batch(views);
        Activations cache = forward_cached(ctx.nets[k], batch);
        XentResult xe = softmax_xent(cache.logits(), one_hot_targets(ds, idx));
        Tensor dlogits = xe.dlogits;
        if (options.conf_penalty) {
          PenaltyResult pen = confidence_penalty(cache.logits());
          for (std::size_t j = 0; j < dlogits.v.size(); ++j)
            dlogits.v[j] += pen.dlogits.v[j];
        }
        Gradients grads = backward(ctx.nets[k], cache, dlogits);
        if (ctx.audit) ctx.audit->on_update(ViewRole::both);
        apply_sgd(ctx, static_cast<int>(k), settings, grads);
      }
    }
    ++ctx.epoch;
  }
}

// ---- DivideMix -------------------------------------------------------------

namespace {

struct DmViews {
  std::vector<Image> analysis;  // M prediction-averaging views
  Image descent;
  ViewRole analysis_role = ViewRole::analysis;
  ViewRole descent_role = ViewRole::descent;
};

DmViews dividemix_views(const Image& img, const AugStrategy& strat, const NormStats& stats,
                        const RandAugmentConfig& rand, int m, Rng& rng) {
  DmViews v;
  switch (strat.variant) {
    case AugVariant::raw:
    case AugVariant::expansion_w:
    case AugVariant::expansion_s: {
      Image plain = normalize_only(img, stats);
      v.analysis.assign(m, plain);
      v.descent = std::move(plain);
      v.analysis_role = v.descent_role = ViewRole::both;
      return v;
    }
    case AugVariant::runtime_w:
    case AugVariant::runtime_s: {
      const bool strong = strat.variant == AugVariant::runtime_s;
      for (int i = 0; i < m; ++i) {
        Rng sub = rng.child();
        v.analysis.push_back(strong ? strong_view(img, stats, rand, sub)
                                    : weak_view(img, stats, sub));
      }
      // The descent view is the first analysis view: one augmentation serves
      // both roles.
      v.descent = v.analysis.front();
      v.analysis_role = v.descent_role = ViewRole::both;
      return v;
    }
    case AugVariant::augdesc_ww:
    case AugVariant::augdesc_ss:
    case AugVariant::augdesc_ws: {
      const bool analysis_strong = strat.variant == AugVariant::augdesc_ss;
      const bool descent_strong = strat.variant != AugVariant::augdesc_ww;
      for (int i = 0; i < m; ++i) {
        Rng sub = rng.child();
        v.analysis.push_back(analysis_strong ? strong_view(img, stats, rand, sub)
                                             : weak_view(img, stats, sub));
      }
      Rng sub = rng.child();
      v.descent = descent_strong ? strong_view(img, stats, rand, sub)
                                 : weak_view(img, stats, sub);
      return v;
    }
  }
  throw ConfigError("unknown augmentation strategy");
}

}  // namespace

std::vector<int> dividemix_fallback_labeled(const std::vector<double>& w) {
  std::vector<int> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });
  const std::size_t keep = (w.size() + 1) / 2;
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

void dividemix_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                     const DivideMixConfig& cfg) {
  if (ctx.nets.size() != 2) throw ConfigError("dividemix needs two networks");
  const NormStats stats = NormStats::of(ds);
  const std::size_t n = ds.size();
  const std::uint64_t seed = ctx.run_seed;
  const std::uint64_t ep = static_cast<std::uint64_t>(ctx.epoch);

  // Co-divide: model each network's per-sample loss with the peer's GMM.
  std::vector<std::vector<double>> peer_losses(2);
  for (int k = 0; k < 2; ++k)
    peer_losses[k] = eval_per_sample_losses(ctx.nets[k], ds, 128, ctx.audit);
  for (int k = 0; k < 2; ++k) {
    const std::vector<double> norm = normalize_losses(peer_losses[1 - k]);
    GmmFit2 fit = fit_gmm2(norm, cfg.gmm_max_iter, cfg.gmm_tol);
    ctx.clean_prob[k] = gmm_posterior(fit, norm);
  }

  const double ramp =
      cfg.lambda_u_ramp_epochs > 0
          ? std::clamp(static_cast<double>(ctx.epoch - cfg.warm_up) /
                           static_cast<double>(cfg.lambda_u_ramp_epochs),
                       0.0, 1.0)
          : 1.0;
  const double lambda_u = cfg.lambda_u * ramp;

  const bool debug = std::getenv("NLAB_DEBUG") != nullptr;
  for (int k = 0; k < 2; ++k) {
    SplitResult split = co_divide(ctx.clean_prob[k], cfg.tau);
    if (debug) {
      double wsum = 0.0;
      for (double w : ctx.clean_prob[k]) wsum += w;
      std::fprintf(stderr, "[dm] epoch %d net %d labeled %zu/%zu mean_w %.3f lambda_u %.2f\n",
                   ctx.epoch, k, split.labeled.size(), n, wsum / n, lambda_u);
    }
    if (split.labeled.empty()) {
      // Degenerate GMM split: fall back to the top half by clean probability.
      split.labeled = dividemix_fallback_labeled(ctx.clean_prob[k]);
      split.labeled_w.clear();
      std::vector<std::uint8_t> is_labeled(n, 0);
      for (int i : split.labeled) {
        split.labeled_w.push_back(ctx.clean_prob[k][i]);
        is_labeled[i] = 1;
      }
      split.unlabeled.clear();
      for (std::size_t i = 0; i < n; ++i)
        if (!is_labeled[i]) split.unlabeled.push_back(static_cast<int>(i));
    }

    std::vector<std::size_t> lab_order(split.labeled.size());
    std::iota(lab_order.begin(), lab_order.end(), 0);
    Rng lab_rng = Rng::keyed({seed, rngkey::kDividemix, ep, static_cast<std::uint64_t>(k), 0xA});
    lab_rng.shuffle(lab_order);
    std::vector<std::size_t> unl_order(split.unlabeled.size());
    std::iota(unl_order.begin(), unl_order.end(), 0);
    Rng unl_rng = Rng::keyed({seed, rngkey::kDividemix, ep, static_cast<std::uint64_t>(k), 0xB});
    unl_rng.shuffle(unl_order);

    const std::size_t B = static_cast<std::size_t>(settings.batch_size);
    const std::size_t iters = (split.labeled.size() + B - 1) / B;
    std::size_t unl_cursor = 0;

    for (std::size_t it = 0; it < iters; ++it) {
      const std::size_t lo = it * B;
      const std::size_t hi = std::min(split.labeled.size(), lo + B);
      const std::size_t bsz = hi - lo;

      std::vector<int> lab_idx(bsz);
      std::vector<double> lab_w(bsz);
      for (std::size_t j = 0; j < bsz; ++j) {
        lab_idx[j] = split.labeled[lab_order[lo + j]];
        lab_w[j] = split.labeled_w[lab_order[lo + j]];
      }
      std::vector<int> unl_idx;
      if (!split.unlabeled.empty()) {
        unl_idx.resize(bsz);
        for (std::size_t j = 0; j < bsz; ++j) {
          unl_idx[j] = split.unlabeled[unl_order[unl_cursor % unl_order.size()]];
          ++unl_cursor;
        }
      }

      // Per-sample views; slot indexes the concatenated (labeled, unlabeled)
      // batch so every stream is independent of evaluation order.
      std::vector<DmViews> lab_views(bsz);
      std::vector<DmViews> unl_views(unl_idx.size());
      for (std::size_t j = 0; j < bsz; ++j) {
        Rng vr = Rng::keyed({seed, rngkey::kDividemix, ep, static_cast<std::uint64_t>(k), 0xC,
                             static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(j)});
        lab_views[j] =
            dividemix_views(ds.images[lab_idx[j]], cfg.strategy, stats, cfg.rand,
                            cfg.m_augmentations, vr);
      }
      for (std::size_t j = 0; j < unl_idx.size(); ++j) {
        Rng vr = Rng::keyed({seed, rngkey::kDividemix, ep, static_cast<std::uint64_t>(k), 0xC,
                             static_cast<std::uint64_t>(it),
                             static_cast<std::uint64_t>(bsz + j)});
        unl_views[j] =
            dividemix_views(ds.images[unl_idx[j]], cfg.strategy, stats, cfg.rand,
                            cfg.m_augmentations, vr);
      }

      // Label refinement from the M analysis views of the training network.
      std::vector<Tensor> lab_view_batches;
      for (int m = 0; m < cfg.m_augmentations; ++m) {
        std::vector<Image> vs;
        vs.reserve(bsz);
        for (std::size_t j = 0; j < bsz; ++j) vs.push_back(lab_views[j].analysis[m]);
        lab_view_batches.push_back(to_batch(vs));
      }
      if (ctx.audit) ctx.audit->on_pseudo_label(lab_views.empty() ? ViewRole::analysis
                                                                  : lab_views[0].analysis_role);
      std::vector<ProbVector> p_avg = avg_softmax(ctx.nets[k], lab_view_batches);

      MixmatchInput mm;
      mm.labeled_x.reserve(bsz);
      mm.labeled_y.reserve(bsz);
      for (std::size_t j = 0; j < bsz; ++j) {
        const ProbVector y = one_hot(ds.given_labels[lab_idx[j]], ds.num_classes);
        mm.labeled_x.push_back(lab_views[j].descent);
        mm.labeled_y.push_back(sharpen(refine_label(y, p_avg[j], lab_w[j]), cfg.sharpen_t));
      }

      // Co-guessing for the unlabeled batch uses both networks.
      if (!unl_idx.empty()) {
        std::vector<Tensor> unl_view_batches;
        for (int m = 0; m < cfg.m_augmentations; ++m) {
          std::vector<Image> vs;
          vs.reserve(unl_idx.size());
          for (std::size_t j = 0; j < unl_idx.size(); ++j)
            vs.push_back(unl_views[j].analysis[m]);
          unl_view_batches.push_back(to_batch(vs));
        }
        if (ctx.audit) ctx.audit->on_pseudo_label(unl_views[0].analysis_role);
        std::vector<ProbVector> q_bar =
            co_guess(ctx.nets[0], ctx.nets[1], unl_view_batches);
        for (std::size_t j = 0; j < unl_idx.size(); ++j) {
          mm.unlabeled_x.push_back(unl_views[j].descent);
          mm.unlabeled_q.push_back(sharpen(q_bar[j], cfg.sharpen_t));
        }
      }

      Rng mix_rng = Rng::keyed({seed, rngkey::kMix, ep, static_cast<std::uint64_t>(k),
                                static_cast<std::uint64_t>(it)});
      if (ctx.audit) {
        ctx.audit->on_update(lab_views.empty() ? ViewRole::descent : lab_views[0].descent_role);
      }
      MixmatchResult res = mixmatch_losses(ctx.nets[k], mm, cfg.alpha, lambda_u, cfg.lambda_r,
                                           mix_rng, cfg.use_max_lambda);
      apply_sgd(ctx, k, settings, res.grads);
    }
  }
  ++ctx.epoch;
}

// ---- Co-teaching+ ----------------------------------------------------------

std::vector<std::size_t> small_loss_selection(const std::vector<double>& losses,
                                              const std::vector<std::size_t>& pool,
                                              double keep_fraction) {
  std::vector<std::size_t> order = pool;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  const std::size_t cnt = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(pool.size())));
  order.resize(std::min(std::max<std::size_t>(cnt, 1), pool.size()));
  return order;
}

void coteaching_plus_epoch(EpochContext& ctx, const NoisyDataset& ds,
                           const TrainSettings& settings, const CoTeachPlusConfig& cfg) {
  if (ctx.nets.size() != 2) throw ConfigError("co-teaching+ needs two networks");
  const NormStats stats = NormStats::of(ds);
  const std::uint64_t seed = ctx.run_seed;
  const std::uint64_t ep = static_cast<std::uint64_t>(ctx.epoch);
  const int sched_epoch = std::max(ctx.epoch - cfg.first_epoch, 0);
  const double keep = r_schedule(sched_epoch, cfg.tk, cfg.forget_rate);

  const auto batches = make_batches(ds.size(), settings.batch_size, ctx.epoch, seed);
  for (std::size_t it = 0; it < batches.size(); ++it) {
    const std::vector<int>& idx = batches[it];
    // One weak view per sample serves prediction, selection and (in the
    // disagreement branch) the update itself.
    std::vector<Image> views;
    views.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      Rng vr = Rng::keyed({seed, rngkey::kCoteach, ep, static_cast<std::uint64_t>(it), 0,
                           static_cast<std::uint64_t>(j)});
      views.push_back(weak_view(ds.images[idx[j]], stats, vr));
    }
    Tensor batch = to_batch(views);
    const std::vector<ProbVector> targets = one_hot_targets(ds, idx);

    if (ctx.audit) ctx.audit->on_loss_model(ViewRole::both);
    Tensor logits1 = forward(ctx.nets[0], batch);
    Tensor logits2 = forward(ctx.nets[1], batch);
    XentResult xe1 = softmax_xent(logits1, targets);
    XentResult xe2 = softmax_xent(logits2, targets);

    std::vector<std::size_t> disagree;
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (argmax_row(logits1, j) != argmax_row(logits2, j)) disagree.push_back(j);

    // Both selections are made before either network steps.
    std::vector<std::size_t> pool;
    bool use_descent_views = false;
    if (!disagree.empty()) {
      pool = disagree;
    } else {
      pool.resize(idx.size());
      std::iota(pool.begin(), pool.end(), 0);
      use_descent_views = cfg.descent != CoTeachPlusConfig::Descent::none;
    }
    const std::vector<std::size_t> sel1 = small_loss_selection(xe1.per_sample, pool, keep);
    const std::vector<std::size_t> sel2 = small_loss_selection(xe2.per_sample, pool, keep);

    // Each network updates on the samples its peer selected.
    for (int k = 0; k < 2; ++k) {
      const std::vector<std::size_t>& sel = k == 0 ? sel2 : sel1;
      std::vector<Image> update_views;
      update_views.reserve(sel.size());
      std::vector<ProbVector> update_targets;
      update_targets.reserve(sel.size());
      for (std::size_t pos = 0; pos < sel.size(); ++pos) {
        const std::size_t j = sel[pos];
        if (use_descent_views) {
          Rng vr = Rng::keyed({seed, rngkey::kCoteach, ep, static_cast<std::uint64_t>(it),
                               static_cast<std::uint64_t>(1 + k),
                               static_cast<std::uint64_t>(j)});
          update_views.push_back(cfg.descent == CoTeachPlusConfig::Descent::strong
                                     ? strong_view(ds.images[idx[j]], stats, cfg.rand, vr)
                                     : weak_view(ds.images[idx[j]], stats, vr));
        } else {
          update_views.push_back(views[j]);
        }
        update_targets.push_back(targets[j]);
      }
      Tensor ub = to_batch(update_views);
      Activations cache = forward_cached(ctx.nets[k], ub);
      XentResult xe = softmax_xent(cache.logits(), update_targets);
      Gradients grads = backward(ctx.nets[k], cache, xe.dlogits);
      if (ctx.audit) ctx.audit->on_update(use_descent_views ? ViewRole::descent : ViewRole::both);
      apply_sgd(ctx, k, settings, grads);
    }
  }
  ++ctx.epoch;
}

// ---- Mixture-weighted bootstrapping ----------------------------------------

MdyrhBatch build_mdyrh_batch(const std::vector<Image>& descent_views,
                             const std::vector<ProbVector>& y,
                             const std::vector<ProbVector>& z, const std::vector<double>& w,
                             double alpha, Rng& rng, const double* forced_lambda) {
  const std::size_t B = descent_views.size();
  if (y.size() != B || z.size() != B || w.size() != B)
    throw ConfigError("mdyrh batch sizes disagree");
  if (B == 0) throw ConfigError("empty mdyrh batch");

  const double lambda = forced_lambda ? *forced_lambda : rng.beta(alpha, alpha);
  std::vector<std::size_t> perm(B);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  MdyrhBatch mb;
  mb.lambda = lambda;
  const Image& first = descent_views.front();
  mb.x = Tensor::zeros({B, static_cast<std::size_t>(first.channels),
                        static_cast<std::size_t>(first.height),
                        static_cast<std::size_t>(first.width)});
  const std::size_t stride = first.px.size();
  for (std::size_t i = 0; i < B; ++i) {
    const Image& a = descent_views[i];
    const Image& b = descent_views[perm[i]];
    double* out = mb.x.v.data() + i * stride;
    for (std::size_t j = 0; j < stride; ++j)
      out[j] = lambda * a.px[j] + (1.0 - lambda) * b.px[j];
  }
  mb.y1 = y;
  mb.z1 = z;
  mb.w1 = w;
  mb.y2.resize(B);
  mb.z2.resize(B);
  mb.w2.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    mb.y2[i] = y[perm[i]];
    mb.z2[i] = z[perm[i]];
    mb.w2[i] = w[perm[i]];
  }
  return mb;
}

MdyrhLoss mdyrh_eval(const Network& net, const MdyrhBatch& batch, double lambda_r) {
  const std::size_t B = batch.x.dim(0);
  Activations cache = forward_cached(net, batch.x);
  const Tensor& logits = cache.logits();
  if (!logits.all_finite()) throw NumericError("non-finite logits in mdyrh loss");
  Tensor p = softmax_rows(logits);
  const std::size_t C = p.dim(1);
  const double lambda = batch.lambda;

  MdyrhLoss r;
  Tensor dlogits = Tensor::zeros({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    const double* pb = p.v.data() + b * C;
    double* db = dlogits.v.data() + b * C;
    const double w1 = batch.w1[b], w2 = batch.w2[b];
    for (std::size_t c = 0; c < C; ++c) {
      const double lp = std::log(std::max(pb[c], 1e-12));
      r.l1 -= (1.0 - w1) * batch.y1[b][c] * lp;
      r.l2 -= w1 * batch.z1[b][c] * lp;
      r.l3 -= (1.0 - w2) * batch.y2[b][c] * lp;
      r.l4 -= w2 * batch.z2[b][c] * lp;
      // Combined effective target; the four coefficient groups sum to one.
      const double t_eff = lambda * ((1.0 - w1) * batch.y1[b][c] + w1 * batch.z1[b][c]) +
                           (1.0 - lambda) * ((1.0 - w2) * batch.y2[b][c] + w2 * batch.z2[b][c]);
      db[c] = (pb[c] - t_eff) / static_cast<double>(B);
    }
  }
  r.l1 /= static_cast<double>(B);
  r.l2 /= static_cast<double>(B);
  r.l3 /= static_cast<double>(B);
  r.l4 /= static_cast<double>(B);

  std::vector<double> pbar(C, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) pbar[c] += p.at2(b, c);
  for (double& x : pbar) x = std::max(x / static_cast<double>(B), 1e-12);
  const double prior = 1.0 / static_cast<double>(C);
  for (std::size_t c = 0; c < C; ++c) r.lreg += prior * std::log(prior / pbar[c]);
  if (lambda_r != 0.0) {
    std::vector<double> u(C);
    for (std::size_t c = 0; c < C; ++c)
      u[c] = -prior / pbar[c] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const double* pb = p.v.data() + b * C;
      double* db = dlogits.v.data() + b * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += u[c] * pb[c];
      for (std::size_t c = 0; c < C; ++c) db[c] += lambda_r * pb[c] * (u[c] - dot);
    }
  }

  r.total = lambda * (r.l1 + r.l2) + (1.0 - lambda) * (r.l3 + r.l4) + lambda_r * r.lreg;
  r.grads = backward(net, cache, dlogits);
  return r;
}

void mdyrh_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                 const MdyrhConfig& cfg) {
  if (ctx.nets.size() != 1) throw ConfigError("mdyrh uses a single network");
  const NormStats stats = NormStats::of(ds);
  const std::uint64_t seed = ctx.run_seed;
  const std::uint64_t ep = static_cast<std::uint64_t>(ctx.epoch);

  // Fit the Beta mixture to the current per-sample losses; w is the
  // posterior of the high-loss (noisy) component and weights how much each
  // sample trusts the network's own prediction instead of its given label.
  const std::vector<double> losses = eval_per_sample_losses(ctx.nets[0], ds, 128, ctx.audit);
  const std::vector<double> norm = normalize_losses(losses);
  BmmFit2 fit = fit_bmm2(norm, cfg.bmm_max_iter, cfg.bmm_tol);
  const std::vector<double> clean = bmm_posterior(fit, norm);
  std::vector<double> w_noisy(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) w_noisy[i] = 1.0 - clean[i];
  ctx.clean_prob[0] = clean;

  const auto batches = make_batches(ds.size(), settings.batch_size, ctx.epoch, seed);
  for (std::size_t it = 0; it < batches.size(); ++it) {
    const std::vector<int>& idx = batches[it];
    std::vector<Image> weak_views;
    weak_views.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      Rng vr = Rng::keyed({seed, rngkey::kMdyrh, ep, static_cast<std::uint64_t>(it), 0,
                           static_cast<std::uint64_t>(j)});
      weak_views.push_back(weak_view(ds.images[idx[j]], stats, vr));
    }

    // Predictions on the weak views; hard bootstrapping targets.
    if (ctx.audit)
      ctx.audit->on_pseudo_label(cfg.descent == MdyrhConfig::Descent::weak ? ViewRole::both
                                                                           : ViewRole::analysis);
    Tensor pred = softmax_rows(forward(ctx.nets[0], to_batch(weak_views)));
    std::vector<ProbVector> z(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j)
      z[j] = one_hot(argmax_row(pred, j), ds.num_classes);

    std::vector<ProbVector> y = one_hot_targets(ds, idx);
    std::vector<double> w(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) w[j] = w_noisy[idx[j]];

    // Descent views: the weak views themselves (baseline) or fresh strong
    // views (augmented descent).
    std::vector<Image> descent_views;
    if (cfg.descent == MdyrhConfig::Descent::weak) {
      descent_views = weak_views;
    } else {
      descent_views.reserve(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) {
        Rng vr = Rng::keyed({seed, rngkey::kMdyrh, ep, static_cast<std::uint64_t>(it), 1,
                             static_cast<std::uint64_t>(j)});
        descent_views.push_back(strong_view(ds.images[idx[j]], stats, cfg.rand, vr));
      }
    }

    Rng mix_rng = Rng::keyed({seed, rngkey::kMdyrh, ep, static_cast<std::uint64_t>(it), 2});
    MdyrhBatch mb = build_mdyrh_batch(descent_views, y, z, w, cfg.alpha, mix_rng, nullptr);
    if (ctx.audit)
      ctx.audit->on_update(cfg.descent == MdyrhConfig::Descent::weak ? ViewRole::both
                                                                     : ViewRole::descent);
    MdyrhLoss loss = mdyrh_eval(ctx.nets[0], mb, cfg.lambda_r);
    apply_sgd(ctx, 0, settings, loss.grads);
  }
  ++ctx.epoch;
}

// ---- Cross-entropy baseline -------------------------------------------------

void ce_baseline_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                       const RuntimePolicy& policy) {
  if (ctx.nets.empty()) throw ConfigError("context has no network");
  const NormStats stats = NormStats::of(ds);
  const std::uint64_t seed = ctx.run_seed;
  const std::uint64_t ep = static_cast<std::uint64_t>(ctx.epoch);

  const auto batches = make_batches(ds.size(), settings.batch_size, ctx.epoch, seed);
  for (const std::vector<int>& idx : batches) {
    std::vector<Image> views;
    views.reserve(idx.size());
    for (int i : idx) {
      Rng vr = Rng::keyed({seed, rngkey::kCeView, ep, static_cast<std::uint64_t>(i)});
      views.push_back(policy_view(ds.images[i], policy, stats, vr));
    }
    Tensor batch = to_batch(views);
    Activations cache = forward_cached(ctx.nets[0], batch);
    XentResult xe = softmax_xent(cache.logits(), one_hot_targets(ds, idx));
    Gradients grads = backward(ctx.nets[0], cache, xe.dlogits);
    if (ctx.audit) ctx.audit->on_update(ViewRole::both);
    apply_sgd(ctx, 0, settings, grads);
  }
  ++ctx.epoch;
}

// ---- Shared evaluation helpers ------------------------------------------

std::vector<double> eval_per_sample_losses(const Network& net, const NoisyDataset& ds,
                                           int batch_size, ViewAudit* audit) {
  const NormStats stats = NormStats::of(ds);
  std::vector<double> losses(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    std::vector<Image> views;
    views.reserve(end - start);
    std::vector<ProbVector> targets;
    targets.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      views.push_back(normalize_only(ds.images[i], stats));
      targets.push_back(one_hot(ds.given_labels[i], ds.num_classes));
    }
    if (audit) audit->on_loss_model(ViewRole::analysis);
    XentResult xe = softmax_xent(forward(net, to_batch(views)), targets);
    for (std::size_t i = start; i < end; ++i) losses[i] = xe.per_sample[i - start];
  }
  return losses;
}

double test_accuracy(const std::vector<Network>& nets, const NoisyDataset& test,
                     int batch_size) {
  if (nets.empty()) throw ConfigError("no networks to evaluate");
  const NormStats stats = NormStats::of(test);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t end = std::min(test.size(), start + batch_size);
    std::vector<Image> views;
    views.reserve(end - start);
    for (std::size_t i = start; i < end; ++i)
      views.push_back(normalize_only(test.images[i], stats));
    const Tensor batch = to_batch(views);
    Tensor ensemble;
    for (const Network& net : nets) {
      Tensor p = softmax_rows(forward(net, batch));
      if (ensemble.v.empty()) {
        ensemble = std::move(p);
      } else {
        for (std::size_t j = 0; j < ensemble.v.size(); ++j) ensemble.v[j] += p.v[j];
      }
    }
    for (std::size_t i = start; i < end; ++i)
      if (argmax_row(ensemble, i - start) == test.true_labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace nlab
