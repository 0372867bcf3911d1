#pragma once

#include <cstdint>
#include <vector>

#include "nlab/augment.hpp"
#include "nlab/data.hpp"
#include "nlab/lossmodel.hpp"
#include "nlab/net.hpp"

namespace nlab {

// Training procedures: warm-up (weak/strong variants, optional confidence
// penalty), the co-divide + MixMatch loop with pluggable augmentation
// strategies, co-teaching with disagreement selection, mixture-weighted
// bootstrapping with mixup, and the plain cross-entropy baseline.

// Counts which view roles fed loss modeling, pseudo-labeling and parameter
// updates. Loss modeling and pseudo-labeling must never consume descent
// views; updates must never consume analysis views. `both` satisfies either.
struct ViewAudit {
  long loss_model_batches = 0;
  long pseudo_label_batches = 0;
  long update_batches = 0;
  long violations = 0;

  void on_loss_model(ViewRole r) {
    ++loss_model_batches;
    if (r == ViewRole::descent) ++violations;
  }
  void on_pseudo_label(ViewRole r) {
    ++pseudo_label_batches;
    if (r == ViewRole::descent) ++violations;
  }
  void on_update(ViewRole r) {
    ++update_batches;
    if (r == ViewRole::analysis) ++violations;
  }
};

struct TrainSettings {
  int batch_size = 32;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// Shared state threaded through the per-epoch training functions. `epoch` is
// the global epoch index and drives both batching and the lr schedule.
struct EpochContext {
  std::vector<Network> nets;
  std::vector<OptimizerState> opt;
  std::vector<std::vector<double>> clean_prob;  // last co-divide posteriors per net
  int epoch = 0;
  std::uint64_t run_seed = 0;
  ViewAudit* audit = nullptr;
};

EpochContext make_context(int num_nets, int num_classes, int channels, int height, int width,
                          std::uint64_t run_seed, const TrainSettings& settings, int filters = 8,
                          int hidden = 64);

// p'_c = p_c^{1/T} / sum_j p_j^{1/T}; zero entries stay zero.
ProbVector sharpen(const ProbVector& p, double temperature);

// y_bar = w*y + (1-w)*p_avg.
ProbVector refine_label(const ProbVector& y, const ProbVector& p_avg, double w);

// Averages both networks' softmax predictions over the given views:
// q_bar = 1/(2M) sum_m [p1(v_m) + p2(v_m)]. Views are (B,C,H,W) batches;
// returns one ProbVector per sample.
std::vector<ProbVector> co_guess(const Network& net1, const Network& net2,
                                 const std::vector<Tensor>& views);

// Co-teaching keep fraction R(e) = 1 - min{(e/Tk)*tau, tau}.
double r_schedule(int epoch, int tk, double tau);

// ---- MixMatch ----------------------------------------------------------

struct MixmatchInput {
  std::vector<Image> labeled_x;        // descent views, already normalized
  std::vector<ProbVector> labeled_y;   // sharpened refined labels
  std::vector<Image> unlabeled_x;      // descent views (may be empty)
  std::vector<ProbVector> unlabeled_q; // sharpened co-guesses
};

// Inputs and targets mixed convexly across the shuffled labeled+unlabeled
// pool with lambda ~ Beta(alpha, alpha) (one draw per batch) and
// lambda' = max(lambda, 1-lambda) when use_max_lambda.
struct MixedBatch {
  Tensor x;                         // (N, C, H, W), labeled rows first
  std::vector<ProbVector> targets;  // mixed targets
  std::size_t num_labeled = 0;
  double lambda = 1.0;
};

MixedBatch build_mixmatch_batch(const MixmatchInput& input, double alpha, Rng& rng,
                                bool use_max_lambda = true,
                                const double* forced_lambda = nullptr);

struct MixmatchResult {
  double lx = 0.0;    // cross-entropy on mixed labeled targets
  double lu = 0.0;    // mean squared error on mixed unlabeled targets (/C)
  double lreg = 0.0;  // uniform-prior KL on the batch-mean prediction
  double total = 0.0;
  double lambda = 1.0;
  Gradients grads;
};

// Loss and parameter gradients for a fixed mixed batch:
// L = Lx + lambda_u*Lu + lambda_r*Lreg.
MixmatchResult mixmatch_eval(const Network& net, const MixedBatch& batch, double lambda_u,
                             double lambda_r);

MixmatchResult mixmatch_losses(const Network& net, const MixmatchInput& input, double alpha,
                               double lambda_u, double lambda_r, Rng& rng,
                               bool use_max_lambda = true,
                               const double* forced_lambda = nullptr);

// ---- Warm-up -----------------------------------------------------------

struct WarmupOptions {
  WarmupVariant variant = WarmupVariant::waw;
  bool conf_penalty = false;
  // Probability that a batch is strongly augmented. Negative means "derive
  // from variant" (WAW -> 0, SAW -> 1); the explicit value drives the
  // augmentation-strength probe.
  double p_strong = -1.0;
  RandAugmentConfig rand;
};

// Standard cross-entropy training on the given labels for `epochs` epochs;
// trains every network in the context on the same batch order. Advances
// ctx.epoch.
void warmup(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
            const WarmupOptions& options, int epochs);

// ---- DivideMix ---------------------------------------------------------

struct DivideMixConfig {
  int m_augmentations = 2;  // prediction-averaging views per sample
  double sharpen_t = 0.5;
  double tau = 0.5;
  double alpha = 4.0;
  double lambda_u = 25.0;
  double lambda_r = 1.0;
  int lambda_u_ramp_epochs = 16;  // linear ramp after warm-up
  int warm_up = 10;               // first post-warm-up epoch index
  AugStrategy strategy;
  RandAugmentConfig rand;
  int gmm_max_iter = 10;
  double gmm_tol = 1e-4;
  bool use_max_lambda = true;
};

// Fallback when co_divide labels nothing: the ceil(n/2) samples with the
// highest clean probability, in index order.
std::vector<int> dividemix_fallback_labeled(const std::vector<double>& w);

// One co-divide epoch: each network's clean probabilities come from a GMM
// fit to the peer's per-sample losses; batches are refined, co-guessed,
// sharpened on analysis views and trained with MixMatch on descent views.
void dividemix_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                     const DivideMixConfig& cfg);

// ---- Co-teaching+ ------------------------------------------------------

struct CoTeachPlusConfig {
  double forget_rate = 0.5;  // tau in the R(e) schedule
  int tk = 10;
  int first_epoch = 0;  // global epoch where the schedule starts (end of warm-up)
  // Descent insertion for the agreement branch: none trains on the selection
  // views themselves; weak/strong re-augment the selected samples.
  enum class Descent { none, weak, strong } descent = Descent::strong;
  RandAugmentConfig rand;
};

// The ceil(keep_fraction * |pool|) positions of `pool` with the smallest
// per-sample losses (at least one; stable on ties).
std::vector<std::size_t> small_loss_selection(const std::vector<double>& losses,
                                              const std::vector<std::size_t>& pool,
                                              double keep_fraction);

void coteaching_plus_epoch(EpochContext& ctx, const NoisyDataset& ds,
                           const TrainSettings& settings, const CoTeachPlusConfig& cfg);

// ---- Mixture-weighted bootstrapping (single network) --------------------

struct MdyrhConfig {
  double alpha = 4.0;     // Beta parameter for mixup
  double lambda_r = 1.0;  // uniform-prior regularizer weight
  // Which views feed the mixup input. `weak` mixes the same weak views the
  // predictions came from (the baseline); `strong` draws fresh strong views
  // (the augmented-descent insertion). Predictions and the BMM always use
  // weak/plain views.
  enum class Descent { weak, strong } descent = Descent::strong;
  RandAugmentConfig rand;
  int bmm_max_iter = 10;
  double bmm_tol = 1e-4;
};

// Mixup pairing of one batch: inputs mixed with lambda ~ Beta(alpha, alpha),
// targets kept as the original/permuted pairs (y = given labels, z = the
// network's own hard predictions, w = noisy-component posterior).
struct MdyrhBatch {
  Tensor x;  // mixed inputs
  std::vector<ProbVector> y1, y2, z1, z2;
  std::vector<double> w1, w2;
  double lambda = 1.0;
};

MdyrhBatch build_mdyrh_batch(const std::vector<Image>& descent_views,
                             const std::vector<ProbVector>& y,
                             const std::vector<ProbVector>& z, const std::vector<double>& w,
                             double alpha, Rng& rng, const double* forced_lambda = nullptr);

// Four-term bootstrapping loss on a fixed mixed batch:
// L = lambda*(l1+l2) + (1-lambda)*(l3+l4) + lambda_r*Lreg with
// l1 = mean (1-w1)*CE(p, y1), l2 = mean w1*CE(p, z1) and l3/l4 the permuted
// counterparts.
struct MdyrhLoss {
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, l4 = 0.0;
  double lreg = 0.0;
  double total = 0.0;
  Gradients grads;
};

MdyrhLoss mdyrh_eval(const Network& net, const MdyrhBatch& batch, double lambda_r);

void mdyrh_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                 const MdyrhConfig& cfg);

// ---- Cross-entropy baseline ---------------------------------------------

void ce_baseline_epoch(EpochContext& ctx, const NoisyDataset& ds, const TrainSettings& settings,
                       const RuntimePolicy& policy);

// ---- Shared evaluation helpers ------------------------------------------

// Per-sample cross-entropy of the net on plain normalized views of the
// given labels (evaluation mode; no augmentation randomness).
std::vector<double> eval_per_sample_losses(const Network& net, const NoisyDataset& ds,
                                           int batch_size = 128, ViewAudit* audit = nullptr);

// Percent of test samples whose (possibly ensembled) argmax matches the true
// label; plain normalized views.
double test_accuracy(const std::vector<Network>& nets, const NoisyDataset& test,
                     int batch_size = 128);

}  // namespace nlab
