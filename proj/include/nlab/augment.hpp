#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "nlab/data.hpp"
#include "nlab/rng.hpp"

namespace nlab {

// Augmentation operation pool. Geometric ops use nearest-neighbor sampling
// with edge padding; every op preserves image dimensions and clamps pixels
// to [0,1] (normalization, when it happens, is always the last policy step).
enum class AugKind : int {
  identity = 0,
  flip_h,
  crop_pad,
  rotate,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
  invert,
  solarize,
  posterize,
  contrast,
  brightness,
  sharpness,
  autocontrast,
  equalize,
};

constexpr int kAugPoolSize = 16;

// One concrete op. The meaning of `magnitude` depends on the kind:
//   rotate: degrees; shear_*: shear coefficient; translate_*: pixels;
//   solarize: threshold in [0,1] (>=1 is the identity); posterize: bit count;
//   contrast/brightness/sharpness: enhancement factor (1 = identity);
//   crop_pad: max crop offset in pixels (0 = centred, i.e. identity);
//   identity/flip_h/invert/autocontrast/equalize ignore it.
struct AugOp {
  AugKind kind = AugKind::identity;
  double magnitude = 0.0;
};

// rng is consumed only by crop_pad (offset draws); other kinds are
// deterministic functions of (image, op).
Image apply_op(const Image& img, const AugOp& op, Rng& rng);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static NormStats of(const NoisyDataset& ds) { return NormStats{ds.mean, ds.stddev}; }
};

// (v - mean_c) / std_c; the "raw" view of an image.
Image normalize_only(const Image& img, const NormStats& stats);

// Pad 2 (reflect), random crop back, horizontal flip with p=0.5. No
// normalization; both policies share this prefix.
Image weak_prefix(const Image& img, Rng& rng);

// Weak policy: prefix + normalization.
Image weak_view(const Image& img, const NormStats& stats, Rng& rng);

struct RandAugmentConfig {
  int n = 1;       // ops per application
  double m = 6.0;  // global magnitude on the 0..10 scale
};

// Strong policy: weak prefix, then n ops drawn uniformly from the pool at
// magnitude m, then normalization. At m=0 every pool op degenerates to the
// identity, so the result matches weak_view under the same rng stream.
Image strong_view(const Image& img, const NormStats& stats, const RandAugmentConfig& cfg,
                  Rng& rng);

// Draws one pool op at global magnitude m and applies it. Exposed for tests.
Image apply_random_pool_op(const Image& img, double m, Rng& rng);

// How augmentation is wired into a training strategy (which views feed loss
// analysis and which feed gradient descent).
enum class AugVariant : int {
  raw = 0,
  expansion_w,
  expansion_s,
  runtime_w,
  runtime_s,
  augdesc_ww,
  augdesc_ss,
  augdesc_ws,
};

enum class WarmupVariant : int { waw = 0, saw = 1 };

struct AugStrategy {
  AugVariant variant = AugVariant::runtime_w;
  WarmupVariant warmup = WarmupVariant::waw;
};

// Provenance of a view, used by the training audit. `both` marks single-view
// strategies (Raw/Runtime/Expansion) where the same image serves loss
// analysis and descent.
enum class ViewRole : int { analysis = 0, descent = 1, both = 2 };

struct ViewPair {
  Image analysis;
  Image descent;
  ViewRole analysis_role = ViewRole::analysis;
  ViewRole descent_role = ViewRole::descent;
};

// The strategy layer: produces the loss-analysis view and the descent view
// for one input. Raw/Expansion return the normalized original for both
// roles; Runtime draws one augmented view and uses it for both; AugDesc
// draws the two views from independent sub-streams of rng.
ViewPair strategy_views(const Image& img, const AugStrategy& strategy, const NormStats& stats,
                        const RandAugmentConfig& cfg, Rng& rng);

// Dataset expansion: original images followed by one augmented copy of each
// (weak or strong policy, per-sample streams derived from seed). Labels and
// noise metadata are duplicated; normalization stats are kept from the
// original dataset.
NoisyDataset expand(const NoisyDataset& ds, bool strong, const RandAugmentConfig& cfg,
                    std::uint64_t seed);

// Policy descriptor strings for the CLI: "raw", "weak", "strong:N=1,M=6".
struct RuntimePolicy {
  enum class Kind { raw, weak, strong } kind = Kind::raw;
  RandAugmentConfig rand;
};

RuntimePolicy parse_policy(const std::string& text);
Image policy_view(const Image& img, const RuntimePolicy& policy, const NormStats& stats,
                  Rng& rng);

}  // namespace nlab
