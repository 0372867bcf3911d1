#include "nlab/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "nlab/errors.hpp"

namespace nlab {

namespace {

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Nearest-neighbor sample with edge padding.
inline double sample_nn(const Image& img, int c, double y, double x) {
  const int yi = clampi(static_cast<int>(std::lround(y)), 0, img.height - 1);
  const int xi = clampi(static_cast<int>(std::lround(x)), 0, img.width - 1);
  return img.at(c, yi, xi);
}

// Inverse-maps each output pixel through the affine (about the image
// center): out(y,x) = in(inverse * (y,x)).
Image affine_nn(const Image& img, double a, double b, double c, double d, double ty,
                double tx) {
  Image out(img.height, img.width, img.channels);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double ry = y - cy - ty;
        const double rx = x - cx - tx;
        const double sy = a * ry + b * rx + cy;
        const double sx = c * ry + d * rx + cx;
        out.at(ch, y, x) = sample_nn(img, ch, sy, sx);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

// Pad by `pad` with reflection, then crop at (offy, offx); offsets of `pad`
// reproduce the original image.
Image pad_reflect_crop(const Image& img, int pad, int offy, int offx) {
  Image out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        int sy = y + offy - pad;
        int sx = x + offx - pad;
        if (sy < 0) sy = -sy;
        if (sy >= img.height) sy = 2 * img.height - 2 - sy;
        if (sx < 0) sx = -sx;
        if (sx >= img.width) sx = 2 * img.width - 2 - sx;
        out.at(c, y, x) = img.at(c, clampi(sy, 0, img.height - 1), clampi(sx, 0, img.width - 1));
      }
    }
  }
  return out;
}

Image enhance(const Image& img, const Image& degenerate, double factor) {
  if (factor == 1.0) return img;  // exact identity, no rounding residue
  Image out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.px.size(); ++i)
    out.px[i] = clamp01(degenerate.px[i] + factor * (img.px[i] - degenerate.px[i]));
  return out;
}

Image gray_image(const Image& img) {
  // Degenerate image for contrast: the global mean intensity.
  double mean = 0.0;
  for (double p : img.px) mean += p;
  mean /= static_cast<double>(img.px.size());
  Image out(img.height, img.width, img.channels);
  std::fill(out.px.begin(), out.px.end(), mean);
  return out;
}

Image smooth_image(const Image& img) {
  // 3x3 kernel (1 1 1 / 1 5 1 / 1 1 1)/13 on the interior; border kept.
  Image out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 1; y + 1 < img.height; ++y) {
      for (int x = 1; x + 1 < img.width; ++x) {
        double acc = 5.0 * img.at(c, y, x);
        acc += img.at(c, y - 1, x - 1) + img.at(c, y - 1, x) + img.at(c, y - 1, x + 1);
        acc += img.at(c, y, x - 1) + img.at(c, y, x + 1);
        acc += img.at(c, y + 1, x - 1) + img.at(c, y + 1, x) + img.at(c, y + 1, x + 1);
        out.at(c, y, x) = acc / 13.0;
      }
    }
  }
  return out;
}

Image autocontrast_image(const Image& img) {
  Image out = img;
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    const double* p = img.px.data() + c * hw;
    double lo = p[0], hi = p[0];
    for (std::size_t i = 1; i < hw; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    double* q = out.px.data() + c * hw;
    if (hi - lo > 1e-9) {
      for (std::size_t i = 0; i < hw; ++i) q[i] = clamp01((p[i] - lo) / (hi - lo));
    }
  }
  return out;
}

Image equalize_image(const Image& img) {
  // Per-channel histogram equalization over 256 quantized bins.
  Image out = img;
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    const double* p = img.px.data() + c * hw;
    std::array<int, 256> hist{};
    for (std::size_t i = 0; i < hw; ++i) {
      const int bin = clampi(static_cast<int>(p[i] * 255.0), 0, 255);
      ++hist[bin];
    }
    std::array<double, 256> cdf{};
    int cum = 0;
    int cdf_min = 0;
    bool seen = false;
    for (int b = 0; b < 256; ++b) {
      cum += hist[b];
      cdf[b] = cum;
      if (!seen && hist[b] > 0) {
        cdf_min = hist[b];
        seen = true;
      }
    }
    const double denom = static_cast<double>(hw) - cdf_min;
    double* q = out.px.data() + c * hw;
    if (denom <= 0.0) continue;  // uniform channel stays as-is
    for (std::size_t i = 0; i < hw; ++i) {
      const int bin = clampi(static_cast<int>(p[i] * 255.0), 0, 255);
      q[i] = clamp01((cdf[bin] - cdf_min) / denom);
    }
  }
  return out;
}

Image posterize_image(const Image& img, int bits) {
  bits = clampi(bits, 1, 8);
  const double levels = static_cast<double>((1 << bits) - 1);
  Image out = img;
  for (double& p : out.px) p = std::round(p * levels) / levels;
  return out;
}

Image solarize_image(const Image& img, double threshold) {
  if (threshold >= 1.0) return img;
  Image out = img;
  for (double& p : out.px)
    if (p >= threshold) p = 1.0 - p;
  return out;
}

}  // namespace

Image apply_op(const Image& img, const AugOp& op, Rng& rng) {
  switch (op.kind) {
    case AugKind::identity:
      return img;
    case AugKind::flip_h:
      return flip_horizontal(img);
    case AugKind::crop_pad: {
      const int pad = 2;
      const int k = clampi(static_cast<int>(std::lround(op.magnitude)), 0, pad);
      const int offy = pad + (k > 0 ? rng.uniform_int(2 * k + 1) - k : 0);
      const int offx = pad + (k > 0 ? rng.uniform_int(2 * k + 1) - k : 0);
      return pad_reflect_crop(img, pad, offy, offx);
    }
    case AugKind::rotate: {
      const double a = op.magnitude * M_PI / 180.0;
      // Inverse rotation matrix maps output coords back to the source.
      return affine_nn(img, std::cos(a), std::sin(a), -std::sin(a), std::cos(a), 0.0, 0.0);
    }
    case AugKind::shear_x:
      // x' = x + m*y in the forward direction; invert by subtracting.
      return affine_nn(img, 1.0, 0.0, -op.magnitude, 1.0, 0.0, 0.0);
    case AugKind::shear_y:
      return affine_nn(img, 1.0, -op.magnitude, 0.0, 1.0, 0.0, 0.0);
    case AugKind::translate_x:
      return affine_nn(img, 1.0, 0.0, 0.0, 1.0, 0.0, op.magnitude);
    case AugKind::translate_y:
      return affine_nn(img, 1.0, 0.0, 0.0, 1.0, op.magnitude, 0.0);
    case AugKind::invert: {
      Image out = img;
      for (double& p : out.px) p = 1.0 - p;
      return out;
    }
    case AugKind::solarize:
      return solarize_image(img, op.magnitude);
    case AugKind::posterize:
      return posterize_image(img, static_cast<int>(std::lround(op.magnitude)));
    case AugKind::contrast:
      return enhance(img, gray_image(img), op.magnitude);
    case AugKind::brightness: {
      Image black(img.height, img.width, img.channels);
      return enhance(img, black, op.magnitude);
    }
    case AugKind::sharpness:
      return enhance(img, smooth_image(img), op.magnitude);
    case AugKind::autocontrast:
      return autocontrast_image(img);
    case AugKind::equalize:
      return equalize_image(img);
  }
  throw ConfigError("unknown augmentation op");
}

Image normalize_only(const Image& img, const NormStats& stats) {
  if (static_cast<int>(stats.mean.size()) < img.channels)
    throw ConfigError("normalization stats missing channels");
  Image out = img;
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    double* p = out.px.data() + c * hw;
    const double m = stats.mean[c];
    const double s = std::max(stats.stddev[c], 1e-8);
    for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
  }
  return out;
}

Image weak_prefix(const Image& img, Rng& rng) {
  const int pad = 2;
  const int offy = rng.uniform_int(2 * pad + 1);
  const int offx = rng.uniform_int(2 * pad + 1);
  Image out = pad_reflect_crop(img, pad, offy, offx);
  if (rng.bernoulli(0.5)) out = flip_horizontal(out);
  return out;
}

Image weak_view(const Image& img, const NormStats& stats, Rng& rng) {
  return normalize_only(weak_prefix(img, rng), stats);
}

Image apply_random_pool_op(const Image& img, double m, Rng& rng) {
  const double t = std::clamp(m / 10.0, 0.0, 1.0);
  const AugKind kind = static_cast<AugKind>(rng.uniform_int(kAugPoolSize));
  const auto signed_mag = [&](double full) {
    return (rng.bernoulli(0.5) ? 1.0 : -1.0) * t * full;
  };
  switch (kind) {
    case AugKind::identity:
      return img;
    case AugKind::flip_h:
    case AugKind::invert:
    case AugKind::autocontrast:
    case AugKind::equalize: {
      // Parameterless ops fire with probability t so that m=0 is the
      // identity for the whole pool.
      const bool fire = rng.bernoulli(t);
      if (!fire) return img;
      return apply_op(img, AugOp{kind, 0.0}, rng);
    }
    case AugKind::crop_pad:
      return apply_op(img, AugOp{kind, std::round(t * 2.0)}, rng);
    case AugKind::rotate:
      return apply_op(img, AugOp{kind, signed_mag(30.0)}, rng);
    case AugKind::shear_x:
    case AugKind::shear_y:
      return apply_op(img, AugOp{kind, signed_mag(0.3)}, rng);
    case AugKind::translate_x:
    case AugKind::translate_y:
      return apply_op(img, AugOp{kind, signed_mag(img.width / 3.0)}, rng);
    case AugKind::solarize:
      return apply_op(img, AugOp{kind, 1.0 - t}, rng);
    case AugKind::posterize: {
      const int bits = 8 - static_cast<int>(std::floor(t * 4.0));
      if (bits >= 8) return img;
      return apply_op(img, AugOp{kind, static_cast<double>(bits)}, rng);
    }
    case AugKind::contrast:
    case AugKind::brightness:
    case AugKind::sharpness:
      return apply_op(img, AugOp{kind, 1.0 + signed_mag(0.9)}, rng);
  }
  throw ConfigError("unknown augmentation op");
}

Image strong_view(const Image& img, const NormStats& stats, const RandAugmentConfig& cfg,
                  Rng& rng) {
  if (cfg.n < 1) throw ConfigError("RandAugment N must be >= 1");
  if (cfg.m < 0.0 || cfg.m > 10.0) throw ConfigError("RandAugment M must be in [0,10]");
  Image out = weak_prefix(img, rng);
  for (int i = 0; i < cfg.n; ++i) out = apply_random_pool_op(out, cfg.m, rng);
  return normalize_only(out, stats);
}

ViewPair strategy_views(const Image& img, const AugStrategy& strategy, const NormStats& stats,
                        const RandAugmentConfig& cfg, Rng& rng) {
  ViewPair vp;
  switch (strategy.variant) {
    case AugVariant::raw:
    case AugVariant::expansion_w:
    case AugVariant::expansion_s: {
      // Expansion datasets are augmented up-front; at view time they are fed
      // directly into the model, like Raw.
      Image v = normalize_only(img, stats);
      vp.analysis = v;
      vp.descent = std::move(v);
      vp.analysis_role = vp.descent_role = ViewRole::both;
      return vp;
    }
    case AugVariant::runtime_w:
    case AugVariant::runtime_s: {
      Rng sub = rng.child();
      Image v = strategy.variant == AugVariant::runtime_w ? weak_view(img, stats, sub)
                                                          : strong_view(img, stats, cfg, sub);
      vp.analysis = v;
      vp.descent = std::move(v);
      vp.analysis_role = vp.descent_role = ViewRole::both;
      return vp;
    }
    case AugVariant::augdesc_ww:
    case AugVariant::augdesc_ss:
    case AugVariant::augdesc_ws: {
      Rng analysis_rng = rng.child();
      Rng descent_rng = rng.child();
      const bool analysis_strong = strategy.variant == AugVariant::augdesc_ss;
      const bool descent_strong = strategy.variant != AugVariant::augdesc_ww;
      vp.analysis = analysis_strong ? strong_view(img, stats, cfg, analysis_rng)
                                    : weak_view(img, stats, analysis_rng);
      vp.descent = descent_strong ? strong_view(img, stats, cfg, descent_rng)
                                  : weak_view(img, stats, descent_rng);
      return vp;
    }
  }
  throw ConfigError("unknown augmentation strategy");
}

NoisyDataset expand(const NoisyDataset& ds, bool strong, const RandAugmentConfig& cfg,
                    std::uint64_t seed) {
  NoisyDataset out = ds;
  const NormStats stats = NormStats::of(ds);
  const std::size_t n = ds.size();
  out.images.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::keyed({seed, rngkey::kExpand, static_cast<std::uint64_t>(i)});
    // The expanded copy stays in pixel space; normalization happens at view
    // time like everywhere else. Apply prefix + pool ops without the final
    // normalize step.
    Image aug = weak_prefix(ds.images[i], rng);
    if (strong) {
      for (int k = 0; k < cfg.n; ++k) aug = apply_random_pool_op(aug, cfg.m, rng);
    }
    out.images.push_back(std::move(aug));
    out.given_labels.push_back(ds.given_labels[i]);
    out.true_labels.push_back(ds.true_labels[i]);
    out.flip_mask.push_back(ds.flip_mask[i]);
  }
  // Normalization stats deliberately stay those of the original dataset.
  return out;
}

RuntimePolicy parse_policy(const std::string& text) {
  RuntimePolicy p;
  if (text == "raw" || text.empty()) {
    p.kind = RuntimePolicy::Kind::raw;
    return p;
  }
  if (text == "weak") {
    p.kind = RuntimePolicy::Kind::weak;
    return p;
  }
  if (text.rfind("strong", 0) == 0) {
    p.kind = RuntimePolicy::Kind::strong;
    const std::size_t colon = text.find(':');
    if (colon != std::string::npos) {
      std::string args = text.substr(colon + 1);
      std::size_t pos = 0;
      while (pos < args.size()) {
        std::size_t comma = args.find(',', pos);
        if (comma == std::string::npos) comma = args.size();
        const std::string kv = args.substr(pos, comma - pos);
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("bad policy argument: " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        try {
          if (key == "N")
            p.rand.n = std::stoi(val);
          else if (key == "M")
            p.rand.m = std::stod(val);
          else
            throw ConfigError("unknown policy key: " + key);
        } catch (const std::invalid_argument&) {
          throw ConfigError("bad policy value: " + kv);
        }
        pos = comma + 1;
      }
    }
    return p;
  }
  throw ConfigError("unknown policy descriptor: " + text);
}

Image policy_view(const Image& img, const RuntimePolicy& policy, const NormStats& stats,
                  Rng& rng) {
  switch (policy.kind) {
    case RuntimePolicy::Kind::raw:
      return normalize_only(img, stats);
    case RuntimePolicy::Kind::weak:
      return weak_view(img, stats, rng);
    case RuntimePolicy::Kind::strong:
      return strong_view(img, stats, policy.rand, rng);
  }
  throw ConfigError("unknown policy kind");
}

}  // namespace nlab
