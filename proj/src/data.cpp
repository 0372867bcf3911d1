#include "nlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

void NoisyDataset::validate() const {
  if (given_labels.size() != images.size() || true_labels.size() != images.size() ||
      flip_mask.size() != images.size())
    throw ConfigError("dataset field sizes disagree");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (given_labels[i] < 0 || given_labels[i] >= num_classes ||
        true_labels[i] < 0 || true_labels[i] >= num_classes)
      throw ConfigError("label out of range");
    const bool flipped = given_labels[i] != true_labels[i];
    if (flipped != static_cast<bool>(flip_mask[i]))
      throw ConfigError("flip_mask inconsistent with labels");
  }
}

namespace {

// Shape templates on normalized coordinates u,v in [-1,1]; returns 1 inside
// the glyph. Kept as simple implicit functions so jitter can be applied by
// inverse-transforming the sample point.
double shape_intensity(int tpl, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (tpl) {
    case 0:  // plus
      return ((std::fabs(u) < 0.22 || std::fabs(v) < 0.22) && std::fabs(u) < 0.8 &&
              std::fabs(v) < 0.8)
                 ? 1.0
                 : 0.0;
    case 1:  // ring
      return (r > 0.45 && r < 0.75) ? 1.0 : 0.0;
    case 2:  // filled disk
      return r < 0.55 ? 1.0 : 0.0;
    case 3:  // square frame
      return (std::max(std::fabs(u), std::fabs(v)) > 0.45 &&
              std::max(std::fabs(u), std::fabs(v)) < 0.75)
                 ? 1.0
                 : 0.0;
    case 4:  // diagonal cross
      return (std::fabs(u - v) < 0.28 || std::fabs(u + v) < 0.28) && r < 1.05 ? 1.0 : 0.0;
    case 5: {  // filled triangle
      const double y0 = -0.55, y1 = 0.7;
      if (v < y0 || v > y1) return 0.0;
      const double half = 0.72 * (y1 - v) / (y1 - y0);
      return std::fabs(u) < half ? 1.0 : 0.0;
    }
    case 6: {  // horizontal bars
      if (std::fabs(u) > 0.8 || std::fabs(v) > 0.85) return 0.0;
      const int band = static_cast<int>(std::floor((v + 0.85) / 0.34));
      return band % 2 == 0 ? 1.0 : 0.0;
    }
    case 7: {  // vertical bars
      if (std::fabs(u) > 0.85 || std::fabs(v) > 0.8) return 0.0;
      const int band = static_cast<int>(std::floor((u + 0.85) / 0.34));
      return band % 2 == 0 ? 1.0 : 0.0;
    }
    case 8: {  // diagonal stripes
      if (r > 0.95) return 0.0;
      const int band = static_cast<int>(std::floor((u + v + 2.0) / 0.4));
      return band % 2 == 0 ? 1.0 : 0.0;
    }
    case 9: {  // checkerboard
      if (std::fabs(u) > 0.9 || std::fabs(v) > 0.9) return 0.0;
      const int cell = static_cast<int>(std::floor((u + 0.9) / 0.45)) +
                       static_cast<int>(std::floor((v + 0.9) / 0.45));
      return cell % 2 == 0 ? 1.0 : 0.0;
    }
    case 10:  // T
      return ((std::fabs(v - 0.55) < 0.18 && std::fabs(u) < 0.7) ||
              (std::fabs(u) < 0.18 && v < 0.55 && v > -0.8))
                 ? 1.0
                 : 0.0;
    case 11:  // L
      return ((std::fabs(u + 0.4) < 0.18 && std::fabs(v) < 0.72) ||
              (std::fabs(v + 0.54) < 0.18 && u > -0.58 && u < 0.62))
                 ? 1.0
                 : 0.0;
    case 12:  // U
      return ((std::fabs(std::fabs(u) - 0.5) < 0.16 && v < 0.72 && v > -0.5) ||
              (std::fabs(v + 0.52) < 0.16 && std::fabs(u) < 0.62))
                 ? 1.0
                 : 0.0;
    case 13: {  // diamond outline
      const double d = std::fabs(u) + std::fabs(v);
      return (d > 0.5 && d < 0.85) ? 1.0 : 0.0;
    }
    case 14: {  // 2x2 dot grid
      const double du = std::fabs(std::fabs(u) - 0.45);
      const double dv = std::fabs(std::fabs(v) - 0.45);
      return std::sqrt(du * du + dv * dv) < 0.26 ? 1.0 : 0.0;
    }
    case 15:  // chevron (V)
      return (std::fabs(v + 0.45 - 0.9 * std::fabs(u)) < 0.17 && std::fabs(u) < 0.75) ? 1.0
                                                                                      : 0.0;
    default:
      return 0.0;
  }
}

}  // namespace

int glyph_template_count() { return 16; }

NoisyDataset generate_glyphs(const GlyphSpec& spec, std::uint64_t seed) {
  if (spec.num_classes > glyph_template_count())
    throw ConfigError("more classes requested than shape templates available");
  if (spec.num_classes < 1) throw ConfigError("need at least one class");
  if (spec.image_size < 8) throw ConfigError("image size must be >= 8");
  if (spec.channels != 1 && spec.channels != 3)
    throw ConfigError("channels must be 1 or 3");

  NoisyDataset ds;
  ds.num_classes = spec.num_classes;
  const int n = spec.num_classes * spec.per_class;
  ds.images.reserve(n);
  ds.given_labels.reserve(n);

  const int size = spec.image_size;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int k = 0; k < spec.per_class; ++k) {
      Rng rng = Rng::keyed({seed, rngkey::kGlyphs, static_cast<std::uint64_t>(cls),
                            static_cast<std::uint64_t>(k)});
      const double angle = rng.uniform(-spec.jitter.rotate_deg, spec.jitter.rotate_deg) *
                           M_PI / 180.0;
      const double tx = rng.uniform(-spec.jitter.translate_px, spec.jitter.translate_px);
      const double ty = rng.uniform(-spec.jitter.translate_px, spec.jitter.translate_px);
      const double scale = rng.uniform(spec.jitter.scale_lo, spec.jitter.scale_hi);
      const double ca = std::cos(angle), sa = std::sin(angle);

      Image img(size, size, spec.channels);
      const double half = size / 2.0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          // 2x2 supersampling for soft edges.
          double acc = 0.0;
          for (int sy = 0; sy < 2; ++sy) {
            for (int sx = 0; sx < 2; ++sx) {
              const double px = x + 0.25 + 0.5 * sx;
              const double py = y + 0.25 + 0.5 * sy;
              // Pixel -> normalized target coords, then undo jitter.
              const double gx = (px - half - tx) / (half * 0.95);
              const double gy = (py - half - ty) / (half * 0.95);
              const double u = (ca * gx + sa * gy) / scale;
              const double v = (-sa * gx + ca * gy) / scale;
              acc += shape_intensity(cls, u, v);
            }
          }
          const double val = acc / 4.0;
          for (int c = 0; c < spec.channels; ++c) img.at(c, y, x) = val;
        }
      }
      if (spec.jitter.pixel_noise_sigma > 0.0) {
        for (double& p : img.px) {
          p = std::clamp(p + rng.normal(0.0, spec.jitter.pixel_noise_sigma), 0.0, 1.0);
        }
      }
      ds.images.push_back(std::move(img));
      ds.given_labels.push_back(cls);
    }
  }
  ds.true_labels = ds.given_labels;
  ds.flip_mask.assign(ds.images.size(), 0);
  compute_normalization(ds);
  return ds;
}

void compute_normalization(NoisyDataset& ds) {
  if (ds.images.empty()) throw ConfigError("cannot normalize an empty dataset");
  const int channels = ds.images.front().channels;
  ds.mean.assign(channels, 0.0);
  ds.stddev.assign(channels, 0.0);
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t per_channel = 0;
  for (const Image& img : ds.images) {
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (int c = 0; c < channels; ++c) {
      const double* p = img.px.data() + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum[c] += p[i];
        sq[c] += p[i] * p[i];
      }
    }
    per_channel += hw;
  }
  for (int c = 0; c < channels; ++c) {
    const double m = sum[c] / per_channel;
    ds.mean[c] = m;
    ds.stddev[c] = std::max(std::sqrt(std::max(sq[c] / per_channel - m * m, 0.0)), 1e-8);
  }
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated IDX file: " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>((v >> 24) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>(v & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

NoisyDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw IoError("cannot open IDX images: " + images_path);
  if (read_be32(fi, images_path) != kImagesMagic)
    throw FormatError("bad IDX images magic: " + images_path);
  const std::uint32_t n = read_be32(fi, images_path);
  const std::uint32_t rows = read_be32(fi, images_path);
  const std::uint32_t cols = read_be32(fi, images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw IoError("cannot open IDX labels: " + labels_path);
  if (read_be32(fl, labels_path) != kLabelsMagic)
    throw FormatError("bad IDX labels magic: " + labels_path);
  const std::uint32_t nl = read_be32(fl, labels_path);
  if (nl != n) throw FormatError("IDX image/label count mismatch");

  NoisyDataset ds;
  ds.images.reserve(n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw FormatError("truncated IDX images: " + images_path);
    Image img(static_cast<int>(rows), static_cast<int>(cols), 1);
    for (std::size_t j = 0; j < buf.size(); ++j) img.px[j] = buf[j] / 255.0;
    ds.images.push_back(std::move(img));
    char lb;
    if (!fl.read(&lb, 1)) throw FormatError("truncated IDX labels: " + labels_path);
    const int label = static_cast<unsigned char>(lb);
    ds.given_labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  ds.true_labels = ds.given_labels;
  ds.flip_mask.assign(n, 0);
  ds.num_classes = max_label + 1;
  compute_normalization(ds);
  return ds;
}

void save_idx(const NoisyDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  if (ds.images.empty()) throw ConfigError("refusing to write an empty IDX dataset");
  const int rows = ds.images.front().height;
  const int cols = ds.images.front().width;
  if (ds.images.front().channels != 1)
    throw ConfigError("IDX export supports single-channel images only");

  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  if (!fi) throw IoError("cannot write IDX images: " + images_path);
  write_be32(fi, kImagesMagic);
  write_be32(fi, static_cast<std::uint32_t>(ds.size()));
  write_be32(fi, static_cast<std::uint32_t>(rows));
  write_be32(fi, static_cast<std::uint32_t>(cols));
  for (const Image& img : ds.images) {
    for (double p : img.px) {
      const int q = std::clamp(static_cast<int>(std::lround(p * 255.0)), 0, 255);
      const unsigned char b = static_cast<unsigned char>(q);
      fi.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  if (!fi) throw IoError("failed writing IDX images: " + images_path);

  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fl) throw IoError("cannot write IDX labels: " + labels_path);
  write_be32(fl, kLabelsMagic);
  write_be32(fl, static_cast<std::uint32_t>(ds.size()));
  for (int label : ds.given_labels) {
    const unsigned char b = static_cast<unsigned char>(label);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!fl) throw IoError("failed writing IDX labels: " + labels_path);
}

NoisyDataset inject_symmetric(const NoisyDataset& ds, double rate, std::uint64_t seed,
                              bool uniform_over_all) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("noise rate must be in [0,1]");
  NoisyDataset out = ds;
  Rng rng = Rng::keyed({seed, rngkey::kNoise, 0});
  const int C = ds.num_classes;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.given_labels[i] = out.true_labels[i];
    if (rng.bernoulli(rate)) {
      if (uniform_over_all) {
        out.given_labels[i] = rng.uniform_int(C);
      } else {
        int pick = rng.uniform_int(C - 1);
        if (pick >= out.true_labels[i]) ++pick;
        out.given_labels[i] = pick;
      }
    }
    out.flip_mask[i] = out.given_labels[i] != out.true_labels[i] ? 1 : 0;
  }
  return out;
}

NoisyDataset inject_asymmetric(const NoisyDataset& ds, double rate, std::uint64_t seed,
                               const std::vector<int>* class_map) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("noise rate must be in [0,1]");
  const int C = ds.num_classes;
  std::vector<int> map;
  if (class_map) {
    map = *class_map;
    if (static_cast<int>(map.size()) != C) throw ConfigError("class_map size must equal C");
    for (int m : map)
      if (m < 0 || m >= C) throw ConfigError("class_map target out of range");
  } else {
    map.resize(C);
    for (int i = 0; i < C; ++i) map[i] = (i + 1) % C;
  }

  NoisyDataset out = ds;
  Rng rng = Rng::keyed({seed, rngkey::kNoise, 1});
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.given_labels[i] = out.true_labels[i];
    if (rng.bernoulli(rate)) out.given_labels[i] = map[out.true_labels[i]];
    out.flip_mask[i] = out.given_labels[i] != out.true_labels[i] ? 1 : 0;
  }
  return out;
}

std::vector<std::vector<int>> make_batches(std::size_t n, std::size_t batch_size, int epoch,
                                           std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::keyed({seed, rngkey::kBatches, static_cast<std::uint64_t>(epoch)});
  rng.shuffle(order);

  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

Tensor to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw ConfigError("empty image batch");
  const Image& first = images.front();
  const std::size_t c = static_cast<std::size_t>(first.channels);
  const std::size_t h = static_cast<std::size_t>(first.height);
  const std::size_t w = static_cast<std::size_t>(first.width);
  Tensor t = Tensor::zeros({images.size(), c, h, w});
  const std::size_t stride = c * h * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].px.size() != stride) throw ConfigError("ragged image batch");
    std::copy(images[i].px.begin(), images[i].px.end(), t.v.begin() + i * stride);
  }
  return t;
}

}  // namespace nlab
