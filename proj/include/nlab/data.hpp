#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlab/tensor.hpp"

namespace nlab {

// Small dense image, pixels in [0,1], channel-major (c, y, x).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> px;

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c),
        px(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), 0.0) {}

  double& at(int c, int y, int x) {
    return px[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return px[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Training examples carrying both the label the trainer sees (given) and the
// hidden truth. flip_mask[i] is true iff given != true; it exists purely for
// diagnostics and is never consulted by a training strategy.
struct NoisyDataset {
  std::vector<Image> images;
  std::vector<int> given_labels;
  std::vector<int> true_labels;
  std::vector<std::uint8_t> flip_mask;
  int num_classes = 0;
  std::vector<double> mean;    // per channel, computed from the images
  std::vector<double> stddev;  // per channel

  std::size_t size() const { return images.size(); }
  // Throws if the flip-mask consistency invariant is broken.
  void validate() const;
};

struct JitterSpec {
  double rotate_deg = 20.0;   // +- range
  double translate_px = 2.0;  // +- range
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double pixel_noise_sigma = 0.05;
};

struct GlyphSpec {
  int num_classes = 4;
  int per_class = 200;
  int image_size = 16;
  int channels = 1;
  JitterSpec jitter;
};

// Number of distinct procedural shape templates available.
int glyph_template_count();

// Renders a balanced, clean dataset of procedural glyphs (bars, crosses,
// rings, triangles, checkers, ...). Deterministic in the seed; normalization
// stats are filled in from the rendered images.
NoisyDataset generate_glyphs(const GlyphSpec& spec, std::uint64_t seed);

// IDX (big-endian, magic-numbered) files: 0x00000803 images, 0x00000801
// labels. Bytes scale to [0,1].
NoisyDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes given_labels and 8-bit-quantized pixels, so load(save(ds)) == ds at
// 8-bit precision.
void save_idx(const NoisyDataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Each sample flips with probability `rate` to a label drawn uniformly over
// all C classes (so the expected unchanged fraction is 1 - r + r/C). With
// uniform_over_all=false, the draw excludes the true class. Labels restart
// from true_labels; images and true_labels are never touched.
NoisyDataset inject_symmetric(const NoisyDataset& ds, double rate, std::uint64_t seed,
                              bool uniform_over_all = true);

// Each sample flips with probability `rate` to class_map(true label); the
// default map is i -> (i+1) mod C.
NoisyDataset inject_asymmetric(const NoisyDataset& ds, double rate, std::uint64_t seed,
                               const std::vector<int>* class_map = nullptr);

// Deterministic epoch batching: a permutation of 0..n-1 derived from
// (seed, epoch), chunked; the last partial batch is kept.
std::vector<std::vector<int>> make_batches(std::size_t n, std::size_t batch_size, int epoch,
                                           std::uint64_t seed);

// Recomputes per-channel mean/std over the dataset's images.
void compute_normalization(NoisyDataset& ds);

// (B, C, H, W) batch tensor from a list of equally shaped images.
Tensor to_batch(const std::vector<Image>& images);

}  // namespace nlab
