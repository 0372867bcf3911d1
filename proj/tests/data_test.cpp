#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "nlab/data.hpp"
#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

using namespace nlab;

namespace {

bool datasets_equal(const NoisyDataset& a, const NoisyDataset& b) {
  if (a.size() != b.size() || a.num_classes != b.num_classes) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.given_labels[i] != b.given_labels[i] || a.true_labels[i] != b.true_labels[i] ||
        a.flip_mask[i] != b.flip_mask[i])
      return false;
    if (a.images[i].px != b.images[i].px) return false;
  }
  return true;
}

// Minimal dataset for label-noise statistics: image content is irrelevant.
NoisyDataset blank_dataset(int n, int num_classes) {
  NoisyDataset ds;
  ds.num_classes = num_classes;
  for (int i = 0; i < n; ++i) {
    ds.images.emplace_back(8, 8, 1);
    ds.given_labels.push_back(i % num_classes);
  }
  ds.true_labels = ds.given_labels;
  ds.flip_mask.assign(n, 0);
  ds.mean = {0.0};
  ds.stddev = {1.0};
  return ds;
}

}  // namespace

TEST_CASE("glyphs: generation is deterministic in the seed") {
  GlyphSpec spec;
  spec.num_classes = 4;
  spec.per_class = 10;
  NoisyDataset a = generate_glyphs(spec, 1);
  NoisyDataset b = generate_glyphs(spec, 1);
  CHECK(datasets_equal(a, b));
  NoisyDataset c = generate_glyphs(spec, 2);
  CHECK_FALSE(datasets_equal(a, c));
}

TEST_CASE("glyphs: zero jitter collapses every sample of a class") {
  GlyphSpec spec;
  spec.num_classes = 3;
  spec.per_class = 5;
  spec.jitter = JitterSpec{0.0, 0.0, 1.0, 1.0, 0.0};
  NoisyDataset ds = generate_glyphs(spec, 9);
  for (int cls = 0; cls < 3; ++cls) {
    const Image& first = ds.images[cls * 5];
    for (int k = 1; k < 5; ++k) CHECK(ds.images[cls * 5 + k].px == first.px);
  }
}

TEST_CASE("glyphs: classes are balanced, clean and in range") {
  GlyphSpec spec;
  spec.num_classes = 6;
  spec.per_class = 7;
  NoisyDataset ds = generate_glyphs(spec, 3);
  CHECK(ds.size() == 42);
  ds.validate();
  std::vector<int> counts(6, 0);
  for (int label : ds.true_labels) ++counts[label];
  for (int c : counts) CHECK(c == 7);
  for (std::uint8_t f : ds.flip_mask) CHECK(f == 0);
  for (const Image& img : ds.images)
    for (double p : img.px) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
}

TEST_CASE("glyphs: requesting more classes than templates is a config error") {
  GlyphSpec spec;
  spec.num_classes = glyph_template_count() + 1;
  CHECK_THROWS_AS(generate_glyphs(spec, 1), ConfigError);
}

TEST_CASE("glyphs: every template renders something non-trivial") {
  GlyphSpec spec;
  spec.num_classes = glyph_template_count();
  spec.per_class = 2;
  NoisyDataset ds = generate_glyphs(spec, 5);
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    double mass = 0.0;
    for (double p : ds.images[cls * 2].px) mass += p;
    CHECK(mass > 3.0);
  }
}

TEST_CASE("idx: hand-crafted file parses with exact byte scaling") {
  const std::string img_path = "test_idx_images.idx";
  const std::string lbl_path = "test_idx_labels.idx";
  {
    std::ofstream f(img_path, std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4};
    f.write(reinterpret_cast<const char*>(header), 16);
    unsigned char px[32];
    for (int i = 0; i < 16; ++i) px[i] = 0;
    for (int i = 16; i < 32; ++i) px[i] = 255;
    f.write(reinterpret_cast<const char*>(px), 32);
  }
  {
    std::ofstream f(lbl_path, std::ios::binary);
    const unsigned char header[8] = {0, 0, 8, 1, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(header), 8);
    const unsigned char labels[2] = {1, 0};
    f.write(reinterpret_cast<const char*>(labels), 2);
  }
  NoisyDataset ds = load_idx(img_path, lbl_path);
  CHECK(ds.size() == 2);
  CHECK(ds.images[0].height == 4);
  for (double p : ds.images[0].px) CHECK(p == 0.0);
  for (double p : ds.images[1].px) CHECK(p == 1.0);
  CHECK(ds.given_labels[0] == 1);
  CHECK(ds.given_labels[1] == 0);
  std::filesystem::remove(img_path);
  std::filesystem::remove(lbl_path);
}

TEST_CASE("idx: wrong label magic is a format error") {
  const std::string img_path = "test_idx_images2.idx";
  const std::string lbl_path = "test_idx_labels2.idx";
  {
    std::ofstream f(img_path, std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(header), 16);
    const unsigned char px[4] = {1, 2, 3, 4};
    f.write(reinterpret_cast<const char*>(px), 4);
  }
  {
    std::ofstream f(lbl_path, std::ios::binary);
    const unsigned char header[8] = {0, 0, 9, 9, 0, 0, 0, 1};
    f.write(reinterpret_cast<const char*>(header), 8);
    const unsigned char label = 0;
    f.write(reinterpret_cast<const char*>(&label), 1);
  }
  CHECK_THROWS_AS(load_idx(img_path, lbl_path), FormatError);
  std::filesystem::remove(img_path);
  std::filesystem::remove(lbl_path);
}

TEST_CASE("idx: truncated image payload is a format error") {
  const std::string img_path = "test_idx_images3.idx";
  const std::string lbl_path = "test_idx_labels3.idx";
  {
    std::ofstream f(img_path, std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4};
    f.write(reinterpret_cast<const char*>(header), 16);
    const unsigned char px[8] = {0};  // far too short
    f.write(reinterpret_cast<const char*>(px), 8);
  }
  {
    std::ofstream f(lbl_path, std::ios::binary);
    const unsigned char header[8] = {0, 0, 8, 1, 0, 0, 0, 2};
    f.write(reinterpret_cast<const char*>(header), 8);
    const unsigned char labels[2] = {0, 1};
    f.write(reinterpret_cast<const char*>(labels), 2);
  }
  CHECK_THROWS_AS(load_idx(img_path, lbl_path), FormatError);
  std::filesystem::remove(img_path);
  std::filesystem::remove(lbl_path);
}

TEST_CASE("idx: count mismatch between files is a format error") {
  GlyphSpec spec;
  spec.num_classes = 2;
  spec.per_class = 3;
  NoisyDataset ds = generate_glyphs(spec, 4);
  save_idx(ds, "test_rt_images.idx", "test_rt_labels.idx");
  {
    std::ofstream f("test_rt_labels_bad.idx", std::ios::binary);
    const unsigned char header[8] = {0, 0, 8, 1, 0, 0, 0, 5};
    f.write(reinterpret_cast<const char*>(header), 8);
    const unsigned char labels[5] = {0, 0, 0, 1, 1};
    f.write(reinterpret_cast<const char*>(labels), 5);
  }
  CHECK_THROWS_AS(load_idx("test_rt_images.idx", "test_rt_labels_bad.idx"), FormatError);
  std::filesystem::remove("test_rt_images.idx");
  std::filesystem::remove("test_rt_labels.idx");
  std::filesystem::remove("test_rt_labels_bad.idx");
}

TEST_CASE("idx: round-trip is lossless at 8-bit precision") {
  GlyphSpec spec;
  spec.num_classes = 3;
  spec.per_class = 4;
  NoisyDataset ds = generate_glyphs(spec, 11);
  save_idx(ds, "test_rt2_images.idx", "test_rt2_labels.idx");
  NoisyDataset back = load_idx("test_rt2_images.idx", "test_rt2_labels.idx");
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.given_labels[i] == ds.given_labels[i]);
    for (std::size_t j = 0; j < ds.images[i].px.size(); ++j) {
      // Quantize the original to 8 bits; the loaded pixel must match exactly.
      const double q = std::lround(ds.images[i].px[j] * 255.0) / 255.0;
      CHECK(back.images[i].px[j] == doctest::Approx(q).epsilon(1e-12));
    }
  }
  // A second round trip is bit-exact.
  save_idx(back, "test_rt3_images.idx", "test_rt3_labels.idx");
  NoisyDataset back2 = load_idx("test_rt3_images.idx", "test_rt3_labels.idx");
  CHECK(datasets_equal(back, back2));
  for (const char* p : {"test_rt2_images.idx", "test_rt2_labels.idx", "test_rt3_images.idx",
                        "test_rt3_labels.idx"})
    std::filesystem::remove(p);
}

TEST_CASE("symmetric noise: rate 0 changes nothing") {
  NoisyDataset ds = blank_dataset(100, 4);
  NoisyDataset out = inject_symmetric(ds, 0.0, 1);
  CHECK(datasets_equal(ds, out));
  for (std::uint8_t f : out.flip_mask) CHECK(f == 0);
}

TEST_CASE("symmetric noise: unchanged fraction matches 1 - r + r/C") {
  const int n = 10000, C = 10;
  const double r = 0.9;
  NoisyDataset ds = blank_dataset(n, C);
  NoisyDataset out = inject_symmetric(ds, r, 77);
  out.validate();
  int unchanged = 0;
  for (int i = 0; i < n; ++i)
    if (out.given_labels[i] == out.true_labels[i]) ++unchanged;
  const double expect = 1.0 - r + r / C;  // 0.19
  const double sigma = std::sqrt(expect * (1.0 - expect) / n);
  CHECK(std::fabs(unchanged / static_cast<double>(n) - expect) <= 3.0 * sigma);
}

TEST_CASE("symmetric noise: rate 1 with two classes is a coin flip") {
  const int n = 10000;
  NoisyDataset ds = blank_dataset(n, 2);
  NoisyDataset out = inject_symmetric(ds, 1.0, 5);
  int unchanged = 0;
  for (int i = 0; i < n; ++i)
    if (out.given_labels[i] == out.true_labels[i]) ++unchanged;
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::fabs(unchanged / static_cast<double>(n) - 0.5) <= 3.0 * sigma);
}

TEST_CASE("symmetric noise: uniform-over-others never keeps the true label on flip") {
  const int n = 10000;
  NoisyDataset ds = blank_dataset(n, 4);
  NoisyDataset out = inject_symmetric(ds, 1.0, 13, /*uniform_over_all=*/false);
  for (int i = 0; i < n; ++i) CHECK(out.given_labels[i] != out.true_labels[i]);
}

TEST_CASE("asymmetric noise: rate 0 unchanged, rate 1 rotates every label") {
  NoisyDataset ds = blank_dataset(60, 4);
  NoisyDataset none = inject_asymmetric(ds, 0.0, 3);
  CHECK(datasets_equal(ds, none));
  NoisyDataset all = inject_asymmetric(ds, 1.0, 3);
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(all.given_labels[i] == (ds.true_labels[i] + 1) % 4);
}

TEST_CASE("asymmetric noise: flipped fraction is within 3 sigma of the rate") {
  const int n = 10000;
  const double r = 0.4;
  NoisyDataset ds = blank_dataset(n, 4);
  NoisyDataset out = inject_asymmetric(ds, r, 21);
  out.validate();
  int flipped = 0;
  for (std::uint8_t f : out.flip_mask) flipped += f;
  const double sigma = std::sqrt(r * (1.0 - r) / n);
  CHECK(std::fabs(flipped / static_cast<double>(n) - r) <= 3.0 * sigma);
}

TEST_CASE("asymmetric noise: out-of-range class map is a config error") {
  NoisyDataset ds = blank_dataset(20, 4);
  std::vector<int> bad = {1, 2, 3, 7};
  CHECK_THROWS_AS(inject_asymmetric(ds, 0.5, 1, &bad), ConfigError);
}

TEST_CASE("noise injection never touches images or true labels") {
  GlyphSpec spec;
  spec.num_classes = 4;
  spec.per_class = 25;
  NoisyDataset ds = generate_glyphs(spec, 31);
  for (double rate : {0.2, 0.8}) {
    NoisyDataset sym = inject_symmetric(ds, rate, 5);
    NoisyDataset asym = inject_asymmetric(ds, rate, 5);
    for (const NoisyDataset* out : {&sym, &asym}) {
      out->validate();
      CHECK(out->true_labels == ds.true_labels);
      for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(out->images[i].px == ds.images[i].px);
    }
  }
}

TEST_CASE("batches: n=4, batch=2 partitions the index set") {
  const auto b = make_batches(4, 2, 0, 9);
  REQUIRE(b.size() == 2);
  std::set<int> seen;
  for (const auto& batch : b)
    for (int i : batch) seen.insert(i);
  CHECK(seen == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("batches: deterministic per (seed, epoch), varying across epochs") {
  const auto a = make_batches(32, 8, 3, 400);
  const auto b = make_batches(32, 8, 3, 400);
  CHECK(a == b);

  std::set<std::vector<int>> orders;
  for (int epoch = 0; epoch < 10; ++epoch) {
    std::vector<int> flat;
    for (const auto& batch : make_batches(32, 8, epoch, 400))
      flat.insert(flat.end(), batch.begin(), batch.end());
    orders.insert(flat);
  }
  CHECK(orders.size() == 10);
}

TEST_CASE("batches: partition property over random sizes") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(200);
    const std::size_t bs = 1 + rng.uniform_int(32);
    const auto batches = make_batches(n, bs, trial, 777);
    std::vector<int> flat;
    for (const auto& b : batches) {
      CHECK(b.size() <= bs);
      flat.insert(flat.end(), b.begin(), b.end());
    }
    REQUIRE(flat.size() == n);
    std::sort(flat.begin(), flat.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(flat[i] == static_cast<int>(i));
    // The last partial batch is kept: all earlier batches are full.
    for (std::size_t k = 0; k + 1 < batches.size(); ++k) CHECK(batches[k].size() == bs);
  }
}

TEST_CASE("normalization stats describe the rendered pixels") {
  GlyphSpec spec;
  spec.num_classes = 4;
  spec.per_class = 20;
  NoisyDataset ds = generate_glyphs(spec, 55);
  REQUIRE(ds.mean.size() == 1);
  CHECK(ds.mean[0] > 0.01);
  CHECK(ds.mean[0] < 0.9);
  CHECK(ds.stddev[0] > 0.01);
}
