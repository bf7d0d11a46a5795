#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dsm/data.hpp"
#include "dsm/log.hpp"
#include "dsm/synth.hpp"

using namespace dsm;

namespace {

struct QuietLog {
  LogSink previous = set_log_sink([](LogLevel, std::string_view) {});
  ~QuietLog() { set_log_sink(previous); }
};

ImageTensor disc_image(int h, int w, int cy, int cx, int r) {
  ImageTensor img(h, w, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
        for (int c = 0; c < ImageTensor::kChannels; ++c) img.at(c, y, x) = 0.6f;
      }
    }
  }
  return img;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("field-of-view box examples") {
  const auto box = detect_fov_bbox(disc_image(60, 80, 30, 40, 20));
  CHECK(std::abs(box.width - 41) <= 1);
  CHECK(std::abs(box.height - 41) <= 1);
  CHECK(box.x == 20);
  CHECK(box.y == 10);

  QuietLog quiet;
  CHECK(detect_fov_bbox(ImageTensor(10, 12, 0.0f)) == BoundingBox{0, 0, 12, 10});

  const auto clipped = detect_fov_bbox(disc_image(40, 40, 20, 2, 10));
  CHECK(clipped.x == 0);
  CHECK(clipped.x + clipped.width <= 40);
}

TEST_CASE("fov crop pads the short side then resizes") {
  PreprocessSpec spec = PreprocessSpec::ddr();
  spec.pad_rule = PadRule::kAlways;
  ImageTensor img(1024, 2048, 0.5f);
  BinaryMask mask(1024, 2048);
  mask.set(0, 0, true);
  mask.set(1023, 2047, true);
  const auto out = preprocess(img, mask, spec);
  CHECK(out.image.extent() == Extent{1024, 1024});
  CHECK(out.mask.extent() == Extent{1024, 1024});
  // The padded band (rows 0..255 of the output) is black.
  CHECK(out.image.at(0, 10, 512) == 0.0f);
  CHECK(out.image.at(0, 512, 512) == doctest::Approx(0.5f));

  const auto padded = pad_to_square(mask);
  CHECK(padded.extent() == Extent{2048, 2048});
  CHECK(padded.count() == 2);
}

TEST_CASE("literal pad rule leaves a crop whose short side reaches the target") {
  ImageTensor img(1024, 2048, 0.5f);
  const auto out = preprocess(img, BinaryMask(1024, 2048), PreprocessSpec::ddr());
  CHECK(out.image.extent() == Extent{1024, 1024});
  CHECK(out.image.at(0, 10, 512) == doctest::Approx(0.5f));

  ImageTensor small(100, 200, 0.5f);
  const auto padded = preprocess(small, BinaryMask(100, 200), PreprocessSpec::ddr());
  CHECK(padded.image.at(0, 10, 512) == 0.0f);
}

TEST_CASE("direct resize mode") {
  ImageTensor img(2848, 4288, 0.25f);
  BinaryMask mask(2848, 4288);
  for (int y = 1000; y < 1100; ++y) {
    for (int x = 2000; x < 2100; ++x) mask.set(y, x, true);
  }
  const auto out = preprocess(img, mask, PreprocessSpec::idrid());
  CHECK(out.image.extent() == Extent{960, 1440});
  CHECK(out.mask.extent() == Extent{960, 1440});
  const double expected = 10000.0 * (960.0 * 1440.0) / (2848.0 * 4288.0);
  CHECK(std::abs(static_cast<double>(out.mask.count()) - expected) / expected < 0.05);
}

TEST_CASE("augmentation examples") {
  LabeledImage pair{ImageTensor(5, 5, 0.0f), BinaryMask(5, 5)};
  pair.mask.set(0, 1, true);
  pair.mask.set(0, 2, true);
  pair.mask.set(3, 0, true);
  const auto all = augment(pair);
  REQUIRE(all.size() == 6);
  for (const auto& a : all) CHECK(a.mask.count() == 3);
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) CHECK_FALSE(all[i].mask == all[j].mask);
  }
  const auto twice = apply_augmentation(apply_augmentation(pair, Augmentation::kRot180), Augmentation::kRot180);
  CHECK(twice.mask == pair.mask);

  BinaryMask corner(2, 2);
  corner.set(0, 0, true);
  const auto flipped = apply_augmentation(corner, Augmentation::kHFlip);
  CHECK(flipped(0, 1));
  CHECK(flipped.count() == 1);

  const auto r90 = apply_augmentation(corner, Augmentation::kRot90);
  CHECK(r90(0, 1));
}

TEST_CASE("image and mask receive the same transform") {
  LabeledImage pair{ImageTensor(4, 4, 0.0f), BinaryMask(4, 4)};
  pair.mask.set(0, 3, true);
  pair.mask.set(1, 3, true);
  pair.image.at(2, 0, 3) = 1.0f;
  pair.image.at(2, 1, 3) = 1.0f;
  for (auto a : kAllAugmentations) {
    const auto out = apply_augmentation(pair, a);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) CHECK((out.image.at(2, y, x) == 1.0f) == out.mask(y, x));
    }
  }
}

TEST_CASE("dataset statistics on a single mask") {
  BinaryMask m(10, 10);
  for (int x = 2; x < 7; ++x) m.set(4, x, true);
  const std::vector<BinaryMask> masks{m};
  const auto s = dataset_stats(masks);
  CHECK(s.ratio_neg_pos == doctest::Approx(19.0));
  CHECK(s.size_large == doctest::Approx(0.05));
  CHECK(s.size_small == doctest::Approx(0.05));
  CHECK(s.n_components == 1);
  CHECK(s.n_images == 1);

  const std::vector<BinaryMask> empty{BinaryMask(3, 3)};
  CHECK_THROWS_AS(dataset_stats(empty), ValidationError);
}

TEST_CASE("pixel weighting shifts the percentiles toward large components") {
  BinaryMask m(20, 20);
  for (int i = 0; i < 8; ++i) m.set(0, 2 * i, true);
  for (int y = 10; y < 20; ++y) {
    for (int x = 10; x < 20; ++x) m.set(y, x, true);
  }
  const std::vector<BinaryMask> masks{m};
  const auto pixel = dataset_stats(masks);
  StatsOptions opt;
  opt.weighting = PercentileWeighting::kComponent;
  const auto comp = dataset_stats(masks, opt);
  CHECK(pixel.size_small == doctest::Approx(100.0 / 400.0));
  CHECK(comp.size_small == doctest::Approx(1.0 / 400.0));
  CHECK(comp.size_large == doctest::Approx(100.0 / 400.0));
  CHECK(pixel.size_small <= pixel.size_large);

  std::vector<BinaryMask> swapped{BinaryMask(4, 4), m};
  std::vector<BinaryMask> reversed{m, BinaryMask(4, 4)};
  const auto a = dataset_stats(swapped);
  const auto b = dataset_stats(reversed);
  CHECK(a.ratio_neg_pos == b.ratio_neg_pos);
  CHECK(a.size_large == b.size_large);
  CHECK(a.size_small == b.size_small);
}

TEST_CASE("weighted quantile uses nearest rank") {
  CHECK(weighted_quantile({{1.0, 1.0}, {2.0, 1.0}, {3.0, 2.0}}, 0.5) == 2.0);
  CHECK(weighted_quantile({{1.0, 1.0}, {2.0, 1.0}, {3.0, 2.0}}, 0.51) == 3.0);
  CHECK(weighted_quantile({{5.0, 3.0}}, 0.1) == 5.0);
}

TEST_CASE("synthetic generator hits the requested imbalance and size mix") {
  SynthSpec spec;
  spec.seed = 3;
  const auto images = synth_images(spec);
  REQUIRE(images.size() == 20);
  std::vector<BinaryMask> masks;
  std::size_t small = 0, total = 0;
  for (const auto& im : images) {
    masks.push_back(im.pair.mask);
    CHECK(im.pair.image.extent() == Extent{64, 64});
    for (int a : im.component_areas) {
      ++total;
      small += a == spec.small_area ? 1 : 0;
    }
  }
  const auto s = dataset_stats(masks);
  CHECK(s.ratio_neg_pos >= 450.0);
  CHECK(s.ratio_neg_pos <= 550.0);
  REQUIRE(total > 0);
  CHECK(static_cast<double>(small) / static_cast<double>(total) >= 0.8);
  CHECK(s.n_components == total);
}

TEST_CASE("synthetic generator is byte-identical for a fixed seed") {
  const auto base = std::filesystem::temp_directory_path() / "dsm_data_synth";
  std::filesystem::remove_all(base);
  SynthSpec spec;
  spec.count = 4;
  spec.seed = 11;
  synth_generate(spec, base / "a");
  synth_generate(spec, base / "b");
  for (const auto& entry : std::filesystem::recursive_directory_iterator(base / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), base / "a");
    CHECK(file_bytes(entry.path()) == file_bytes(base / "b" / rel));
  }
  spec.seed = 12;
  synth_generate(spec, base / "c");
  CHECK(file_bytes(base / "a" / "masks" / "synth_train_0000.png") != file_bytes(base / "c" / "masks" / "synth_train_0000.png"));
}

TEST_CASE("synthetic generator rejects infeasible specs") {
  SynthSpec spec;
  spec.extent = {8, 8};
  spec.imbalance_ratio = 1.0;
  spec.count = 1;
  CHECK_THROWS_AS(synth_images(spec), ValidationError);
  spec = SynthSpec{};
  spec.imbalance_ratio = 0.5;
  CHECK_THROWS_AS(synth_images(spec), ValidationError);
}
