#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dsm/core_types.hpp"

using namespace dsm;

namespace {

ImageTensor grey(int h, int w, float v = 0.5f) { return ImageTensor(h, w, v); }

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dsm_core_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("validate_pair accepts matching binary pairs") {
  Grid<double> mask(8, 8, 0.0);
  mask(3, 4) = 1.0;
  const auto pair = validate_pair(grey(8, 8), mask);
  CHECK(pair.mask.count() == 1);
  CHECK(pair.mask(3, 4));
}

TEST_CASE("validate_pair rejects extent mismatch") {
  CHECK_THROWS_AS(validate_pair(grey(8, 8), Grid<double>(4, 4, 0.0)), ExtentMismatch);
  CHECK_THROWS_AS(validate_pair(grey(8, 8), BinaryMask(4, 4)), ExtentMismatch);
}

TEST_CASE("validate_pair rejects non-binary masks with coordinates") {
  Grid<double> mask(8, 8, 0.0);
  mask(2, 5) = 0.5;
  try {
    validate_pair(grey(8, 8), mask, "case.png");
    FAIL("expected NonBinaryMask");
  } catch (const NonBinaryMask& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,5)") != std::string::npos);
    CHECK(msg.find("case.png") != std::string::npos);
  }
}

TEST_CASE("check_image rejects non-finite and out-of-range pixels") {
  ImageTensor img = grey(4, 4);
  img.at(1, 2, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(check_image(img), NonFiniteValue);
  img.at(1, 2, 3) = 1.5f;
  CHECK_THROWS_AS(check_image(img), OutOfRange);
}

TEST_CASE("grids must be at least 1x1") {
  CHECK_THROWS_AS(BinaryMask(0, 3), ExtentMismatch);
  CHECK_THROWS_AS(Grid<int>(2, 2, std::vector<int>{1, 2, 3}), ExtentMismatch);
}

TEST_CASE("probability masks validate their range") {
  CHECK_THROWS_AS(ProbabilityMask(Grid<double>(1, 2, std::vector<double>{0.2, 1.2})), OutOfRange);
  CHECK_THROWS_AS(ProbabilityMask(Grid<double>(1, 1, std::vector<double>{std::nan("")})), NonFiniteValue);
}

TEST_CASE("binarize uses an inclusive threshold") {
  const ProbabilityMask p(Grid<double>(1, 3, std::vector<double>{0.49, 0.50, 0.51}));
  const BinaryMask b = binarize(p, 0.5);
  CHECK_FALSE(b[0]);
  CHECK(b[1]);
  CHECK(b[2]);
  CHECK(binarize(ProbabilityMask(4, 4, 0.0)).count() == 0);
  CHECK(binarize(ProbabilityMask(4, 4, 0.7)).count() == 16);
}

TEST_CASE("binarize rejects thresholds outside (0,1)") {
  const ProbabilityMask p(2, 2, 0.3);
  CHECK_THROWS_AS(binarize(p, 0.0), OutOfRange);
  CHECK_THROWS_AS(binarize(p, 1.0), OutOfRange);
}

TEST_CASE("binarize is idempotent and monotone in the threshold") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid<double> g(6, 6);
  for (auto& v : g.values()) v = u(rng);
  const ProbabilityMask p(g);
  const BinaryMask once = binarize(p, 0.5);
  CHECK(binarize(ProbabilityMask::from(once), 0.5) == once);
  for (double lo = 0.1; lo < 0.9; lo += 0.1) {
    const BinaryMask a = binarize(p, lo);
    const BinaryMask b = binarize(p, lo + 0.05);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((!b[i] || a[i]));
  }
}

TEST_CASE("source tags round-trip") {
  for (auto tag : {SourceTag::DDR, SourceTag::IDRiD, SourceTag::SYNTH}) {
    CHECK(parse_source_tag(to_string(tag)) == tag);
  }
  CHECK_THROWS_AS(parse_source_tag("kaggle"), ValidationError);
}

TEST_CASE("manifests resolve relative paths and read headers") {
  const auto dir = scratch("manifest");
  std::filesystem::create_directories(dir / "img");
  std::ofstream(dir / "img" / "a.png") << "x";
  std::ofstream(dir / "img" / "a_mask.png") << "x";
  std::ofstream(dir / "list.tsv") << "# split: test\n# source: IDRiD\nimg/a.png\timg/a_mask.png\n";
  const auto m = read_manifest(dir / "list.tsv");
  CHECK(m.split == "test");
  CHECK(m.source == SourceTag::IDRiD);
  REQUIRE(m.entries.size() == 1);
  CHECK(std::filesystem::equivalent(m.entries[0].image, dir / "img" / "a.png"));

  write_manifest(m, dir / "copy.tsv");
  const auto again = read_manifest(dir / "copy.tsv");
  CHECK(again.split == "test");
  CHECK(std::filesystem::equivalent(again.entries[0].mask, dir / "img" / "a_mask.png"));
}

TEST_CASE("manifests report missing files") {
  const auto dir = scratch("missing");
  std::ofstream(dir / "list.tsv") << "nope.png\tnope_mask.png\n";
  CHECK_THROWS_AS(read_manifest(dir / "list.tsv"), ValidationError);
  CHECK_THROWS_AS(read_manifest(dir / "absent.tsv"), ValidationError);
}
