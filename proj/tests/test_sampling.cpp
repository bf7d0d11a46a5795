#include <cmath>

#include "doctest.h"
#include "dsm/log.hpp"
#include "dsm/sampling.hpp"
#include "oracles.hpp"

using namespace dsm;

namespace {

BinaryMask mask_with(int h, int w, std::initializer_list<std::size_t> on) {
  BinaryMask m(h, w);
  for (auto i : on) m.set(i, true);
  return m;
}

struct QuietLog {
  LogSink previous = set_log_sink([](LogLevel, std::string_view) {});
  ~QuietLog() { set_log_sink(previous); }
};

}  // namespace

TEST_CASE("uniform sampler is the identity multiset") {
  const auto w = uniform_sample(BinaryMask(4, 4));
  CHECK(w.total() == 16);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == 1);
  CHECK(uniform_sample(BinaryMask(1, 1)).total() == 1);
  CHECK(uniform_sample(BinaryMask(2, 3)).total() == 6);
  CHECK(uniform_sample(mask_with(2, 3, {0, 4})) == uniform_sample(BinaryMask(2, 3)));
}

TEST_CASE("re-balanced sampler splits the budget between pools") {
  SamplerRng rng(1);
  const BinaryMask gt = mask_with(4, 4, {1, 6, 11});
  const auto w = rebalanced_sample(gt, {}, rng);
  std::uint64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < w.size(); ++i) (gt[i] ? pos : neg) += w[i];
  CHECK(pos == 8);
  CHECK(neg == 8);
  CHECK(w.total() == 16);
}

TEST_CASE("re-balanced sampler floors the positive budget") {
  SamplerRng rng(2);
  const BinaryMask gt = mask_with(2, 4, {5});
  SamplerConfig cfg;
  cfg.rate = 0.25;
  const auto w = rebalanced_sample(gt, cfg, rng);
  CHECK(w[5] == 2);
  CHECK(w.total() - w[5] == 6);
}

TEST_CASE("re-balanced sampler falls back on single-class masks") {
  QuietLog quiet;
  SamplerRng rng(3);
  const auto w = rebalanced_sample(BinaryMask(4, 4), {}, rng);
  CHECK(w == uniform_sample(Extent{4, 4}));

  SamplerConfig cfg;
  cfg.fallback = ZeroClassFallback::kAllBackground;
  const auto bg = rebalanced_sample(BinaryMask(4, 4), cfg, rng);
  CHECK(bg.total() == 16);
}

TEST_CASE("reverse class frequency rate uses the negative share") {
  const BinaryMask gt = mask_with(4, 4, {0, 1, 2, 3});
  SamplerConfig cfg;
  cfg.rate_mode = RateMode::kReverseClassFrequency;
  CHECK(positive_budget(gt, cfg) == 12);
}

TEST_CASE("sampler_stats reports fraction and max count") {
  const BinaryMask gt = mask_with(4, 4, {0, 5, 10, 15});
  const auto s = sampler_stats(uniform_sample(gt), gt);
  CHECK(s.positive_fraction == doctest::Approx(0.25));
  CHECK(s.max_count == 1);
  SamplerRng rng(4);
  CHECK(sampler_stats(rebalanced_sample(gt, {}, rng), gt).positive_fraction == 0.5);
  CHECK_THROWS_AS(sampler_stats(uniform_sample(Extent{2, 2}), gt), ExtentMismatch);
}

TEST_CASE("positive draws land only on positives and hit the budget exactly") {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 50; ++trial) {
    BinaryMask gt = oracle::random_mask(gen, 6, 7, 0.2);
    if (gt.count() == 0 || gt.count() == gt.size()) continue;
    SamplerConfig cfg;
    cfg.rate = 0.3;
    SamplerRng rng(static_cast<std::uint64_t>(trial));
    const auto w = rebalanced_sample(gt, cfg, rng);
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < w.size(); ++i) pos += gt[i] ? w[i] : 0;
    CHECK(pos == static_cast<std::uint64_t>(std::floor(0.3 * 42)));
    CHECK(w.total() == 42);
  }
}

TEST_CASE("stochastic uniform sampler keeps the budget") {
  SamplerRng rng(5);
  CHECK(stochastic_uniform_sample({5, 5}, rng).total() == 25);
}
