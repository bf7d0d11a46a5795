#pragma once

#include <cstdint>
#include <random>

#include "dsm/core_types.hpp"

namespace dsm {

/// Pixel multiset encoded as per-pixel draw counts. total() equals H*W for
/// every sampler in this module.
class SampleWeights {
 public:
  SampleWeights() = default;
  explicit SampleWeights(Grid<std::uint32_t> counts);

  int height() const { return counts_.height(); }
  int width() const { return counts_.width(); }
  Extent extent() const { return counts_.extent(); }
  std::size_t size() const { return counts_.size(); }
  std::uint32_t operator[](std::size_t i) const { return counts_[i]; }
  std::uint32_t operator()(int y, int x) const { return counts_(y, x); }
  std::uint64_t total() const { return total_; }
  const Grid<std::uint32_t>& counts() const { return counts_; }

  friend bool operator==(const SampleWeights&, const SampleWeights&) = default;

 private:
  Grid<std::uint32_t> counts_;
  std::uint64_t total_ = 0;
};

enum class ZeroClassFallback {
  kUniform,        // identity weights
  kAllBackground,  // whole budget goes to the non-empty pool
};

enum class RateMode {
  kFixed,                  // N1/N = rate
  kReverseClassFrequency,  // N1/N = #negatives / N, per image
};

struct SamplerConfig {
  double rate = 0.5;
  RateMode rate_mode = RateMode::kFixed;
  ZeroClassFallback fallback = ZeroClassFallback::kUniform;
};

using SamplerRng = std::mt19937_64;

/// Every pixel exactly once.
SampleWeights uniform_sample(const BinaryMask& gt);
SampleWeights uniform_sample(Extent extent);

/// N draws from all pixels with replacement (alternative reading of the
/// uniform sampler).
SampleWeights stochastic_uniform_sample(Extent extent, SamplerRng& rng);

/// Draws floor(rate*N) pixels with replacement from the positives and the
/// remaining N - floor(rate*N) from the negatives.
SampleWeights rebalanced_sample(const BinaryMask& gt, const SamplerConfig& cfg, SamplerRng& rng);

/// Number of positive draws rebalanced_sample makes for this mask.
std::uint64_t positive_budget(const BinaryMask& gt, const SamplerConfig& cfg);

struct SamplerStats {
  double positive_fraction = 0.0;
  std::uint32_t max_count = 0;
};

SamplerStats sampler_stats(const SampleWeights& weights, const BinaryMask& gt);

}  // namespace dsm
