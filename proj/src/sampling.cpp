#include "dsm/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "dsm/log.hpp"

namespace dsm {

SampleWeights::SampleWeights(Grid<std::uint32_t> counts) : counts_(std::move(counts)) {
  for (auto c : counts_.values()) total_ += c;
}

SampleWeights uniform_sample(Extent extent) {
  return SampleWeights(Grid<std::uint32_t>(extent.height, extent.width, 1u));
}

SampleWeights uniform_sample(const BinaryMask& gt) { return uniform_sample(gt.extent()); }

SampleWeights stochastic_uniform_sample(Extent extent, SamplerRng& rng) {
  Grid<std::uint32_t> counts(extent.height, extent.width, 0u);
  const std::size_t n = counts.size();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t i = 0; i < n; ++i) ++counts[pick(rng)];
  return SampleWeights(std::move(counts));
}

std::uint64_t positive_budget(const BinaryMask& gt, const SamplerConfig& cfg) {
  const auto n = static_cast<std::uint64_t>(gt.size());
  double rate = cfg.rate;
  if (cfg.rate_mode == RateMode::kReverseClassFrequency) {
    rate = static_cast<double>(n - gt.count()) / static_cast<double>(n);
  }
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw OutOfRange("sampler rate must lie in [0,1], got " + std::to_string(rate));
  }
  return static_cast<std::uint64_t>(std::floor(rate * static_cast<double>(n)));
}

SampleWeights rebalanced_sample(const BinaryMask& gt, const SamplerConfig& cfg, SamplerRng& rng) {
  const std::uint64_t n = gt.size();
  const std::uint64_t n_pos_draws = positive_budget(gt, cfg);

  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  positives.reserve(gt.count());
  negatives.reserve(n - gt.count());
  for (std::size_t i = 0; i < n; ++i) (gt[i] ? positives : negatives).push_back(i);

  Grid<std::uint32_t> counts(gt.height(), gt.width(), 0u);
  auto draw = [&](const std::vector<std::size_t>& pool, std::uint64_t k) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::uint64_t i = 0; i < k; ++i) ++counts[pool[pick(rng)]];
  };

  if (positives.empty() || negatives.empty()) {
    static std::atomic<int> emitted{0};
    if (emitted.fetch_add(1) < 10) {
      log_warning(positives.empty() ? "re-balanced sampler: mask has no positive pixels, using fallback"
                                    : "re-balanced sampler: mask has no negative pixels, using fallback");
    }
    if (cfg.fallback == ZeroClassFallback::kUniform) return uniform_sample(gt);
    draw(positives.empty() ? negatives : positives, n);
    return SampleWeights(std::move(counts));
  }

  draw(positives, n_pos_draws);
  draw(negatives, n - n_pos_draws);
  return SampleWeights(std::move(counts));
}

SamplerStats sampler_stats(const SampleWeights& weights, const BinaryMask& gt) {
  if (weights.extent() != gt.extent()) {
    throw ExtentMismatch("sample weights are " + to_string(weights.extent()) + " but mask is " +
                         to_string(gt.extent()));
  }
  SamplerStats stats;
  std::uint64_t on_positive = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) on_positive += weights[i];
    stats.max_count = std::max(stats.max_count, weights[i]);
  }
  stats.positive_fraction =
      weights.total() == 0 ? 0.0 : static_cast<double>(on_positive) / static_cast<double>(weights.total());
  return stats;
}

}  // namespace dsm
