#include "dsm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "dsm/image_io.hpp"
#include "dsm/metrics.hpp"

namespace dsm {

namespace {

constexpr int kPlacementAttempts = 800;
constexpr int kMargin = 2;

struct Rgb {
  double r, g, b;
};

constexpr Rgb kRetina{0.62, 0.30, 0.13};
constexpr Rgb kLesion{0.96, 0.86, 0.28};
constexpr Rgb kDisc{0.97, 0.80, 0.55};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

struct Canvas {
  Extent extent;
  double cy, cx, radius;
  std::vector<std::uint8_t> blocked;

  bool in_fov(int y, int x) const {
    const double dy = y + 0.5 - cy;
    const double dx = x + 0.5 - cx;
    return dy * dy + dx * dx < (radius - 1.0) * (radius - 1.0);
  }
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * extent.width + x; }
  void block_around(int y, int x) {
    for (int dy = -kMargin; dy <= kMargin; ++dy) {
      for (int dx = -kMargin; dx <= kMargin; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < extent.height && nx >= 0 && nx < extent.width) blocked[idx(ny, nx)] = 1;
      }
    }
  }
};

// The `area` pixels closest to (cy, cx) in the elliptical metric, or empty
// when that set leaves the field of view, hits a blocked pixel or is not one
// 8-connected piece.
std::vector<std::pair<int, int>> ellipse_pixels(const Canvas& canvas, double cy, double cx, int area, double aspect,
                                                double angle) {
  const double semi = std::sqrt(area / (std::numbers::pi * aspect));
  const int reach = static_cast<int>(std::ceil(semi * aspect)) + 2;
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<std::tuple<double, int, int>> cand;
  for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
    for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double u = (dx * ca + dy * sa) / aspect;
      const double v = -dx * sa + dy * ca;
      cand.emplace_back(u * u + v * v, y, x);
    }
  }
  if (static_cast<int>(cand.size()) < area) return {};
  std::partial_sort(cand.begin(), cand.begin() + area, cand.end());
  std::vector<std::pair<int, int>> px;
  BinaryMask piece(canvas.extent.height, canvas.extent.width);
  for (int i = 0; i < area; ++i) {
    const auto [d, y, x] = cand[static_cast<std::size_t>(i)];
    if (y < 0 || y >= canvas.extent.height || x < 0 || x >= canvas.extent.width) return {};
    if (!canvas.in_fov(y, x) || canvas.blocked[canvas.idx(y, x)]) return {};
    px.emplace_back(y, x);
    piece.set(y, x, true);
  }
  if (connected_components(piece, 8).size() != 1) return {};
  return px;
}

SynthImage render(const SynthSpec& spec, int index, const std::vector<int>& areas) {
  auto rng = stream(spec.seed, static_cast<std::uint64_t>(index), 0x5e6d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const int h = spec.extent.height, w = spec.extent.width;
  const double side = std::min(h, w);

  Canvas canvas{spec.extent, h / 2.0 + (unit(rng) - 0.5) * 0.04 * side, w / 2.0 + (unit(rng) - 0.5) * 0.04 * side,
                0.46 * side, std::vector<std::uint8_t>(spec.extent.pixels(), 0)};

  ImageTensor image(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!canvas.in_fov(y, x)) continue;
      const double dy = y + 0.5 - canvas.cy, dx = x + 0.5 - canvas.cx;
      const double shade = 1.0 - 0.35 * (dy * dy + dx * dx) / (canvas.radius * canvas.radius);
      image.at(0, y, x) = static_cast<float>(kRetina.r * shade);
      image.at(1, y, x) = static_cast<float>(kRetina.g * shade);
      image.at(2, y, x) = static_cast<float>(kRetina.b * shade);
    }
  }

  if (spec.distractor) {
    const double r = 0.09 * side;
    const double theta = unit(rng) * 2.0 * std::numbers::pi;
    const double oy = canvas.cy + 0.55 * canvas.radius * std::sin(theta);
    const double ox = canvas.cx + 0.55 * canvas.radius * std::cos(theta);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y + 0.5 - oy, dx = x + 0.5 - ox;
        const double d2 = (dy * dy + dx * dx) / (r * r);
        if (d2 > 2.25 || !canvas.in_fov(y, x)) continue;
        const double a = std::exp(-d2);
        image.at(0, y, x) = static_cast<float>((1 - a) * image.at(0, y, x) + a * kDisc.r);
        image.at(1, y, x) = static_cast<float>((1 - a) * image.at(1, y, x) + a * kDisc.g);
        image.at(2, y, x) = static_cast<float>((1 - a) * image.at(2, y, x) + a * kDisc.b);
        canvas.blocked[canvas.idx(y, x)] = 1;
      }
    }
  }

  SynthImage out;
  char id[64];
  std::snprintf(id, sizeof(id), "synth_%s_%04d", spec.split.c_str(), index);
  out.id = id;
  BinaryMask mask(h, w);
  for (int area : areas) {
    std::vector<std::pair<int, int>> px;
    for (int attempt = 0; attempt < kPlacementAttempts && px.empty(); ++attempt) {
      const double rho = canvas.radius * std::sqrt(unit(rng)) * 0.9;
      const double theta = unit(rng) * 2.0 * std::numbers::pi;
      const double aspect = 1.0 + unit(rng);
      const double angle = unit(rng) * std::numbers::pi;
      px = ellipse_pixels(canvas, canvas.cy + rho * std::sin(theta), canvas.cx + rho * std::cos(theta), area, aspect,
                          angle);
    }
    if (px.empty()) {
      throw ValidationError("cannot place a " + std::to_string(area) + "-pixel lesion in " + out.id + " (" +
                            to_string(spec.extent) + "); lower the lesion load or enlarge the images");
    }
    for (auto [y, x] : px) mask.set(y, x, true);
    for (auto [y, x] : px) canvas.block_around(y, x);
    out.component_areas.push_back(area);
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool fov = canvas.in_fov(y, x);
      if (mask(y, x)) {
        image.at(0, y, x) = static_cast<float>(kLesion.r);
        image.at(1, y, x) = static_cast<float>(kLesion.g);
        image.at(2, y, x) = static_cast<float>(kLesion.b);
      }
      if (!fov) continue;
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = static_cast<float>(std::clamp(image.at(c, y, x) + noise(rng), 0.0, 1.0));
      }
    }
  }
  out.pair = validate_pair(image, mask, out.id);
  return out;
}

}  // namespace

int SynthSpec::large_area() const { return static_cast<int>(std::lround(small_area * area_ratio)); }

void SynthSpec::validate() const {
  if (count < 1) throw OutOfRange("synthetic image count must be positive");
  if (extent.height < 16 || extent.width < 16) throw OutOfRange("synthetic images must be at least 16x16");
  if (!(imbalance_ratio >= 1.0)) throw OutOfRange("imbalance ratio must be at least 1");
  if (!(large_fraction >= 0.0 && large_fraction < 1.0)) throw OutOfRange("large fraction must lie in [0,1)");
  if (small_area < 1) throw OutOfRange("small component area must be positive");
  if (!(area_ratio >= 1.0)) throw OutOfRange("area ratio must be at least 1");
  if (!(noise >= 0.0)) throw OutOfRange("noise must be non-negative");
}

std::vector<SynthImage> synth_images(const SynthSpec& spec) {
  spec.validate();
  const double total_px = static_cast<double>(spec.count) * static_cast<double>(spec.extent.pixels());
  const auto total_fg = static_cast<long>(std::lround(total_px / (spec.imbalance_ratio + 1.0)));
  const int large = spec.large_area();
  const double mean_area = (1.0 - spec.large_fraction) * spec.small_area + spec.large_fraction * large;
  const auto n_large = static_cast<long>(std::floor(spec.large_fraction * static_cast<double>(total_fg) / mean_area));
  const long rest = total_fg - n_large * large;
  const long n_small = rest / spec.small_area;
  long leftover = rest - n_small * spec.small_area;
  if (n_large + n_small == 0) {
    throw ValidationError("imbalance ratio " + std::to_string(spec.imbalance_ratio) +
                          " leaves no room for a single lesion pixel");
  }

  auto plan = stream(spec.seed, 0, 0x91a2);
  std::uniform_int_distribution<int> pick(0, spec.count - 1);
  std::vector<std::vector<int>> areas(static_cast<std::size_t>(spec.count));
  for (long i = 0; i < n_large; ++i) areas[static_cast<std::size_t>(pick(plan))].push_back(large);
  for (long i = 0; i < n_small; ++i) {
    int a = spec.small_area;
    if (leftover > 0) {
      ++a;
      --leftover;
    }
    areas[static_cast<std::size_t>(pick(plan))].push_back(a);
  }
  for (auto& a : areas) std::sort(a.begin(), a.end(), std::greater<>());

  std::vector<SynthImage> out;
  out.reserve(areas.size());
  for (int i = 0; i < spec.count; ++i) out.push_back(render(spec, i, areas[static_cast<std::size_t>(i)]));
  return out;
}

DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& dir) {
  const auto images = synth_images(spec);
  DatasetManifest manifest;
  manifest.split = spec.split;
  manifest.source = SourceTag::SYNTH;
  for (const auto& s : images) {
    const auto img = dir / "images" / (s.id + ".png");
    const auto msk = dir / "masks" / (s.id + ".png");
    write_image(img, s.pair.image);
    write_mask(msk, s.pair.mask);
    manifest.entries.push_back({img, msk});
  }
  write_manifest(manifest, dir / (spec.split + ".tsv"));
  return manifest;
}

}  // namespace dsm
