#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsm/core_types.hpp"

namespace dsm {

struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Tight box around the largest 8-connected region whose channel maximum
/// exceeds threshold. Falls back to the full frame (with a warning) when no
/// pixel qualifies.
BoundingBox detect_fov_bbox(const ImageTensor& image, double threshold = 10.0 / 255.0);

enum class PreprocessMode { kFovCropPadResize, kDirectResize };

enum class PadRule {
  kShortBelowTarget,  // pad only when the short side is below the target side
  kAlways,            // pad every non-square crop
};

struct PreprocessSpec {
  PreprocessMode mode = PreprocessMode::kFovCropPadResize;
  Extent target{1024, 1024};
  double fov_threshold = 10.0 / 255.0;
  PadRule pad_rule = PadRule::kShortBelowTarget;

  static PreprocessSpec ddr();
  static PreprocessSpec idrid();
  void validate() const;
};

/// Image resized bilinearly, mask with nearest neighbour.
LabeledImage preprocess(const ImageTensor& image, const BinaryMask& mask, const PreprocessSpec& spec);

ImageTensor crop(const ImageTensor& image, const BoundingBox& box);
BinaryMask crop(const BinaryMask& mask, const BoundingBox& box);
/// Centres the content in a zero-filled square of the long side.
ImageTensor pad_to_square(const ImageTensor& image);
BinaryMask pad_to_square(const BinaryMask& mask);
ImageTensor resize_bilinear(const ImageTensor& image, Extent target);
BinaryMask resize_nearest(const BinaryMask& mask, Extent target);

enum class Augmentation { kIdentity, kRot90, kRot180, kRot270, kHFlip, kVFlip };

inline constexpr std::array<Augmentation, 6> kAllAugmentations = {
    Augmentation::kIdentity, Augmentation::kRot90, Augmentation::kRot180,
    Augmentation::kRot270,   Augmentation::kHFlip, Augmentation::kVFlip};

std::string_view to_string(Augmentation a);

/// Rotations are clockwise.
LabeledImage apply_augmentation(const LabeledImage& pair, Augmentation a);
ImageTensor apply_augmentation(const ImageTensor& image, Augmentation a);
BinaryMask apply_augmentation(const BinaryMask& mask, Augmentation a);

/// identity, rot90, rot180, rot270, hflip, vflip.
std::vector<LabeledImage> augment(const LabeledImage& pair);

enum class PercentileWeighting {
  kPixel,      // each foreground pixel carries its component's relative area
  kComponent,  // each component counts once
};

struct StatsOptions {
  int connectivity = 8;
  PercentileWeighting weighting = PercentileWeighting::kPixel;
  double large_quantile = 0.9;
  double small_quantile = 0.1;
};

struct DatasetStats {
  double ratio_neg_pos = 0.0;
  double size_large = 0.0;
  double size_small = 0.0;
  std::size_t n_images = 0;
  std::size_t n_components = 0;
  std::uint64_t foreground_pixels = 0;
  std::uint64_t background_pixels = 0;
};

/// Throws ValidationError when no mask has a foreground pixel.
DatasetStats dataset_stats(std::span<const BinaryMask> masks, const StatsOptions& options = {});
DatasetStats dataset_stats(const DatasetManifest& manifest, const StatsOptions& options = {});

/// Nearest-rank weighted quantile: the smallest value whose cumulative weight
/// reaches q of the total.
double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q);

std::string to_json(const DatasetStats& stats, int indent = 2);

}  // namespace dsm
