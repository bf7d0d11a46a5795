#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsm/error.hpp"

namespace dsm {

struct Extent {
  int height = 0;
  int width = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  friend bool operator==(const Extent&, const Extent&) = default;
};

std::string to_string(const Extent& e);

/// Dense row-major H x W array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : extent_{height, width}, data_(checked_size(height, width), fill) {}
  Grid(int height, int width, std::vector<T> values) : extent_{height, width}, data_(std::move(values)) {
    if (data_.size() != checked_size(height, width)) {
      throw ExtentMismatch("grid of " + to_string(extent_) + " given " + std::to_string(data_.size()) + " values");
    }
  }

  int height() const { return extent_.height; }
  int width() const { return extent_.width; }
  Extent extent() const { return extent_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int y, int x) { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static std::size_t checked_size(int height, int width) {
    if (height < 1 || width < 1) {
      throw ExtentMismatch("grid extent must be at least 1x1, got " + std::to_string(height) + "x" +
                           std::to_string(width));
    }
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(extent_.width) + static_cast<std::size_t>(x);
  }

  Extent extent_{};
  std::vector<T> data_;
};

/// Three-channel image with values in [0,1], stored channel-planar (CHW).
/// Construction does not validate; use check_image or validate_pair.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int height, int width, float fill = 0.0f);
  ImageTensor(int height, int width, std::vector<float> chw);

  int height() const { return extent_.height; }
  int width() const { return extent_.width; }
  Extent extent() const { return extent_; }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * extent_.height + y) * extent_.width + x;
  }
  Extent extent_{};
  std::vector<float> data_;
};

/// Ground truth or binarized prediction; every pixel is 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : grid_(height, width, 0) {}
  /// Throws NonBinaryMask if any value is not 0 or 1.
  explicit BinaryMask(Grid<std::uint8_t> grid);
  /// Accepts real-valued input that must be exactly 0 or 1.
  static BinaryMask from_values(const Grid<double>& raw, std::string_view context = {});

  int height() const { return grid_.height(); }
  int width() const { return grid_.width(); }
  Extent extent() const { return grid_.extent(); }
  std::size_t size() const { return grid_.size(); }

  bool operator()(int y, int x) const { return grid_(y, x) != 0; }
  bool operator[](std::size_t i) const { return grid_[i] != 0; }
  void set(int y, int x, bool on) { grid_(y, x) = on ? 1 : 0; }
  void set(std::size_t i, bool on) { grid_[i] = on ? 1 : 0; }

  std::size_t count() const;
  const Grid<std::uint8_t>& grid() const { return grid_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Grid<std::uint8_t> grid_;
};

/// Per-pixel foreground probability in [0,1].
class ProbabilityMask {
 public:
  ProbabilityMask() = default;
  ProbabilityMask(int height, int width, double fill = 0.0);
  /// Throws NonFiniteValue / OutOfRange when a value is not a finite number in [0,1].
  explicit ProbabilityMask(Grid<double> grid);

  int height() const { return grid_.height(); }
  int width() const { return grid_.width(); }
  Extent extent() const { return grid_.extent(); }
  std::size_t size() const { return grid_.size(); }

  double operator()(int y, int x) const { return grid_(y, x); }
  double operator[](std::size_t i) const { return grid_[i]; }
  std::span<const double> values() const { return grid_.values(); }
  const Grid<double>& grid() const { return grid_; }

  static ProbabilityMask from(const BinaryMask& mask);

  friend bool operator==(const ProbabilityMask&, const ProbabilityMask&) = default;

 private:
  Grid<double> grid_;
};

struct LabeledImage {
  ImageTensor image;
  BinaryMask mask;
};

/// Throws NonFiniteValue / OutOfRange naming the first offending pixel.
void check_image(const ImageTensor& image, std::string_view context = {});

/// Checks image invariants, that the mask is binary and that extents agree.
LabeledImage validate_pair(const ImageTensor& image, const Grid<double>& mask, std::string_view context = {});
LabeledImage validate_pair(const ImageTensor& image, const BinaryMask& mask, std::string_view context = {});

/// Pixel is 1 iff p >= threshold. threshold must lie in (0,1).
BinaryMask binarize(const ProbabilityMask& p, double threshold = 0.5);

enum class SourceTag { DDR, IDRiD, SYNTH };

std::string_view to_string(SourceTag tag);
SourceTag parse_source_tag(std::string_view text);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
};

/// Tab-separated list of image/mask paths. Relative paths resolve against the
/// manifest's own directory. Optional header lines `# split: <name>` and
/// `# source: <DDR|IDRiD|SYNTH>` set the metadata.
struct DatasetManifest {
  std::string split = "train";
  SourceTag source = SourceTag::SYNTH;
  std::vector<ManifestEntry> entries;
};

/// Parses and checks that every listed file exists.
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest directory when possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace dsm
