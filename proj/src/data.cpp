#include "dsm/data.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "dsm/image_io.hpp"
#include "dsm/log.hpp"
#include "dsm/metrics.hpp"
#include "json.hpp"

namespace dsm {

namespace {

cv::Mat to_mat(const ImageTensor& image) {
  cv::Mat m(image.height(), image.width(), CV_32FC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][c] = image.at(c, y, x);
    }
  }
  return m;
}

ImageTensor from_mat(const cv::Mat& m) {
  ImageTensor image(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = std::clamp(row[x][c], 0.0f, 1.0f);
    }
  }
  return image;
}

void check_box(Extent e, const BoundingBox& box) {
  if (box.width < 1 || box.height < 1 || box.x < 0 || box.y < 0 || box.x + box.width > e.width ||
      box.y + box.height > e.height) {
    throw OutOfRange("bounding box outside " + to_string(e));
  }
}

struct SourceMap {
  Extent out;
  int h;
  int w;
  Augmentation a;

  // Input coordinate for output pixel (y, x).
  std::pair<int, int> operator()(int y, int x) const {
    switch (a) {
      case Augmentation::kIdentity: return {y, x};
      case Augmentation::kRot90: return {h - 1 - x, y};
      case Augmentation::kRot180: return {h - 1 - y, w - 1 - x};
      case Augmentation::kRot270: return {x, w - 1 - y};
      case Augmentation::kHFlip: return {y, w - 1 - x};
      case Augmentation::kVFlip: return {h - 1 - y, x};
    }
    return {y, x};
  }
};

SourceMap source_map(Extent in, Augmentation a) {
  const bool swap = a == Augmentation::kRot90 || a == Augmentation::kRot270;
  return {swap ? Extent{in.width, in.height} : in, in.height, in.width, a};
}

}  // namespace

BoundingBox detect_fov_bbox(const ImageTensor& image, double threshold) {
  check_image(image, "fov detection");
  BinaryMask bright(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float m = std::max({image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)});
      bright.set(y, x, m > threshold);
    }
  }
  const auto comps = connected_components(bright, 8);
  if (comps.empty()) {
    log_warning("no pixel above the field-of-view threshold; using the full frame");
    return {0, 0, image.width(), image.height()};
  }
  const auto largest = std::max_element(comps.begin(), comps.end(),
                                        [](const Component& a, const Component& b) { return a.size() < b.size(); });
  const auto w = static_cast<std::size_t>(image.width());
  int x0 = image.width(), y0 = image.height(), x1 = -1, y1 = -1;
  for (auto idx : *largest) {
    const int y = static_cast<int>(idx / w);
    const int x = static_cast<int>(idx % w);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

PreprocessSpec PreprocessSpec::ddr() { return {PreprocessMode::kFovCropPadResize, {1024, 1024}, 10.0 / 255.0}; }

PreprocessSpec PreprocessSpec::idrid() { return {PreprocessMode::kDirectResize, {960, 1440}, 10.0 / 255.0}; }

void PreprocessSpec::validate() const {
  if (target.height < 1 || target.width < 1) throw OutOfRange("preprocess target extent must be positive");
  if (mode == PreprocessMode::kFovCropPadResize && !(fov_threshold >= 0.0 && fov_threshold < 1.0)) {
    throw OutOfRange("fov threshold must lie in [0,1)");
  }
}

ImageTensor crop(const ImageTensor& image, const BoundingBox& box) {
  check_box(image.extent(), box);
  ImageTensor out(box.height, box.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < box.height; ++y) {
      for (int x = 0; x < box.width; ++x) out.at(c, y, x) = image.at(c, box.y + y, box.x + x);
    }
  }
  return out;
}

BinaryMask crop(const BinaryMask& mask, const BoundingBox& box) {
  check_box(mask.extent(), box);
  BinaryMask out(box.height, box.width);
  for (int y = 0; y < box.height; ++y) {
    for (int x = 0; x < box.width; ++x) out.set(y, x, mask(box.y + y, box.x + x));
  }
  return out;
}

ImageTensor pad_to_square(const ImageTensor& image) {
  const int side = std::max(image.height(), image.width());
  const int oy = (side - image.height()) / 2;
  const int ox = (side - image.width()) / 2;
  ImageTensor out(side, side);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) out.at(c, oy + y, ox + x) = image.at(c, y, x);
    }
  }
  return out;
}

BinaryMask pad_to_square(const BinaryMask& mask) {
  const int side = std::max(mask.height(), mask.width());
  const int oy = (side - mask.height()) / 2;
  const int ox = (side - mask.width()) / 2;
  BinaryMask out(side, side);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) out.set(oy + y, ox + x, mask(y, x));
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& image, Extent target) {
  if (image.extent() == target) return image;
  cv::Mat out;
  cv::resize(to_mat(image), out, cv::Size(target.width, target.height), 0, 0, cv::INTER_LINEAR);
  return from_mat(out);
}

BinaryMask resize_nearest(const BinaryMask& mask, Extent target) {
  if (mask.extent() == target) return mask;
  cv::Mat in(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) in.at<std::uint8_t>(y, x) = mask(y, x) ? 1 : 0;
  }
  cv::Mat out;
  cv::resize(in, out, cv::Size(target.width, target.height), 0, 0, cv::INTER_NEAREST);
  BinaryMask result(target.height, target.width);
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) result.set(y, x, out.at<std::uint8_t>(y, x) != 0);
  }
  return result;
}

LabeledImage preprocess(const ImageTensor& image, const BinaryMask& mask, const PreprocessSpec& spec) {
  spec.validate();
  LabeledImage pair = validate_pair(image, mask, "preprocess");
  if (spec.mode == PreprocessMode::kFovCropPadResize) {
    const BoundingBox box = detect_fov_bbox(pair.image, spec.fov_threshold);
    pair.image = crop(pair.image, box);
    pair.mask = crop(pair.mask, box);
    const int short_side = std::min(box.height, box.width);
    const int target_side = std::min(spec.target.height, spec.target.width);
    const bool pad = box.height != box.width &&
                     (spec.pad_rule == PadRule::kAlways || short_side < target_side);
    if (pad) {
      pair.image = pad_to_square(pair.image);
      pair.mask = pad_to_square(pair.mask);
    }
  }
  pair.image = resize_bilinear(pair.image, spec.target);
  pair.mask = resize_nearest(pair.mask, spec.target);
  return pair;
}

std::string_view to_string(Augmentation a) {
  switch (a) {
    case Augmentation::kIdentity: return "identity";
    case Augmentation::kRot90: return "rot90";
    case Augmentation::kRot180: return "rot180";
    case Augmentation::kRot270: return "rot270";
    case Augmentation::kHFlip: return "hflip";
    case Augmentation::kVFlip: return "vflip";
  }
  return "unknown";
}

ImageTensor apply_augmentation(const ImageTensor& image, Augmentation a) {
  const SourceMap map = source_map(image.extent(), a);
  ImageTensor out(map.out.height, map.out.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < map.out.height; ++y) {
      for (int x = 0; x < map.out.width; ++x) {
        const auto [sy, sx] = map(y, x);
        out.at(c, y, x) = image.at(c, sy, sx);
      }
    }
  }
  return out;
}

BinaryMask apply_augmentation(const BinaryMask& mask, Augmentation a) {
  const SourceMap map = source_map(mask.extent(), a);
  BinaryMask out(map.out.height, map.out.width);
  for (int y = 0; y < map.out.height; ++y) {
    for (int x = 0; x < map.out.width; ++x) {
      const auto [sy, sx] = map(y, x);
      out.set(y, x, mask(sy, sx));
    }
  }
  return out;
}

LabeledImage apply_augmentation(const LabeledImage& pair, Augmentation a) {
  return {apply_augmentation(pair.image, a), apply_augmentation(pair.mask, a)};
}

std::vector<LabeledImage> augment(const LabeledImage& pair) {
  std::vector<LabeledImage> out;
  out.reserve(kAllAugmentations.size());
  for (auto a : kAllAugmentations) out.push_back(apply_augmentation(pair, a));
  return out;
}

double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q) {
  if (value_weight.empty()) throw ValidationError("quantile of an empty distribution");
  if (!(q >= 0.0 && q <= 1.0)) throw OutOfRange("quantile must lie in [0,1]");
  std::sort(value_weight.begin(), value_weight.end());
  double total = 0.0;
  for (const auto& [v, w] : value_weight) total += w;
  const double target = q * total;
  double cum = 0.0;
  for (const auto& [v, w] : value_weight) {
    cum += w;
    if (cum >= target) return v;
  }
  return value_weight.back().first;
}

DatasetStats dataset_stats(std::span<const BinaryMask> masks, const StatsOptions& options) {
  DatasetStats stats;
  std::vector<std::pair<double, double>> areas;
  for (const auto& mask : masks) {
    const auto fg = mask.count();
    stats.foreground_pixels += fg;
    stats.background_pixels += mask.size() - fg;
    ++stats.n_images;
    for (const auto& comp : connected_components(mask, options.connectivity)) {
      const double rel = static_cast<double>(comp.size()) / static_cast<double>(mask.size());
      const double weight = options.weighting == PercentileWeighting::kPixel ? static_cast<double>(comp.size()) : 1.0;
      areas.emplace_back(rel, weight);
    }
  }
  if (stats.foreground_pixels == 0) {
    throw ValidationError("no foreground pixels in " + std::to_string(stats.n_images) +
                          " masks; background/foreground ratio undefined");
  }
  stats.n_components = areas.size();
  stats.ratio_neg_pos = static_cast<double>(stats.background_pixels) / static_cast<double>(stats.foreground_pixels);
  stats.size_large = weighted_quantile(areas, options.large_quantile);
  stats.size_small = weighted_quantile(std::move(areas), options.small_quantile);
  return stats;
}

DatasetStats dataset_stats(const DatasetManifest& manifest, const StatsOptions& options) {
  std::vector<BinaryMask> masks;
  masks.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) masks.push_back(read_mask(e.mask));
  return dataset_stats(masks, options);
}

std::string to_json(const DatasetStats& stats, int indent) {
  nlohmann::json j{{"ratio_neg_pos", stats.ratio_neg_pos}, {"size_large", stats.size_large},
                   {"size_small", stats.size_small},       {"n_images", stats.n_images},
                   {"n_components", stats.n_components},   {"foreground_pixels", stats.foreground_pixels},
                   {"background_pixels", stats.background_pixels}};
  return j.dump(indent);
}

}  // namespace dsm
