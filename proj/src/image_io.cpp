#include "dsm/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dsm {

namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw RuntimeFailure("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw RuntimeFailure("cannot write " + path.string());
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageTensor read_image(const std::filesystem::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw ValidationError("cannot read image " + path.string());
  ImageTensor img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      // OpenCV stores BGR.
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
  }
  return img;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw ValidationError("cannot read mask " + path.string());
  BinaryMask mask(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) mask.set(y, x, row[x] > 127);
  }
  return mask;
}

void write_image(const std::filesystem::path& path, const ImageTensor& image) {
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(image.at(c, y, x));
    }
  }
  write_or_throw(path, m);
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = mask(y, x) ? 255 : 0;
  }
  write_or_throw(path, m);
}

void write_probability(const std::filesystem::path& path, const ProbabilityMask& prob) {
  cv::Mat m(prob.height(), prob.width(), CV_8UC1);
  for (int y = 0; y < prob.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < prob.width(); ++x) row[x] = to_byte(prob(y, x));
  }
  write_or_throw(path, m);
}

LabeledImage load_entry(const ManifestEntry& entry) {
  const ImageTensor image = read_image(entry.image);
  const BinaryMask mask = read_mask(entry.mask);
  return validate_pair(image, mask, entry.image.filename().string());
}

}  // namespace dsm
