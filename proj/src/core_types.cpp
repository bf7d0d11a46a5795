#include "dsm/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dsm {

namespace {

std::string where(std::string_view context) {
  return context.empty() ? std::string{} : std::string(context) + ": ";
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string to_string(const Extent& e) { return std::to_string(e.height) + "x" + std::to_string(e.width); }

ImageTensor::ImageTensor(int height, int width, float fill)
    : extent_{height, width}, data_(Grid<float>(height, width).size() * kChannels, fill) {}

ImageTensor::ImageTensor(int height, int width, std::vector<float> chw) : extent_{height, width}, data_(std::move(chw)) {
  const std::size_t expected = Grid<float>(height, width).size() * kChannels;
  if (data_.size() != expected) {
    throw ExtentMismatch("image of " + to_string(extent_) + " given " + std::to_string(data_.size()) +
                         " values, expected " + std::to_string(expected));
  }
}

BinaryMask::BinaryMask(Grid<std::uint8_t> grid) : grid_(std::move(grid)) {
  for (int y = 0; y < grid_.height(); ++y) {
    for (int x = 0; x < grid_.width(); ++x) {
      if (grid_(y, x) > 1) {
        throw NonBinaryMask("mask value " + std::to_string(grid_(y, x)) + " at (" + std::to_string(y) + "," +
                            std::to_string(x) + ") is not 0 or 1");
      }
    }
  }
}

BinaryMask BinaryMask::from_values(const Grid<double>& raw, std::string_view context) {
  BinaryMask out(raw.height(), raw.width());
  for (int y = 0; y < raw.height(); ++y) {
    for (int x = 0; x < raw.width(); ++x) {
      const double v = raw(y, x);
      if (v != 0.0 && v != 1.0) {
        std::ostringstream msg;
        msg << where(context) << "mask value " << v << " at (" << y << "," << x << ") is not 0 or 1";
        throw NonBinaryMask(msg.str());
      }
      out.set(y, x, v == 1.0);
    }
  }
  return out;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(grid_.values().begin(), grid_.values().end(), std::uint8_t{1}));
}

ProbabilityMask::ProbabilityMask(int height, int width, double fill) : ProbabilityMask(Grid<double>(height, width, fill)) {}

ProbabilityMask::ProbabilityMask(Grid<double> grid) : grid_(std::move(grid)) {
  for (int y = 0; y < grid_.height(); ++y) {
    for (int x = 0; x < grid_.width(); ++x) {
      const double v = grid_(y, x);
      if (!std::isfinite(v)) {
        throw NonFiniteValue("probability at (" + std::to_string(y) + "," + std::to_string(x) + ") is not finite");
      }
      if (v < 0.0 || v > 1.0) {
        std::ostringstream msg;
        msg << "probability " << v << " at (" << y << "," << x << ") outside [0,1]";
        throw OutOfRange(msg.str());
      }
    }
  }
}

ProbabilityMask ProbabilityMask::from(const BinaryMask& mask) {
  Grid<double> g(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 1.0 : 0.0;
  return ProbabilityMask(std::move(g));
}

void check_image(const ImageTensor& image, std::string_view context) {
  if (image.height() < 1 || image.width() < 1) {
    throw ExtentMismatch(where(context) + "empty image");
  }
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const float v = image.at(c, y, x);
        if (!std::isfinite(v)) {
          throw NonFiniteValue(where(context) + "non-finite pixel at (" + std::to_string(y) + "," +
                               std::to_string(x) + ") channel " + std::to_string(c));
        }
        if (v < 0.0f || v > 1.0f) {
          std::ostringstream msg;
          msg << where(context) << "pixel value " << v << " at (" << y << "," << x << ") channel " << c
              << " outside [0,1]";
          throw OutOfRange(msg.str());
        }
      }
    }
  }
}

LabeledImage validate_pair(const ImageTensor& image, const Grid<double>& mask, std::string_view context) {
  if (image.extent() != mask.extent()) {
    throw ExtentMismatch(where(context) + "image is " + to_string(image.extent()) + " but mask is " +
                         to_string(mask.extent()));
  }
  check_image(image, context);
  return {image, BinaryMask::from_values(mask, context)};
}

LabeledImage validate_pair(const ImageTensor& image, const BinaryMask& mask, std::string_view context) {
  if (image.extent() != mask.extent()) {
    throw ExtentMismatch(where(context) + "image is " + to_string(image.extent()) + " but mask is " +
                         to_string(mask.extent()));
  }
  check_image(image, context);
  return {image, mask};
}

BinaryMask binarize(const ProbabilityMask& p, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw OutOfRange("binarization threshold must lie in (0,1), got " + std::to_string(threshold));
  }
  BinaryMask out(p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) out.set(i, p[i] >= threshold);
  return out;
}

std::string_view to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::DDR:
      return "DDR";
    case SourceTag::IDRiD:
      return "IDRiD";
    case SourceTag::SYNTH:
      return "SYNTH";
  }
  return "SYNTH";
}

SourceTag parse_source_tag(std::string_view text) {
  if (text == "DDR") return SourceTag::DDR;
  if (text == "IDRiD") return SourceTag::IDRiD;
  if (text == "SYNTH") return SourceTag::SYNTH;
  throw ValidationError("unknown dataset source tag '" + std::string(text) + "'");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  DatasetManifest manifest;
  manifest.split = path.stem().string();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      const std::string body = trim(std::string_view(line).substr(1));
      const auto colon = body.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(std::string_view(body).substr(0, colon));
      const std::string value = trim(std::string_view(body).substr(colon + 1));
      if (key == "split") manifest.split = value;
      if (key == "source") manifest.source = parse_source_tag(value);
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected exactly two tab-separated fields");
    }
    ManifestEntry entry{line.substr(0, tab), line.substr(tab + 1)};
    for (auto* p : {&entry.image, &entry.mask}) {
      if (p->is_relative()) *p = base / *p;
      if (!std::filesystem::exists(*p)) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": missing file " + p->string());
      }
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return std::filesystem::proximate(std::filesystem::absolute(p), std::filesystem::absolute(base)).generic_string();
  };
  out << "# split: " << manifest.split << "\n";
  out << "# source: " << to_string(manifest.source) << "\n";
  for (const auto& e : manifest.entries) out << rel(e.image) << '\t' << rel(e.mask) << '\n';
}

}  // namespace dsm
