#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsm/core_types.hpp"

namespace dsm {

/// Fundus-like test images: dark frame, noisy bright disc, a pale distractor
/// disc, and yellow elliptical lesions drawn from two size modes.
struct SynthSpec {
  int count = 20;
  Extent extent{64, 64};
  double imbalance_ratio = 500.0;  // background / foreground pixels over the whole set
  double large_fraction = 0.1;     // share of components in the large mode
  int small_area = 2;              // pixels per small component
  double area_ratio = 50.0;        // large area / small area
  double noise = 0.03;
  bool distractor = true;
  std::uint64_t seed = 0;
  std::string split = "train";

  int large_area() const;
  void validate() const;
};

struct SynthImage {
  std::string id;
  LabeledImage pair;
  std::vector<int> component_areas;
};

/// In-memory dataset. Throws ValidationError when the lesions cannot be
/// placed without overlap.
std::vector<SynthImage> synth_images(const SynthSpec& spec);

/// Writes images/<id>.png, masks/<id>.png and <split>.tsv under dir.
DatasetManifest synth_generate(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace dsm
