#pragma once

#include <filesystem>

#include "dsm/core_types.hpp"

namespace dsm {

/// 8-bit colour file to [0,1] RGB. Grey files are replicated to three channels.
ImageTensor read_image(const std::filesystem::path& path);
/// 8-bit single-channel file; values above 127 become foreground.
BinaryMask read_mask(const std::filesystem::path& path);

/// Values are clamped to [0,1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const ImageTensor& image);
/// Written as 0/255.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);
void write_probability(const std::filesystem::path& path, const ProbabilityMask& prob);

LabeledImage load_entry(const ManifestEntry& entry);

}  // namespace dsm
