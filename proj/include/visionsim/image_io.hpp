#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "visionsim/depth_map.hpp"
#include "visionsim/image.hpp"

namespace visionsim {

class BlurField;

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// Single-channel PFM in meters. Rows are stored bottom-up as the format
/// requires; non-positive or non-finite samples load as invalid.
DepthMap read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const DepthMap& depth);

/// 16-bit grayscale PNG in millimeters; 0 means invalid.
DepthMap read_depth_png16(const std::filesystem::path& path);
void write_depth_png16(const std::filesystem::path& path, const DepthMap& depth);

/// Dispatches on file magic: PFM, otherwise PNG16.
DepthMap read_depth(const std::filesystem::path& path);

/// Major blur axis in pixels as a single-channel PFM.
void write_field_heatmap(const std::filesystem::path& path, const BlurField& field);

}  // namespace visionsim
