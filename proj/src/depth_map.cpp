#include "visionsim/depth_map.hpp"

#include <string>

#include "visionsim/error.hpp"

namespace visionsim {

DepthMap::DepthMap(std::size_t width, std::size_t height, float fill)
    : width_(width), height_(height) {
  if (width == 0 || height == 0) throw DomainError("depth map must be at least 1x1");
  if (!is_valid_depth(fill) && !std::isnan(fill)) {
    throw DomainError("depth fill value must be positive or invalid");
  }
  depths_.assign(width * height, fill);
}

void DepthMap::set(std::size_t x, std::size_t y, float meters) {
  if (x >= width_ || y >= height_) throw DomainError("depth map index out of range");
  if (!is_valid_depth(meters) && !std::isnan(meters)) {
    throw DomainError("depth must be positive and finite, got " + std::to_string(meters));
  }
  depths_[y * width_ + x] = meters;
}

}  // namespace visionsim
