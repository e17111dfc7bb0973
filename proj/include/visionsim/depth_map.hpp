#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace visionsim {

/// Per-pixel viewing distance in meters, row-major with row 0 at the top.
/// A stored value is either a positive finite distance or `kInvalid`.
class DepthMap {
 public:
  static constexpr float kInvalid = std::numeric_limits<float>::quiet_NaN();

  static bool is_valid_depth(float meters) noexcept {
    return std::isfinite(meters) && meters > 0.0f;
  }

  DepthMap(std::size_t width, std::size_t height, float fill = kInvalid);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }

  float at(std::size_t x, std::size_t y) const { return depths_[y * width_ + x]; }
  bool valid(std::size_t x, std::size_t y) const { return is_valid_depth(at(x, y)); }

  /// Throws DomainError unless `meters` is a valid depth or `kInvalid`.
  void set(std::size_t x, std::size_t y, float meters);

  std::span<const float> values() const noexcept { return depths_; }

 private:
  std::size_t width_;
  std::size_t height_;
  std::vector<float> depths_;
};

}  // namespace visionsim
