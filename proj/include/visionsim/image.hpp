#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace visionsim {

/// Linear RGB raster, channels interleaved, values nominally in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height, std::array<float, 3> fill = {0.f, 0.f, 0.f});

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }

  float& at(std::size_t x, std::size_t y, std::size_t channel) {
    return data_[(y * width_ + x) * 3 + channel];
  }
  float at(std::size_t x, std::size_t y, std::size_t channel) const {
    return data_[(y * width_ + x) * 3 + channel];
  }

  void set(std::size_t x, std::size_t y, std::array<float, 3> rgb) {
    float* p = &data_[(y * width_ + x) * 3];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> data_;
};

}  // namespace visionsim
