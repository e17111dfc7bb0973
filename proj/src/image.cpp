#include "visionsim/image.hpp"

namespace visionsim {

RgbImage::RgbImage(std::size_t width, std::size_t height, std::array<float, 3> fill)
    : width_(width), height_(height), data_(width * height * 3) {
  for (std::size_t i = 0; i < width * height; ++i) {
    data_[i * 3 + 0] = fill[0];
    data_[i * 3 + 1] = fill[1];
    data_[i * 3 + 2] = fill[2];
  }
}

}  // namespace visionsim
