#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "visionsim/depth_map.hpp"
#include "visionsim/image.hpp"
#include "visionsim/optics.hpp"

namespace visionsim {

struct ViewGeometry {
  double horizontal_fov = 100.0;  // degrees, (0, 180)
  std::size_t image_width = 640;
  std::size_t image_height = 360;

  void validate() const;
};

/// Angular size of one pixel; the mapping is linear in angle in both axes.
double pixel_pitch(const ViewGeometry& geometry);

/// Blur ellipse of one pixel, in pixels. Orientation is the major-axis
/// direction in degrees, counter-clockwise from the +x image axis.
struct PixelBlur {
  float major = 0.0f;
  float minor = 0.0f;
  float orientation = 0.0f;

  bool operator==(const PixelBlur&) const = default;
};

class BlurField {
 public:
  BlurField(std::size_t width, std::size_t height);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }

  PixelBlur& at(std::size_t x, std::size_t y) { return cells_[y * width_ + x]; }
  const PixelBlur& at(std::size_t x, std::size_t y) const { return cells_[y * width_ + x]; }

  bool operator==(const BlurField&) const = default;

 private:
  std::size_t width_;
  std::size_t height_;
  std::vector<PixelBlur> cells_;
};

/// Angular blur below this is dropped (below display resolution).
inline constexpr double kBlurFloorArcmin = 0.5;
/// Blur diameters are capped at this fraction of the image width.
inline constexpr double kMaxBlurFractionOfWidth = 0.25;

BlurField compute_blur_field(const DepthMap& depth, const optics::RefractionProfile& profile,
                             const optics::FocusState& focus, const optics::PowerMap* power_map,
                             const ViewGeometry& geometry);

/// Flat elliptical gather: each output pixel is the mean of the in-bounds
/// source pixels inside its own ellipse. Ellipses under 1 px pass through.
RgbImage apply_blur(const RgbImage& image, const BlurField& field);

/// Runs `body(row_begin, row_end)` over horizontal bands on worker threads.
void for_each_row_band(std::size_t rows, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace visionsim
