#pragma once

#include <cstddef>
#include <utility>

#include "visionsim/blur.hpp"
#include "visionsim/depth_map.hpp"
#include "visionsim/image.hpp"
#include "visionsim/layout.hpp"

namespace visionsim {

/// Half-open pixel rectangle, clipped to the image.
struct PixelRect {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t x1 = 0;
  std::size_t y1 = 0;

  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

/// Linear angular projection shared by rendering and gaze lookup; the view
/// center maps to the image center.
optics::PixelPoint angles_to_pixel(const ViewGeometry& geometry, double lateral_deg,
                                   double vertical_deg);
std::pair<double, double> pixel_to_angles(const ViewGeometry& geometry, optics::PixelPoint p);

PixelRect screen_rect(const task::Screen& screen, const ViewGeometry& geometry);

/// Flat-shaded office stand-in: back wall and floor at the layout's
/// background distance, screens painted far to near with ground-truth depth.
std::pair<RgbImage, DepthMap> render_office_scene(const task::SceneLayout& layout,
                                                  const ViewGeometry& geometry);

}  // namespace visionsim
