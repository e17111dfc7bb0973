#include "visionsim/office_scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace visionsim {

namespace {

using Rgb = std::array<float, 3>;

constexpr std::array<Rgb, 4> kScreenTints = {{
    {0.92f, 0.93f, 0.95f},
    {0.95f, 0.94f, 0.88f},
    {0.88f, 0.94f, 0.92f},
    {0.93f, 0.90f, 0.95f},
}};

long clamp_px(double v, std::size_t limit) {
  return std::clamp(static_cast<long>(std::lround(v)), 0L, static_cast<long>(limit));
}

}  // namespace

optics::PixelPoint angles_to_pixel(const ViewGeometry& geometry, double lateral_deg,
                                   double vertical_deg) {
  const double pitch_deg = pixel_pitch(geometry) / 60.0;
  return {static_cast<double>(geometry.image_width) * 0.5 + lateral_deg / pitch_deg,
          static_cast<double>(geometry.image_height) * 0.5 - vertical_deg / pitch_deg};
}

std::pair<double, double> pixel_to_angles(const ViewGeometry& geometry, optics::PixelPoint p) {
  const double pitch_deg = pixel_pitch(geometry) / 60.0;
  return {(p.x - static_cast<double>(geometry.image_width) * 0.5) * pitch_deg,
          (static_cast<double>(geometry.image_height) * 0.5 - p.y) * pitch_deg};
}

PixelRect screen_rect(const task::Screen& screen, const ViewGeometry& geometry) {
  const auto top_left = angles_to_pixel(geometry, screen.lateral_offset - screen.half_width(),
                                        screen.vertical_offset + screen.half_height());
  const auto bottom_right = angles_to_pixel(geometry, screen.lateral_offset + screen.half_width(),
                                            screen.vertical_offset - screen.half_height());
  return {static_cast<std::size_t>(clamp_px(top_left.x, geometry.image_width)),
          static_cast<std::size_t>(clamp_px(top_left.y, geometry.image_height)),
          static_cast<std::size_t>(clamp_px(bottom_right.x, geometry.image_width)),
          static_cast<std::size_t>(clamp_px(bottom_right.y, geometry.image_height))};
}

std::pair<RgbImage, DepthMap> render_office_scene(const task::SceneLayout& layout,
                                                  const ViewGeometry& geometry) {
  layout.validate(false);
  const std::size_t w = geometry.image_width;
  const std::size_t h = geometry.image_height;
  const auto background = static_cast<float>(layout.background_distance);
  RgbImage image(w, h);
  DepthMap depth(w, h, background);

  const double floor_line = angles_to_pixel(geometry, 0.0, -15.0).y;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const bool floor = static_cast<double>(y) >= floor_line;
      // Wall panels every 10 degrees give the far field some structure.
      const double lateral = pixel_to_angles(geometry, {static_cast<double>(x) + 0.5, 0.0}).first;
      const bool seam = std::fmod(std::abs(lateral) + 0.5, 10.0) < 1.0;
      Rgb c = floor ? Rgb{0.42f, 0.36f, 0.30f} : Rgb{0.74f, 0.71f, 0.64f};
      if (seam && !floor) c = {0.55f, 0.52f, 0.47f};
      image.set(x, y, c);
    }
  }

  std::vector<std::size_t> order(layout.screens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return layout.screens[a].distance > layout.screens[b].distance;
  });

  for (std::size_t idx : order) {
    const auto& screen = layout.screens[idx];
    const PixelRect r = screen_rect(screen, geometry);
    if (r.empty()) continue;
    const auto d = static_cast<float>(screen.distance);
    const double sw = static_cast<double>(r.x1 - r.x0);
    const double sh = static_cast<double>(r.y1 - r.y0);
    const double bezel = std::max(1.0, 0.06 * std::min(sw, sh));
    const Rgb tint = kScreenTints[idx % kScreenTints.size()];
    for (std::size_t y = r.y0; y < r.y1; ++y) {
      for (std::size_t x = r.x0; x < r.x1; ++x) {
        const double lx = static_cast<double>(x - r.x0);
        const double ly = static_cast<double>(y - r.y0);
        const bool on_bezel = lx < bezel || ly < bezel || lx >= sw - bezel || ly >= sh - bezel;
        Rgb c = tint;
        if (on_bezel) {
          c = {0.08f, 0.08f, 0.09f};
        } else {
          // Text-like bars: dark lines on alternate bands of the panel.
          const double band = (ly - bezel) / std::max(1.0, (sh - 2.0 * bezel) / 12.0);
          const auto line = static_cast<long>(band);
          const double margin = (lx - bezel) / std::max(1.0, sw - 2.0 * bezel);
          if (line % 2 == 1 && margin > 0.1 && margin < 0.9 - 0.05 * static_cast<double>(line % 5)) {
            c = {0.15f, 0.15f, 0.18f};
          }
        }
        image.set(x, y, c);
        depth.set(x, y, d);
      }
    }
  }
  return {std::move(image), std::move(depth)};
}

}  // namespace visionsim
