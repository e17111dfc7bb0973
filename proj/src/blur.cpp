#include "visionsim/blur.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "visionsim/error.hpp"

namespace visionsim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBoundaryEps = 1e-9;

}  // namespace

void ViewGeometry::validate() const {
  if (!(horizontal_fov > 0.0 && horizontal_fov < 180.0)) {
    throw DomainError("horizontal_fov must be in (0, 180) degrees");
  }
  if (image_width == 0 || image_height == 0) throw DomainError("image dimensions must be >= 1");
}

double pixel_pitch(const ViewGeometry& geometry) {
  geometry.validate();
  return geometry.horizontal_fov * 60.0 / static_cast<double>(geometry.image_width);
}

BlurField::BlurField(std::size_t width, std::size_t height)
    : width_(width), height_(height), cells_(width * height) {}

void for_each_row_band(std::size_t rows, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(rows, 1));
  if (workers <= 1) {
    body(0, rows);
    return;
  }
  const std::size_t band = (rows + workers - 1) / workers;
  std::vector<std::jthread> pool;
  for (std::size_t begin = 0; begin < rows; begin += band) {
    pool.emplace_back([&body, begin, end = std::min(rows, begin + band)] { body(begin, end); });
  }
}

BlurField compute_blur_field(const DepthMap& depth, const optics::RefractionProfile& profile,
                             const optics::FocusState& focus, const optics::PowerMap* power_map,
                             const ViewGeometry& geometry) {
  profile.validate();
  focus.validate();
  if (geometry.image_width != depth.width() || geometry.image_height != depth.height()) {
    throw DomainError("depth map is " + std::to_string(depth.width()) + "x" +
                      std::to_string(depth.height()) + " but view geometry is " +
                      std::to_string(geometry.image_width) + "x" +
                      std::to_string(geometry.image_height));
  }
  const double pitch = pixel_pitch(geometry);
  const double cap = kMaxBlurFractionOfWidth * static_cast<double>(depth.width());
  const double w = static_cast<double>(depth.width());
  const double h = static_cast<double>(depth.height());

  BlurField field(depth.width(), depth.height());
  for_each_row_band(depth.height(), [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = 0; x < depth.width(); ++x) {
        const float d = depth.at(x, y);
        if (!DepthMap::is_valid_depth(d)) continue;
        double lens = focus.lens_power;
        if (power_map != nullptr) {
          lens += optics::progressive_add(*power_map, (static_cast<double>(x) + 0.5) / w,
                                          (static_cast<double>(y) + 0.5) / h);
        }
        const auto e = optics::blur_ellipse(profile, lens, optics::vergence_from_distance(d),
                                            focus.pupil_diameter);
        const double major = e.major < kBlurFloorArcmin ? 0.0 : std::min(e.major / pitch, cap);
        const double minor = e.minor < kBlurFloorArcmin ? 0.0 : std::min(e.minor / pitch, cap);
        field.at(x, y) = {static_cast<float>(major), static_cast<float>(minor),
                          static_cast<float>(e.orientation)};
      }
    }
  });
  return field;
}

RgbImage apply_blur(const RgbImage& image, const BlurField& field) {
  if (image.width() != field.width() || image.height() != field.height()) {
    throw DomainError("image and blur field dimensions differ");
  }
  const std::size_t width = image.width();
  const std::size_t height = image.height();
  const std::size_t stride = width + 1;

  // Per-row, per-channel prefix sums in double. A constant row sums exactly,
  // so flat fields come back unchanged.
  std::vector<double> prefix(height * stride * 3, 0.0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t c = 0; c < 3; ++c) {
      double* row = &prefix[(c * height + y) * stride];
      for (std::size_t x = 0; x < width; ++x) row[x + 1] = row[x] + image.at(x, y, c);
    }
  }

  RgbImage out = image;
  const long iw = static_cast<long>(width);
  const long ih = static_cast<long>(height);
  for_each_row_band(height, [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const PixelBlur& cell = field.at(x, y);
        if (cell.major < 1.0f) continue;
        const double a = std::max(0.5, 0.5 * cell.major);
        const double b = std::max(0.5, 0.5 * static_cast<double>(cell.minor));
        const double theta = cell.orientation * kPi / 180.0;
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        // Image y grows downward, so the major axis points along (c, -s).
        const double ia2 = 1.0 / (a * a);
        const double ib2 = 1.0 / (b * b);
        const double qa = c * c * ia2 + s * s * ib2;
        const double half_height = std::sqrt(a * a * s * s + b * b * c * c);
        const long reach = static_cast<long>(std::floor(half_height + kBoundaryEps));

        double sum[3] = {0.0, 0.0, 0.0};
        long count = 0;
        const long px = static_cast<long>(x);
        const long py = static_cast<long>(y);
        for (long dy = -reach; dy <= reach; ++dy) {
          const long sy = py + dy;
          if (sy < 0 || sy >= ih) continue;
          const double fdy = static_cast<double>(dy);
          const double qb = 2.0 * fdy * s * c * (ib2 - ia2);
          const double qc = fdy * fdy * (s * s * ia2 + c * c * ib2) - 1.0;
          const double disc = qb * qb - 4.0 * qa * qc;
          if (disc < 0.0) continue;
          const double root = std::sqrt(disc);
          long lo = static_cast<long>(std::ceil((-qb - root) / (2.0 * qa) - kBoundaryEps));
          long hi = static_cast<long>(std::floor((-qb + root) / (2.0 * qa) + kBoundaryEps));
          lo = std::max(lo + px, 0L);
          hi = std::min(hi + px, iw - 1);
          if (hi < lo) continue;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double* row = &prefix[(ch * height + static_cast<std::size_t>(sy)) * stride];
            sum[ch] += row[hi + 1] - row[lo];
          }
          count += hi - lo + 1;
        }
        if (count == 0) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          out.at(x, y, ch) = static_cast<float>(sum[ch] / static_cast<double>(count));
        }
      }
    }
  });
  return out;
}

}  // namespace visionsim
