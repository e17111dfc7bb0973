#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "visionsim/depth_map.hpp"

namespace visionsim::optics {

inline constexpr double kArcminPerRadian = 3437.7468;

/// Pass to `vergence_from_distance` for an object at optical infinity.
inline constexpr double kAtInfinity = std::numeric_limits<double>::infinity();

inline constexpr double kMinPupilMm = 0.5;
inline constexpr double kMaxPupilMm = 10.0;

/// Sphero-cylindrical refraction of the simulated eye, in diopters.
/// `sphere` and `cylinder` add to the focusing power of the eye+lens system;
/// the cylinder acts in the meridian whose blur is oriented along `axis`.
struct RefractionProfile {
  double sphere = 0.0;
  double cylinder = 0.0;
  double axis = 0.0;  // degrees, [0, 180)
  double residual_accommodation = 0.0;

  void validate() const;
};

/// Add-power grid over normalized view coordinates. Row 0 is v = 0 (top),
/// column 0 is u = 0 (left).
class PowerMap {
 public:
  PowerMap(std::size_t rows, std::size_t cols, std::vector<double> values);

  static PowerMap uniform(double diopters) { return PowerMap(2, 2, {diopters, diopters, diopters, diopters}); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double at(std::size_t row, std::size_t col) const { return values_[row * cols_ + col]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

struct FocusState {
  double lens_power = 0.0;      // diopters
  double pupil_diameter = 4.0;  // millimeters, (0.5, 10)
  double timestamp = 0.0;       // seconds

  void validate() const;
};

struct BlurEllipse {
  double major = 0.0;        // arcmin
  double minor = 0.0;        // arcmin
  double orientation = 0.0;  // degrees, [0, 180), direction of the major axis
};

struct MeridionalDefocus {
  double axis1 = 0.0;  // diopters, sphere meridian
  double axis2 = 0.0;  // diopters, sphere + cylinder meridian
  double orientation = 0.0;
};

enum class AutofocalAlgorithm { instant, slew_limited, low_pass };
enum class DepthAggregator { center, median, mode };

struct AutofocalConfig {
  AutofocalAlgorithm algorithm = AutofocalAlgorithm::instant;
  double slew_rate = 10.0;      // D/s
  double time_constant = 0.2;   // s
  double foveal_window = 2.0;   // degrees (diameter)
  DepthAggregator depth_aggregator = DepthAggregator::median;

  void validate() const;
};

/// Pixel coordinates; the containing pixel is (floor(x), floor(y)).
struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Throws DomainError unless 0.5 < mm < 10.
void validate_pupil(double mm);

double vergence_from_distance(double meters);

MeridionalDefocus meridional_defocus(const RefractionProfile& profile, double lens_power,
                                     double object_vergence);

/// Geometric blur disc: angular diameter = pupil [m] x |defocus| per meridian.
BlurEllipse blur_ellipse(const MeridionalDefocus& defocus, double pupil_mm);

BlurEllipse blur_ellipse(const RefractionProfile& profile, double lens_power,
                         double object_vergence, double pupil_mm);

double progressive_add(const PowerMap& map, double u, double v);

/// Advances the tunable lens toward `target_vergence` over `dt` seconds.
FocusState autofocal_update(const AutofocalConfig& config, const FocusState& state,
                            double target_vergence, double dt);

/// Vergence of the aggregated depth within the foveal window around `gaze`.
/// Returns nullopt when the window holds no valid depth.
std::optional<double> gaze_target_vergence(const DepthMap& depth, PixelPoint gaze,
                                           const AutofocalConfig& config,
                                           double pixel_pitch_arcmin);

const char* to_string(AutofocalAlgorithm algorithm);
const char* to_string(DepthAggregator aggregator);
AutofocalAlgorithm parse_algorithm(const std::string& name);
DepthAggregator parse_aggregator(const std::string& name);

void to_json(nlohmann::json& j, const RefractionProfile& p);
void from_json(const nlohmann::json& j, RefractionProfile& p);
void to_json(nlohmann::json& j, const AutofocalConfig& c);
void from_json(const nlohmann::json& j, AutofocalConfig& c);

}  // namespace visionsim::optics
