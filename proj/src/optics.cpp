#include "visionsim/optics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "visionsim/error.hpp"

namespace visionsim::optics {

void validate_pupil(double mm) {
  if (!(mm > kMinPupilMm && mm < kMaxPupilMm)) {
    throw DomainError("pupil diameter must be in (0.5, 10) mm, got " + std::to_string(mm));
  }
}

void RefractionProfile::validate() const {
  if (!std::isfinite(sphere) || !std::isfinite(cylinder)) {
    throw DomainError("refraction sphere and cylinder must be finite");
  }
  if (cylinder < 0.0) throw DomainError("cylinder must be >= 0 (plus-cylinder convention)");
  if (!(axis >= 0.0 && axis < 180.0)) throw DomainError("axis must be in [0, 180)");
  if (!(residual_accommodation >= 0.0)) throw DomainError("residual accommodation must be >= 0");
}

void FocusState::validate() const {
  validate_pupil(pupil_diameter);
  if (!std::isfinite(lens_power)) throw DomainError("lens power must be finite");
}

void AutofocalConfig::validate() const {
  if (!(slew_rate > 0.0)) throw DomainError("slew_rate must be > 0");
  if (!(time_constant > 0.0)) throw DomainError("time_constant must be > 0");
  if (!(foveal_window > 0.0)) throw DomainError("foveal_window must be > 0");
}

PowerMap::PowerMap(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows < 2 || cols < 2) throw DomainError("power map must be at least 2x2");
  if (values_.size() != rows * cols) throw DomainError("power map value count mismatch");
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("power map values must be finite");
  }
}

double vergence_from_distance(double meters) {
  if (std::isinf(meters) && meters > 0.0) return 0.0;
  if (!(meters > 0.0)) {
    throw DomainError("distance must be positive, got " + std::to_string(meters));
  }
  return 1.0 / meters;
}

MeridionalDefocus meridional_defocus(const RefractionProfile& profile, double lens_power,
                                     double object_vergence) {
  const double demand = object_vergence - profile.sphere - lens_power;
  const double accommodation = std::clamp(demand, 0.0, profile.residual_accommodation);
  const double base = profile.sphere + lens_power + accommodation;
  return {object_vergence - base, object_vergence - (base + profile.cylinder), profile.axis};
}

BlurEllipse blur_ellipse(const MeridionalDefocus& defocus, double pupil_mm) {
  validate_pupil(pupil_mm);
  const double pupil_m = pupil_mm * 1e-3;
  const double beta1 = pupil_m * std::abs(defocus.axis1) * kArcminPerRadian;
  const double beta2 = pupil_m * std::abs(defocus.axis2) * kArcminPerRadian;
  // The cylinder meridian carries the axis orientation; the sphere meridian
  // is perpendicular to it.
  if (beta2 >= beta1) return {beta2, beta1, defocus.orientation};
  return {beta1, beta2, std::fmod(defocus.orientation + 90.0, 180.0)};
}

BlurEllipse blur_ellipse(const RefractionProfile& profile, double lens_power,
                         double object_vergence, double pupil_mm) {
  return blur_ellipse(meridional_defocus(profile, lens_power, object_vergence), pupil_mm);
}

double progressive_add(const PowerMap& map, double u, double v) {
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double gx = u * static_cast<double>(map.cols() - 1);
  const double gy = v * static_cast<double>(map.rows() - 1);
  const std::size_t c0 = std::min(static_cast<std::size_t>(gx), map.cols() - 2);
  const std::size_t r0 = std::min(static_cast<std::size_t>(gy), map.rows() - 2);
  const double fx = gx - static_cast<double>(c0);
  const double fy = gy - static_cast<double>(r0);
  const double top = map.at(r0, c0) * (1.0 - fx) + map.at(r0, c0 + 1) * fx;
  const double bottom = map.at(r0 + 1, c0) * (1.0 - fx) + map.at(r0 + 1, c0 + 1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

FocusState autofocal_update(const AutofocalConfig& config, const FocusState& state,
                            double target_vergence, double dt) {
  if (!(dt > 0.0)) throw DomainError("autofocal dt must be > 0");
  FocusState next = state;
  next.timestamp = state.timestamp + dt;
  switch (config.algorithm) {
    case AutofocalAlgorithm::instant:
      next.lens_power = target_vergence;
      break;
    case AutofocalAlgorithm::slew_limited: {
      const double max_step = config.slew_rate * dt;
      const double error = target_vergence - state.lens_power;
      if (std::abs(error) <= max_step) {
        next.lens_power = target_vergence;
      } else {
        next.lens_power = state.lens_power + std::copysign(max_step, error);
      }
      break;
    }
    case AutofocalAlgorithm::low_pass: {
      const double gain = -std::expm1(-dt / config.time_constant);
      next.lens_power = state.lens_power + (target_vergence - state.lens_power) * gain;
      break;
    }
  }
  return next;
}

std::optional<double> gaze_target_vergence(const DepthMap& depth, PixelPoint gaze,
                                           const AutofocalConfig& config,
                                           double pixel_pitch_arcmin) {
  if (!(pixel_pitch_arcmin > 0.0)) throw DomainError("pixel pitch must be > 0");
  const double fx = std::floor(gaze.x);
  const double fy = std::floor(gaze.y);
  if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(depth.width()) &&
        fy < static_cast<double>(depth.height()))) {
    throw DomainError("gaze point (" + std::to_string(gaze.x) + ", " + std::to_string(gaze.y) +
                      ") lies outside the depth map");
  }
  const auto cx = static_cast<long>(fx);
  const auto cy = static_cast<long>(fy);

  if (config.depth_aggregator == DepthAggregator::center) {
    const float d = depth.at(static_cast<std::size_t>(cx), static_cast<std::size_t>(cy));
    if (!DepthMap::is_valid_depth(d)) return std::nullopt;
    return vergence_from_distance(d);
  }

  const double radius = config.foveal_window * 0.5 * 60.0 / pixel_pitch_arcmin;
  const auto reach = static_cast<long>(std::floor(radius));
  const double r2 = radius * radius;
  const long w = static_cast<long>(depth.width());
  const long h = static_cast<long>(depth.height());

  std::vector<float> samples;
  for (long dy = -reach; dy <= reach; ++dy) {
    const long y = cy + dy;
    if (y < 0 || y >= h) continue;
    for (long dx = -reach; dx <= reach; ++dx) {
      const long x = cx + dx;
      if (x < 0 || x >= w) continue;
      if (static_cast<double>(dx * dx + dy * dy) > r2) continue;
      const float d = depth.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      if (DepthMap::is_valid_depth(d)) samples.push_back(d);
    }
  }
  if (samples.empty()) return std::nullopt;

  if (config.depth_aggregator == DepthAggregator::median) {
    // Lower median, so the result is always a depth present in the window.
    const auto mid = samples.begin() + static_cast<long>((samples.size() - 1) / 2);
    std::nth_element(samples.begin(), mid, samples.end());
    return vergence_from_distance(*mid);
  }

  // Mode over millimeter bins; ties go to the nearer bin.
  std::map<long long, std::pair<std::size_t, float>> bins;
  for (float d : samples) {
    auto& [count, nearest] = bins.try_emplace(std::llround(d * 1000.0), 0, d).first->second;
    ++count;
    nearest = std::min(nearest, d);
  }
  auto best = bins.begin();
  for (auto it = bins.begin(); it != bins.end(); ++it) {
    if (it->second.first > best->second.first) best = it;
  }
  return vergence_from_distance(best->second.second);
}

const char* to_string(AutofocalAlgorithm algorithm) {
  switch (algorithm) {
    case AutofocalAlgorithm::instant: return "instant";
    case AutofocalAlgorithm::slew_limited: return "slew_limited";
    case AutofocalAlgorithm::low_pass: return "low_pass";
  }
  return "instant";
}

const char* to_string(DepthAggregator aggregator) {
  switch (aggregator) {
    case DepthAggregator::center: return "center";
    case DepthAggregator::median: return "median";
    case DepthAggregator::mode: return "mode";
  }
  return "median";
}

AutofocalAlgorithm parse_algorithm(const std::string& name) {
  if (name == "instant") return AutofocalAlgorithm::instant;
  if (name == "slew_limited") return AutofocalAlgorithm::slew_limited;
  if (name == "low_pass") return AutofocalAlgorithm::low_pass;
  throw ValidationError("unknown autofocal algorithm '" + name + "'", {name});
}

DepthAggregator parse_aggregator(const std::string& name) {
  if (name == "center") return DepthAggregator::center;
  if (name == "median") return DepthAggregator::median;
  if (name == "mode") return DepthAggregator::mode;
  throw ValidationError("unknown depth aggregator '" + name + "'", {name});
}

void to_json(nlohmann::json& j, const RefractionProfile& p) {
  j = {{"sphere", p.sphere},
       {"cylinder", p.cylinder},
       {"axis", p.axis},
       {"residual_accommodation", p.residual_accommodation}};
}

void from_json(const nlohmann::json& j, RefractionProfile& p) {
  p.sphere = j.value("sphere", 0.0);
  p.cylinder = j.value("cylinder", 0.0);
  p.axis = j.value("axis", 0.0);
  p.residual_accommodation = j.value("residual_accommodation", 0.0);
  p.validate();
}

void to_json(nlohmann::json& j, const AutofocalConfig& c) {
  j = {{"algorithm", to_string(c.algorithm)},
       {"slew_rate", c.slew_rate},
       {"time_constant", c.time_constant},
       {"foveal_window", c.foveal_window},
       {"depth_aggregator", to_string(c.depth_aggregator)}};
}

void from_json(const nlohmann::json& j, AutofocalConfig& c) {
  c = AutofocalConfig{};
  if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  c.slew_rate = j.value("slew_rate", c.slew_rate);
  c.time_constant = j.value("time_constant", c.time_constant);
  c.foveal_window = j.value("foveal_window", c.foveal_window);
  if (j.contains("depth_aggregator")) {
    c.depth_aggregator = parse_aggregator(j.at("depth_aggregator").get<std::string>());
  }
  c.validate();
}

}  // namespace visionsim::optics
