#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace visionsim::task {

/// A flat screen facing the viewer. Angles are degrees of visual angle;
/// offsets locate the screen center (lateral: +right, vertical: +up).
struct Screen {
  std::string name;
  double distance = 1.0;        // meters
  double angular_size = 20.0;   // horizontal extent, degrees
  double lateral_offset = 0.0;  // degrees
  double vertical_offset = 0.0; // degrees
  double aspect = 0.5625;       // height / width

  double half_width() const { return angular_size * 0.5; }
  double half_height() const { return angular_size * aspect * 0.5; }
  bool contains(double lateral_deg, double vertical_deg) const;
};

struct SceneLayout {
  std::vector<Screen> screens;
  double background_distance = 20.0;  // meters, the back wall

  /// Smartphone at 0.3 m, display at 1 m, TV at 6 m.
  static SceneLayout office();

  /// Throws ValidationError. The matching task additionally needs at least
  /// three screens at distinct distances.
  void validate(bool for_matching_task = true) const;

  /// Index of the nearest screen containing the direction, if any.
  std::optional<std::size_t> screen_at(double lateral_deg, double vertical_deg) const;
};

void to_json(nlohmann::json& j, const Screen& s);
void from_json(const nlohmann::json& j, Screen& s);
void to_json(nlohmann::json& j, const SceneLayout& l);
void from_json(const nlohmann::json& j, SceneLayout& l);

}  // namespace visionsim::task
