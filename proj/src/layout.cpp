#include "visionsim/layout.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "visionsim/error.hpp"

namespace visionsim::task {

bool Screen::contains(double lateral_deg, double vertical_deg) const {
  return std::abs(lateral_deg - lateral_offset) <= half_width() &&
         std::abs(vertical_deg - vertical_offset) <= half_height();
}

SceneLayout SceneLayout::office() {
  SceneLayout layout;
  layout.screens = {
      {"smartphone", 0.3, 13.0, -22.0, -12.0, 2.0},
      {"display", 1.0, 28.0, 0.0, 0.0, 0.56},
      {"tv", 6.0, 12.0, 24.0, 8.0, 0.5625},
  };
  return layout;
}

void SceneLayout::validate(bool for_matching_task) const {
  if (for_matching_task && screens.size() < 3) {
    throw ValidationError("the matching task needs at least 3 screens", {"screens"});
  }
  if (!(background_distance > 0.0) || !std::isfinite(background_distance)) {
    throw ValidationError("background_distance must be positive", {"background_distance"});
  }
  std::set<double> distances;
  for (const auto& s : screens) {
    if (s.name.empty()) throw ValidationError("screen name must not be empty", {"name"});
    if (!(s.distance > 0.0) || !std::isfinite(s.distance)) {
      throw ValidationError("screen distance must be positive", {s.name});
    }
    if (!(s.angular_size > 0.0) || !(s.aspect > 0.0)) {
      throw ValidationError("screen size and aspect must be positive", {s.name});
    }
    if (!distances.insert(s.distance).second) {
      throw ValidationError("screen distances must be distinct", {s.name});
    }
  }
}

std::optional<std::size_t> SceneLayout::screen_at(double lateral_deg, double vertical_deg) const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < screens.size(); ++i) {
    if (!screens[i].contains(lateral_deg, vertical_deg)) continue;
    if (!best || screens[i].distance < screens[*best].distance) best = i;
  }
  return best;
}

void to_json(nlohmann::json& j, const Screen& s) {
  j = {{"name", s.name},
       {"distance", s.distance},
       {"angular_size", s.angular_size},
       {"lateral_offset", s.lateral_offset},
       {"vertical_offset", s.vertical_offset},
       {"aspect", s.aspect}};
}

void from_json(const nlohmann::json& j, Screen& s) {
  s = Screen{};
  s.name = j.at("name").get<std::string>();
  s.distance = j.at("distance").get<double>();
  s.angular_size = j.value("angular_size", s.angular_size);
  s.lateral_offset = j.value("lateral_offset", s.lateral_offset);
  s.vertical_offset = j.value("vertical_offset", s.vertical_offset);
  s.aspect = j.value("aspect", s.aspect);
}

void to_json(nlohmann::json& j, const SceneLayout& l) {
  j = {{"screens", l.screens}, {"background_distance", l.background_distance}};
}

void from_json(const nlohmann::json& j, SceneLayout& l) {
  l.screens = j.at("screens").get<std::vector<Screen>>();
  l.background_distance = j.value("background_distance", 20.0);
}

}  // namespace visionsim::task
