#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace visionsim::experiment {
struct Session;
}

namespace visionsim::questionnaire {

struct Likert {
  int min = 1;
  int max = 7;
  std::vector<std::string> anchors;  // optional labels, low to high
  bool operator==(const Likert&) const = default;
};

struct Choice {
  std::vector<std::string> options;
  bool operator==(const Choice&) const = default;
};

struct FreeText {
  bool operator==(const FreeText&) const = default;
};

struct Slider {
  double min = 0.0;
  double max = 100.0;
  double step = 1.0;
  bool operator==(const Slider&) const = default;
};

using ItemKind = std::variant<Likert, Choice, FreeText, Slider>;

struct Item {
  std::string id;
  std::string text;
  ItemKind kind;
  bool required = true;
  bool operator==(const Item&) const = default;
};

const char* kind_name(const ItemKind& kind);

struct Questionnaire {
  std::string abbreviation;
  std::string title;
  std::vector<Item> items;

  /// Throws ValidationError whose details name the offending item id.
  void validate() const;
  const Item* find(const std::string& id) const;
  bool operator==(const Questionnaire&) const = default;
};

Questionnaire parse_questionnaire(const nlohmann::json& j);
nlohmann::json to_json(const Questionnaire& q);

/// Reads `search_dir/<abbreviation>.json`.
Questionnaire load_questionnaire(const std::string& abbreviation,
                                 const std::filesystem::path& search_dir);
std::filesystem::path save_questionnaire(const Questionnaire& q,
                                         const std::filesystem::path& dir);

struct ResponseSet {
  std::string abbreviation;
  std::string scene_name;
  std::map<std::string, nlohmann::json> answers;
  std::string completed_at;
};

nlohmann::json to_json(const ResponseSet& r);
ResponseSet parse_response_set(const nlohmann::json& j);

/// Throws ValidationError if `answer` does not fit the item kind.
void check_answer(const Item& item, const nlohmann::json& answer);

/// Every required item answered, no unknown ids, every answer type-checks.
/// Unanswered required ids are listed in the error details.
void validate_responses(const Questionnaire& q, const ResponseSet& responses);

/// Neutral answers for every item: likert midpoint, first option, slider
/// midpoint snapped to the step grid, "n/a" for text.
ResponseSet default_responses(const Questionnaire& q, const std::string& scene_name);

/// Writes `session_dir/<scene_name>/responses_<abbrev>.json`, suffixing
/// `_1`, `_2`, ... instead of overwriting.
std::filesystem::path record_responses(const Questionnaire& q, const ResponseSet& responses,
                                       const experiment::Session& session);

}  // namespace visionsim::questionnaire
