#include "visionsim/questionnaire.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/fs_util.hpp"

namespace visionsim::questionnaire {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void item_error(const std::string& id, const std::string& what) {
  throw ValidationError("item '" + id + "': " + what, {id});
}

void check_kind(const Item& item) {
  std::visit(
      [&item](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Likert>) {
          if (k.min >= k.max) item_error(item.id, "likert min must be below max");
        } else if constexpr (std::is_same_v<K, Choice>) {
          if (k.options.size() < 2) item_error(item.id, "choice needs at least 2 options");
          if (std::set<std::string>(k.options.begin(), k.options.end()).size() != k.options.size()) {
            item_error(item.id, "choice options must be distinct");
          }
        } else if constexpr (std::is_same_v<K, Slider>) {
          if (!(std::isfinite(k.min) && std::isfinite(k.max) && k.min < k.max)) {
            item_error(item.id, "slider min must be below max");
          }
          if (!(k.step > 0.0)) item_error(item.id, "slider step must be > 0");
        }
      },
      item.kind);
}

Item parse_item(const nlohmann::json& j, std::size_t index) {
  Item item;
  item.id = j.value("id", std::string{});
  const std::string label = item.id.empty() ? "#" + std::to_string(index) : item.id;
  if (item.id.empty()) item_error(label, "missing id");
  try {
    item.text = j.value("text", std::string{});
    item.required = j.value("required", true);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "likert") {
      Likert k;
      k.min = j.value("min", k.min);
      k.max = j.value("max", k.max);
      k.anchors = j.value("anchors", std::vector<std::string>{});
      item.kind = k;
    } else if (kind == "choice") {
      item.kind = Choice{j.at("options").get<std::vector<std::string>>()};
    } else if (kind == "free_text") {
      item.kind = FreeText{};
    } else if (kind == "slider") {
      Slider k;
      k.min = j.value("min", k.min);
      k.max = j.value("max", k.max);
      k.step = j.value("step", k.step);
      item.kind = k;
    } else {
      item_error(label, "unknown kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    item_error(label, e.what());
  }
  return item;
}

nlohmann::json item_to_json(const Item& item) {
  nlohmann::json j = {{"id", item.id},
                      {"text", item.text},
                      {"kind", kind_name(item.kind)},
                      {"required", item.required}};
  std::visit(
      [&j](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Likert>) {
          j["min"] = k.min;
          j["max"] = k.max;
          if (!k.anchors.empty()) j["anchors"] = k.anchors;
        } else if constexpr (std::is_same_v<K, Choice>) {
          j["options"] = k.options;
        } else if constexpr (std::is_same_v<K, Slider>) {
          j["min"] = k.min;
          j["max"] = k.max;
          j["step"] = k.step;
        }
      },
      item.kind);
  return j;
}

}  // namespace

const char* kind_name(const ItemKind& kind) {
  switch (kind.index()) {
    case 0: return "likert";
    case 1: return "choice";
    case 2: return "free_text";
    default: return "slider";
  }
}

void Questionnaire::validate() const {
  if (abbreviation.empty()) throw ValidationError("questionnaire abbreviation is empty", {"abbreviation"});
  if (items.empty()) throw ValidationError("questionnaire '" + abbreviation + "' has no items", {"items"});
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.id.empty()) item_error("", "missing id");
    if (!seen.insert(item.id).second) item_error(item.id, "duplicate id");
    check_kind(item);
  }
}

const Item* Questionnaire::find(const std::string& id) const {
  for (const auto& item : items) {
    if (item.id == id) return &item;
  }
  return nullptr;
}

Questionnaire parse_questionnaire(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("questionnaire must be a JSON object", {"questionnaire"});
  Questionnaire q;
  try {
    q.abbreviation = j.value("abbreviation", std::string{});
    q.title = j.value("title", std::string{});
    const auto& items = j.at("items");
    if (!items.is_array()) throw ValidationError("'items' must be an array", {"items"});
    for (std::size_t i = 0; i < items.size(); ++i) q.items.push_back(parse_item(items[i], i));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed questionnaire: ") + e.what(), {"items"});
  }
  q.validate();
  return q;
}

nlohmann::json to_json(const Questionnaire& q) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : q.items) items.push_back(item_to_json(item));
  return {{"abbreviation", q.abbreviation}, {"title", q.title}, {"items", items}};
}

Questionnaire load_questionnaire(const std::string& abbreviation, const fs::path& search_dir) {
  if (!is_valid_path_component(abbreviation)) {
    throw ValidationError("invalid questionnaire abbreviation '" + abbreviation + "'",
                          {abbreviation});
  }
  const fs::path path = search_dir / (abbreviation + ".json");
  if (!fs::exists(path)) {
    throw NotFoundError("questionnaire not found: " + path.string(), path.string());
  }
  Questionnaire q = parse_questionnaire(read_json_file(path));
  if (q.abbreviation.empty()) q.abbreviation = abbreviation;
  if (q.abbreviation != abbreviation) {
    throw ValidationError("questionnaire in " + path.string() + " declares abbreviation '" +
                              q.abbreviation + "'",
                          {"abbreviation"});
  }
  return q;
}

fs::path save_questionnaire(const Questionnaire& q, const fs::path& dir) {
  q.validate();
  if (!is_valid_path_component(q.abbreviation)) {
    throw ValidationError("invalid questionnaire abbreviation '" + q.abbreviation + "'",
                          {q.abbreviation});
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path path = dir / (q.abbreviation + ".json");
  write_json_file(path, to_json(q));
  return path;
}

nlohmann::json to_json(const ResponseSet& r) {
  return {{"questionnaire", r.abbreviation},
          {"scene", r.scene_name},
          {"answers", r.answers},
          {"completed_at", r.completed_at}};
}

ResponseSet parse_response_set(const nlohmann::json& j) {
  try {
    ResponseSet r;
    r.abbreviation = j.at("questionnaire").get<std::string>();
    r.scene_name = j.value("scene", std::string{});
    r.answers = j.at("answers").get<std::map<std::string, nlohmann::json>>();
    r.completed_at = j.value("completed_at", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed response set: ") + e.what(), {"answers"});
  }
}

void check_answer(const Item& item, const nlohmann::json& a) {
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Likert>) {
          if (!a.is_number_integer()) item_error(item.id, "likert answer must be an integer");
          const auto v = a.get<long long>();
          if (v < k.min || v > k.max) {
            item_error(item.id, "answer " + std::to_string(v) + " outside " +
                                    std::to_string(k.min) + ".." + std::to_string(k.max));
          }
        } else if constexpr (std::is_same_v<K, Choice>) {
          if (!a.is_string()) item_error(item.id, "choice answer must be a string");
          const auto v = a.get<std::string>();
          if (std::find(k.options.begin(), k.options.end(), v) == k.options.end()) {
            item_error(item.id, "'" + v + "' is not an option");
          }
        } else if constexpr (std::is_same_v<K, FreeText>) {
          if (!a.is_string()) item_error(item.id, "free_text answer must be a string");
        } else {
          if (!a.is_number()) item_error(item.id, "slider answer must be a number");
          const double v = a.get<double>();
          if (!(v >= k.min && v <= k.max)) item_error(item.id, "slider answer out of range");
          const double steps = (v - k.min) / k.step;
          if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, std::abs(steps))) {
            item_error(item.id, "slider answer is off the step grid");
          }
        }
      },
      item.kind);
}

void validate_responses(const Questionnaire& q, const ResponseSet& r) {
  if (r.abbreviation != q.abbreviation) {
    throw ValidationError("responses are for '" + r.abbreviation + "', not '" + q.abbreviation + "'",
                          {"questionnaire"});
  }
  for (const auto& [id, answer] : r.answers) {
    const Item* item = q.find(id);
    if (!item) throw ValidationError("answer for unknown item '" + id + "'", {id});
    if (answer.is_null() && !item->required) continue;
    check_answer(*item, answer);
  }
  std::vector<std::string> missing;
  for (const auto& item : q.items) {
    const auto it = r.answers.find(item.id);
    const bool blank = it == r.answers.end() || it->second.is_null() ||
                       (it->second.is_string() && it->second.get<std::string>().empty());
    if (item.required && blank) missing.push_back(item.id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("unanswered items: " + list, missing);
  }
}

ResponseSet default_responses(const Questionnaire& q, const std::string& scene_name) {
  ResponseSet r;
  r.abbreviation = q.abbreviation;
  r.scene_name = scene_name;
  for (const auto& item : q.items) {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Likert>) {
            r.answers[item.id] = k.min + (k.max - k.min) / 2;
          } else if constexpr (std::is_same_v<K, Choice>) {
            r.answers[item.id] = k.options.front();
          } else if constexpr (std::is_same_v<K, FreeText>) {
            r.answers[item.id] = "n/a";
          } else {
            const double steps = std::floor((k.max - k.min) / k.step / 2.0);
            r.answers[item.id] = k.min + steps * k.step;
          }
        },
        item.kind);
  }
  return r;
}

fs::path record_responses(const Questionnaire& q, const ResponseSet& responses,
                          const experiment::Session& session) {
  validate_responses(q, responses);
  ResponseSet stamped = responses;
  if (stamped.completed_at.empty()) stamped.completed_at = iso_timestamp_now();
  const fs::path dir = session.scene_dir(responses.scene_name);
  const fs::path path = reserve_unique_file(dir, "responses_" + q.abbreviation, ".json");
  write_json_file(path, to_json(stamped));
  return path;
}

}  // namespace visionsim::questionnaire
