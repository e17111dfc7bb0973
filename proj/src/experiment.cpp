#include "visionsim/experiment.hpp"

#include <algorithm>
#include <set>

#include "visionsim/error.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/rng.hpp"

namespace visionsim::experiment {

namespace fs = std::filesystem;

void Protocol::validate() const {
  if (name.empty()) throw ValidationError("protocol name must not be empty", {"name"});
  if (scenes.empty()) throw ValidationError("protocol must list at least one scene", {"scenes"});
  std::set<std::string> names;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].scene_id.empty()) {
      throw ValidationError("scene " + std::to_string(i) + " has an empty scene id",
                            {std::to_string(i)});
    }
    const std::string folder = scene_name(i);
    if (!is_valid_path_component(folder)) {
      throw ValidationError("scene name '" + folder + "' is not a valid folder name", {folder});
    }
    if (!names.insert(folder).second) {
      throw ValidationError("scene name '" + folder + "' is used twice", {folder});
    }
  }
}

std::string Protocol::scene_name(std::size_t entry) const {
  const SceneEntry& e = scenes.at(entry);
  if (!e.name.empty()) return e.name;
  std::size_t total = 0;
  std::size_t ordinal = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].scene_id != e.scene_id) continue;
    ++total;
    if (i <= entry) ordinal = total;
  }
  return total == 1 ? e.scene_id : e.scene_id + "_" + std::to_string(ordinal);
}

Protocol parse_protocol(const nlohmann::json& j) {
  try {
    Protocol p;
    p.name = j.at("name").get<std::string>();
    const std::string mode = j.value("order_mode", "sequential");
    if (mode == "sequential") {
      p.order_mode = OrderMode::sequential;
    } else if (mode == "shuffled") {
      p.order_mode = OrderMode::shuffled;
    } else {
      throw ValidationError("unknown order_mode '" + mode + "'", {"order_mode"});
    }
    p.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("scenes")) {
      SceneEntry e;
      e.scene_id = s.at("scene").get<std::string>();
      e.parameter = s.value("parameter", "");
      e.name = s.value("name", "");
      p.scenes.push_back(std::move(e));
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed protocol: ") + e.what(), {"protocol"});
  }
}

Protocol load_protocol(const fs::path& path) { return parse_protocol(read_json_file(path)); }

nlohmann::json to_json(const Protocol& protocol) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : protocol.scenes) {
    nlohmann::json e = {{"scene", s.scene_id}, {"parameter", s.parameter}};
    if (!s.name.empty()) e["name"] = s.name;
    scenes.push_back(std::move(e));
  }
  return {{"name", protocol.name},
          {"order_mode", protocol.order_mode == OrderMode::shuffled ? "shuffled" : "sequential"},
          {"seed", protocol.seed},
          {"scenes", std::move(scenes)}};
}

std::vector<DemographicField> default_demographic_fields() {
  using T = DemographicField::Type;
  return {
      {"age", "Age", T::integer, {}, false},
      {"gender", "Gender", T::choice, {"female", "male", "diverse", "prefer not to say"}, false},
      {"vision_correction", "Vision correction", T::choice,
       {"none", "glasses", "contact lenses", "progressive lenses"}, false},
  };
}

std::vector<DemographicField> parse_demographic_fields(const nlohmann::json& j) {
  std::vector<DemographicField> fields;
  std::set<std::string> seen;
  for (const auto& f : j) {
    DemographicField field;
    field.id = f.at("id").get<std::string>();
    field.label = f.value("label", field.id);
    const std::string type = f.value("type", "text");
    if (type == "text") {
      field.type = DemographicField::Type::text;
    } else if (type == "integer") {
      field.type = DemographicField::Type::integer;
    } else if (type == "choice") {
      field.type = DemographicField::Type::choice;
      field.options = f.at("options").get<std::vector<std::string>>();
      if (field.options.size() < 2) {
        throw ValidationError("choice field needs at least 2 options", {field.id});
      }
    } else {
      throw ValidationError("unknown field type '" + type + "'", {field.id});
    }
    field.required = f.value("required", false);
    if (field.id.empty() || !seen.insert(field.id).second) {
      throw ValidationError("field ids must be non-empty and unique", {field.id});
    }
    fields.push_back(std::move(field));
  }
  return fields;
}

nlohmann::json to_json(const std::vector<DemographicField>& fields) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : fields) {
    const char* type = f.type == DemographicField::Type::integer ? "integer"
                       : f.type == DemographicField::Type::choice ? "choice"
                                                                   : "text";
    nlohmann::json e = {{"id", f.id}, {"label", f.label}, {"type", type}, {"required", f.required}};
    if (!f.options.empty()) e["options"] = f.options;
    out.push_back(std::move(e));
  }
  return out;
}

void validate_demographics(const std::vector<DemographicField>& fields,
                           const std::map<std::string, std::string>& values) {
  std::vector<std::string> bad;
  for (const auto& f : fields) {
    const auto it = values.find(f.id);
    if (it == values.end() || it->second.empty()) {
      if (f.required) bad.push_back(f.id);
      continue;
    }
    const std::string& v = it->second;
    if (f.type == DemographicField::Type::integer) {
      const bool digits = std::all_of(v.begin() + (v[0] == '-' ? 1 : 0), v.end(),
                                      [](char c) { return c >= '0' && c <= '9'; });
      if (!digits || v == "-") bad.push_back(f.id);
    } else if (f.type == DemographicField::Type::choice) {
      if (std::find(f.options.begin(), f.options.end(), v) == f.options.end()) bad.push_back(f.id);
    }
  }
  for (const auto& [key, value] : values) {
    const bool known = std::any_of(fields.begin(), fields.end(),
                                   [&](const DemographicField& f) { return f.id == key; });
    if (!known) bad.push_back(key);
  }
  if (!bad.empty()) {
    std::string joined;
    for (const auto& b : bad) joined += (joined.empty() ? "" : ", ") + b;
    throw ValidationError("invalid demographic fields: " + joined, bad);
  }
}

fs::path Session::scene_dir(const std::string& scene_name) const {
  if (!is_valid_path_component(scene_name)) {
    throw ValidationError("invalid scene name '" + scene_name + "'", {scene_name});
  }
  const fs::path dir = session_dir / scene_name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

Session create_session(const std::string& subject_id,
                       const std::map<std::string, std::string>& demographics,
                       const fs::path& data_root, const std::string& protocol_name) {
  if (!is_valid_path_component(subject_id)) {
    throw ValidationError("subject id '" + subject_id + "' is not a valid folder name",
                          {"subject_id"});
  }
  Session session;
  session.subject_id = subject_id;
  session.demographics = demographics;
  session.data_root = data_root;
  session.protocol_name = protocol_name;
  session.created_at = iso_timestamp_now();
  session.session_dir = create_unique_directory(data_root, subject_id);
  write_session_json(session);
  return session;
}

void write_session_json(const Session& session) {
  nlohmann::json j = {{"subject_id", session.subject_id},
                      {"demographics", session.demographics},
                      {"created_at", session.created_at},
                      {"session_dir", session.session_dir.filename().string()}};
  if (!session.protocol_name.empty()) j["protocol"] = session.protocol_name;
  write_json_file(session.session_dir / "session.json", j);
}

std::vector<std::size_t> resolve_order(const Protocol& protocol) {
  std::vector<std::size_t> order(protocol.scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (protocol.order_mode == OrderMode::shuffled) {
    Rng rng(protocol.seed);
    shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::scene_loaded: return "scene_loaded";
    case EventKind::scene_unloaded: return "scene_unloaded";
    case EventKind::experiment_started: return "experiment_started";
    case EventKind::experiment_finished: return "experiment_finished";
  }
  return "unknown";
}

bool SceneEvent::same_as(const SceneEvent& o) const {
  return kind == o.kind && scene_index == o.scene_index && position == o.position &&
         scene_id == o.scene_id && parameter == o.parameter;
}

nlohmann::json to_json(const SceneEvent& e) {
  return {{"kind", to_string(e.kind)},     {"scene_index", e.scene_index},
          {"position", e.position},        {"scene_id", e.scene_id},
          {"parameter", e.parameter},      {"timestamp", e.timestamp}};
}

const char* to_string(Command::Kind kind) {
  switch (kind) {
    case Command::Kind::start: return "start";
    case Command::Kind::next: return "next";
    case Command::Kind::previous: return "previous";
    case Command::Kind::restart_scene: return "restart";
    case Command::Kind::repeat_scene: return "repeat";
    case Command::Kind::jump: return "jump";
    case Command::Kind::finish: return "finish";
  }
  return "unknown";
}

Command::Kind parse_command_kind(const std::string& name) {
  using K = Command::Kind;
  if (name == "start") return K::start;
  if (name == "next") return K::next;
  if (name == "previous") return K::previous;
  if (name == "restart" || name == "restart_scene") return K::restart_scene;
  if (name == "repeat" || name == "repeat_scene") return K::repeat_scene;
  if (name == "jump") return K::jump;
  if (name == "finish") return K::finish;
  throw ValidationError("unknown command '" + name + "'", {name});
}

Clock steady_seconds() {
  const auto origin = std::chrono::steady_clock::now();
  return [origin] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin).count();
  };
}

Controller::Controller(Protocol protocol, Clock clock)
    : protocol_(std::move(protocol)), clock_(std::move(clock)) {
  protocol_.validate();
  order_ = resolve_order(protocol_);
}

std::size_t Controller::current_entry() const {
  if (phase_ == Phase::idle) throw StateError("experiment not started");
  return order_[position_];
}

SceneEvent Controller::scene_event(EventKind kind, std::size_t position) const {
  const std::size_t entry = order_[position];
  return {kind,
          static_cast<long>(entry),
          static_cast<long>(position),
          protocol_.scenes[entry].scene_id,
          protocol_.scenes[entry].parameter,
          clock_()};
}

void Controller::transition(std::size_t to, std::vector<SceneEvent>& out) {
  out.push_back(scene_event(EventKind::scene_unloaded, position_));
  position_ = to;
  out.push_back(scene_event(EventKind::scene_loaded, position_));
}

std::vector<SceneEvent> Controller::step(const Command& command) {
  using K = Command::Kind;
  std::vector<SceneEvent> out;
  if (phase_ == Phase::finished) throw StateError("experiment already finished");
  if (command.kind == K::start) {
    if (phase_ != Phase::idle) throw StateError("experiment already started");
    phase_ = Phase::running;
    position_ = 0;
    out.push_back({EventKind::experiment_started, -1, -1, {}, {}, clock_()});
    out.push_back(scene_event(EventKind::scene_loaded, position_));
    return out;
  }
  if (phase_ == Phase::idle) {
    throw StateError(std::string("'") + to_string(command.kind) + "' before start");
  }
  switch (command.kind) {
    case K::next:
      if (at_last()) {
        out.push_back(scene_event(EventKind::scene_unloaded, position_));
        out.push_back({EventKind::experiment_finished, -1, -1, {}, {}, clock_()});
        phase_ = Phase::finished;
      } else {
        transition(position_ + 1, out);
      }
      break;
    case K::previous:
      if (position_ > 0) transition(position_ - 1, out);
      break;
    case K::restart_scene:
      transition(position_, out);
      break;
    case K::repeat_scene:
      order_.insert(order_.begin() + static_cast<long>(position_) + 1, order_[position_]);
      break;
    case K::jump:
      if (command.target >= order_.size()) {
        throw DomainError("jump target " + std::to_string(command.target) +
                          " is outside the scene order (size " + std::to_string(order_.size()) +
                          ")");
      }
      transition(command.target, out);
      break;
    case K::finish:
      out.push_back(scene_event(EventKind::scene_unloaded, position_));
      out.push_back({EventKind::experiment_finished, -1, -1, {}, {}, clock_()});
      phase_ = Phase::finished;
      break;
    case K::start:
      break;
  }
  return out;
}

void SceneRegistry::add(const std::string& scene_id, SceneHandler handler) {
  handlers_[scene_id] = std::move(handler);
}

const SceneHandler& SceneRegistry::get(const std::string& scene_id) const {
  const auto it = handlers_.find(scene_id);
  if (it == handlers_.end()) {
    throw ValidationError("no handler registered for scene '" + scene_id + "'", {scene_id});
  }
  return it->second;
}

std::vector<std::string> SceneRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, handler] : handlers_) out.push_back(id);
  return out;
}

void SceneRegistry::validate(const Protocol& protocol) const {
  std::vector<std::string> missing;
  for (const auto& s : protocol.scenes) {
    if (!contains(s.scene_id) &&
        std::find(missing.begin(), missing.end(), s.scene_id) == missing.end()) {
      missing.push_back(s.scene_id);
    }
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& m : missing) joined += (joined.empty() ? "" : ", ") + m;
    throw ValidationError("protocol '" + protocol.name + "' uses unregistered scenes: " + joined,
                          missing);
  }
}

ExperimentLoop::ExperimentLoop(Protocol protocol, SceneRegistry registry, Session& session,
                               Options options, Clock clock)
    : controller_(std::move(protocol), std::move(clock)),
      registry_(std::move(registry)),
      session_(session),
      options_(options) {
  registry_.validate(controller_.protocol());
  if (session_.protocol_name.empty()) session_.protocol_name = controller_.protocol().name;
}

void ExperimentLoop::post(Command command) {
  std::lock_guard lock(mutex_);
  queue_.push_back(command);
}

void ExperimentLoop::complete_current_scene() {
  if (options_.auto_advance) post({Command::Kind::next});
}

void ExperimentLoop::add_listener(std::function<void(const SceneEvent&)> listener) {
  listeners_.push_back(std::move(listener));
}

std::size_t ExperimentLoop::drain() {
  std::size_t applied = 0;
  for (;;) {
    Command command;
    {
      std::lock_guard lock(mutex_);
      if (queue_.empty()) return applied;
      command = queue_.front();
      queue_.pop_front();
    }
    for (const SceneEvent& event : controller_.step(command)) dispatch(event);
    ++applied;
  }
}

void ExperimentLoop::run() {
  post({Command::Kind::start});
  drain();
}

void ExperimentLoop::dispatch(const SceneEvent& event) {
  events_.push_back(event);
  for (const auto& listener : listeners_) listener(event);
  if (event.kind != EventKind::scene_loaded) return;

  const Protocol& protocol = controller_.protocol();
  const auto entry = static_cast<std::size_t>(event.scene_index);
  SceneContext context{session_, protocol.scenes[entry], entry,
                       static_cast<std::size_t>(event.position), protocol.scene_name(entry)};
  registry_.get(event.scene_id)(context);
  if (context.completed && options_.auto_advance) post({Command::Kind::next});
}

}  // namespace visionsim::experiment
