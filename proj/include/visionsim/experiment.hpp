#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace visionsim::experiment {

struct SceneEntry {
  std::string scene_id;
  std::string parameter;
  /// Folder name override; empty means derived from scene_id.
  std::string name;
};

enum class OrderMode { sequential, shuffled };

struct Protocol {
  std::string name;
  OrderMode order_mode = OrderMode::sequential;
  std::uint64_t seed = 0;
  std::vector<SceneEntry> scenes;

  void validate() const;

  /// Data folder name for a protocol entry: the explicit name, else the
  /// scene id, suffixed `_k` (k-th occurrence) when the id repeats.
  std::string scene_name(std::size_t entry) const;
};

Protocol parse_protocol(const nlohmann::json& j);
Protocol load_protocol(const std::filesystem::path& path);
nlohmann::json to_json(const Protocol& protocol);

/// One field of the experimenter's setup mask.
struct DemographicField {
  enum class Type { text, integer, choice };

  std::string id;
  std::string label;
  Type type = Type::text;
  std::vector<std::string> options;
  bool required = false;
};

std::vector<DemographicField> default_demographic_fields();
std::vector<DemographicField> parse_demographic_fields(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<DemographicField>& fields);

/// Throws ValidationError naming every offending field.
void validate_demographics(const std::vector<DemographicField>& fields,
                           const std::map<std::string, std::string>& values);

struct Session {
  std::string subject_id;
  std::map<std::string, std::string> demographics;
  std::filesystem::path data_root;
  std::filesystem::path session_dir;
  std::string created_at;
  std::string protocol_name;
  /// Session-scoped values shared between scenes.
  std::map<std::string, nlohmann::json> globals;

  /// `session_dir/scene_name`, created on demand.
  std::filesystem::path scene_dir(const std::string& scene_name) const;
};

Session create_session(const std::string& subject_id,
                       const std::map<std::string, std::string>& demographics,
                       const std::filesystem::path& data_root,
                       const std::string& protocol_name = {});

void write_session_json(const Session& session);

/// Protocol entry indices in presentation order.
std::vector<std::size_t> resolve_order(const Protocol& protocol);

enum class EventKind { scene_loaded, scene_unloaded, experiment_started, experiment_finished };

const char* to_string(EventKind kind);

struct SceneEvent {
  EventKind kind = EventKind::scene_loaded;
  /// Protocol entry index; -1 for experiment-level events.
  long scene_index = -1;
  /// Position in the (possibly extended) presentation order.
  long position = -1;
  std::string scene_id;
  std::string parameter;
  double timestamp = 0.0;

  /// Equality ignoring the timestamp.
  bool same_as(const SceneEvent& other) const;
};

nlohmann::json to_json(const SceneEvent& event);

struct Command {
  enum class Kind { start, next, previous, restart_scene, repeat_scene, jump, finish };

  Kind kind = Kind::start;
  std::size_t target = 0;  // position for jump

  static Command jump_to(std::size_t position) { return {Kind::jump, position}; }
};

const char* to_string(Command::Kind kind);
Command::Kind parse_command_kind(const std::string& name);

using Clock = std::function<double()>;

/// Seconds since construction, from the steady clock.
Clock steady_seconds();

/// Scene sequencing state machine. Positions index the presentation order,
/// which starts as `resolve_order(protocol)` and grows on repeat_scene.
class Controller {
 public:
  enum class Phase { idle, running, finished };

  explicit Controller(Protocol protocol, Clock clock = steady_seconds());

  std::vector<SceneEvent> step(const Command& command);

  Phase phase() const noexcept { return phase_; }
  std::size_t position() const noexcept { return position_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }
  const Protocol& protocol() const noexcept { return protocol_; }
  std::size_t current_entry() const;
  bool at_last() const { return position_ + 1 >= order_.size(); }

 private:
  SceneEvent scene_event(EventKind kind, std::size_t position) const;
  void transition(std::size_t to, std::vector<SceneEvent>& out);

  Protocol protocol_;
  Clock clock_;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  Phase phase_ = Phase::idle;
};

class ExperimentLoop;

/// What a scene handler sees while its scene is loaded.
struct SceneContext {
  Session& session;
  const SceneEntry& entry;
  std::size_t scene_index;
  std::size_t position;
  std::string scene_name;

  std::filesystem::path scene_dir() const { return session.scene_dir(scene_name); }
  /// Marks the scene done; the loop advances when auto-advance is on.
  void complete() { completed = true; }

  bool completed = false;
};

using SceneHandler = std::function<void(SceneContext&)>;

class SceneRegistry {
 public:
  void add(const std::string& scene_id, SceneHandler handler);
  bool contains(const std::string& scene_id) const { return handlers_.count(scene_id) != 0; }
  const SceneHandler& get(const std::string& scene_id) const;
  std::vector<std::string> ids() const;

  /// Throws ValidationError listing every scene id the protocol uses that
  /// has no handler.
  void validate(const Protocol& protocol) const;

 private:
  std::map<std::string, SceneHandler> handlers_;
};

/// Owns the controller for one session. Commands may be posted from any
/// thread; they are applied in order by whoever calls `drain`.
class ExperimentLoop {
 public:
  struct Options {
    bool auto_advance = true;
  };

  ExperimentLoop(Protocol protocol, SceneRegistry registry, Session& session, Options options,
                 Clock clock = steady_seconds());
  ExperimentLoop(Protocol protocol, SceneRegistry registry, Session& session)
      : ExperimentLoop(std::move(protocol), std::move(registry), session, Options{}) {}

  void post(Command command);
  /// Applies queued commands (including ones queued by handlers) until the
  /// queue is empty. Returns the number of commands applied.
  std::size_t drain();
  /// Posts start and drains.
  void run();

  /// Completion signal from outside a handler call (interactive scenes).
  void complete_current_scene();

  void add_listener(std::function<void(const SceneEvent&)> listener);

  const Controller& controller() const noexcept { return controller_; }
  const std::vector<SceneEvent>& events() const noexcept { return events_; }

 private:
  void dispatch(const SceneEvent& event);

  Controller controller_;
  SceneRegistry registry_;
  Session& session_;
  Options options_;
  std::vector<std::function<void(const SceneEvent&)>> listeners_;
  std::vector<SceneEvent> events_;
  std::mutex mutex_;
  std::deque<Command> queue_;
};

}  // namespace visionsim::experiment
