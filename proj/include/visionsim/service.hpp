#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "visionsim/blur.hpp"
#include "visionsim/depth_map.hpp"
#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/gaze.hpp"
#include "visionsim/questionnaire.hpp"
#include "visionsim/rng.hpp"
#include "visionsim/runner.hpp"

namespace visionsim::runner {

/// Envelope shared by both directions: {type, seq, timestamp, payload}.
struct Message {
  std::string type;
  std::int64_t seq = 0;
  double timestamp = 0.0;  // seconds
  nlohmann::json payload = nlohmann::json::object();
};

/// A message that could not be decoded. `seq` is set when it was readable.
class MessageError : public ValidationError {
 public:
  MessageError(const std::string& message, std::optional<std::int64_t> seq)
      : ValidationError(message, {"message"}), seq_(seq) {}
  std::optional<std::int64_t> seq() const noexcept { return seq_; }

 private:
  std::optional<std::int64_t> seq_;
};

Message parse_message(std::string_view text);
nlohmann::json to_json(const Message& m);

struct ServiceConfig {
  experiment::Protocol protocol;
  RunEnvironment env;
  /// Frame the gaze_proxy coordinates and the blur summary refer to.
  ViewGeometry view{100.0, 640, 360};
};

/// `connection == 0` means every connected client.
struct Outbound {
  std::uint64_t connection = 0;
  nlohmann::json message;
};

/// The served session state machine. Transport-free: callers feed decoded
/// text frames and clock ticks, and forward whatever comes back. Not
/// thread-safe; one session loop owns it.
class SessionService {
 public:
  explicit SessionService(ServiceConfig config);
  ~SessionService();

  /// Greets a client with `setup`, and the current state when a session runs.
  std::vector<Outbound> connect(std::uint64_t connection);
  void disconnect(std::uint64_t connection);

  /// Errors never escape: they come back as `error` messages to the sender.
  std::vector<Outbound> handle(std::uint64_t connection, std::string_view text);

  /// Advances the lens controller by `dt` seconds and reports autofocal_state
  /// while a task scene runs; returns nothing otherwise.
  std::vector<Outbound> tick(double dt);

  bool task_active() const;
  bool finished() const;
  const experiment::Session* session() const { return session_.get(); }
  const optics::FocusState& focus() const noexcept { return focus_; }
  double target_vergence() const noexcept { return target_; }

 private:
  struct ActiveTask {
    std::string scene_name;
    TaskSceneParams params;
    Rng trial_rng{0};
    std::size_t presented = 0;
    std::optional<task::Trial> current;
    double presented_at = 0.0;
    std::unique_ptr<task::TrialWriter> trials;
    std::unique_ptr<gaze::GazeWriter> gaze;
    std::vector<task::TrialRecord> records;
  };
  struct ActiveQuestionnaire {
    std::string scene_name;
    questionnaire::Questionnaire questionnaire;
  };

  void on_session_start(const Message& m);
  void on_command(const Message& m);
  void on_gaze_proxy(const Message& m);
  void on_trial_response(const Message& m);
  void on_questionnaire_answers(const Message& m);

  void drain_loop();
  void present_next_trial();
  void finish_task_scene();
  void emit(const std::string& type, nlohmann::json payload, std::uint64_t connection = 0);
  nlohmann::json setup_payload() const;
  nlohmann::json scene_state_payload() const;
  nlohmann::json trial_payload() const;
  nlohmann::json autofocal_payload() const;
  experiment::SceneRegistry make_registry();

  ServiceConfig config_;
  DepthMap depth_;
  double pitch_;
  std::map<std::uint64_t, std::set<std::int64_t>> seen_;
  std::int64_t out_seq_ = 0;
  double now_ = 0.0;
  std::unique_ptr<experiment::Session> session_;
  std::unique_ptr<experiment::ExperimentLoop> loop_;
  std::map<std::size_t, std::size_t> occurrences_;
  std::variant<std::monostate, ActiveTask, ActiveQuestionnaire> active_;
  optics::FocusState focus_;
  double target_ = 0.0;
  std::int64_t last_gaze_ns_ = -1;
  std::vector<Outbound> out_;
};

/// Feeds a recorded client trace (one JSON message per line; blank lines and
/// lines starting with '#' are skipped) to `service` as connection 1 and
/// returns every message it sent back.
std::vector<nlohmann::json> replay_trace(SessionService& service, std::istream& trace);

}  // namespace visionsim::runner
