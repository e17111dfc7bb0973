#include "visionsim/service.hpp"

#include <cmath>

#include "visionsim/fs_util.hpp"
#include "visionsim/office_scene.hpp"

namespace visionsim::runner {

namespace fs = std::filesystem;
using experiment::Command;
using experiment::EventKind;
using experiment::SceneContext;
using experiment::SceneEvent;

namespace {

constexpr double kPi = 3.14159265358979323846;

nlohmann::json placement_json(const task::Placement& p) {
  return {{"anchor", task::to_string(p.anchor)}, {"dx", p.dx}, {"dy", p.dy}};
}

nlohmann::json error_payload(const std::optional<std::int64_t>& seq, const char* kind,
                             const std::string& text, const std::vector<std::string>& details) {
  nlohmann::json p = {{"offending_seq", nullptr}, {"kind", kind}, {"message", text}};
  if (seq) p["offending_seq"] = *seq;
  if (!details.empty()) p["details"] = details;
  return p;
}

const nlohmann::json& require(const nlohmann::json& payload, const char* key) {
  const auto it = payload.find(key);
  if (it == payload.end()) {
    throw ValidationError(std::string("payload is missing '") + key + "'", {key});
  }
  return *it;
}

}  // namespace

Message parse_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MessageError(std::string("message is not JSON: ") + e.what(), std::nullopt);
  }
  if (!j.is_object()) throw MessageError("message must be a JSON object", std::nullopt);
  std::optional<std::int64_t> seq;
  if (auto it = j.find("seq"); it != j.end() && it->is_number_integer()) seq = it->get<std::int64_t>();
  if (!seq) throw MessageError("message needs an integer 'seq'", std::nullopt);
  Message m;
  m.seq = *seq;
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw MessageError("message needs a string 'type'", seq);
  m.type = type->get<std::string>();
  if (auto it = j.find("timestamp"); it != j.end()) {
    if (!it->is_number() || !std::isfinite(it->get<double>())) {
      throw MessageError("'timestamp' must be a finite number", seq);
    }
    m.timestamp = it->get<double>();
  }
  if (auto it = j.find("payload"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw MessageError("'payload' must be an object", seq);
    m.payload = *it;
  }
  return m;
}

nlohmann::json to_json(const Message& m) {
  return {{"type", m.type}, {"seq", m.seq}, {"timestamp", m.timestamp}, {"payload", m.payload}};
}

SessionService::SessionService(ServiceConfig config)
    : config_(std::move(config)),
      depth_(1, 1),
      pitch_(0.0) {
  config_.view.validate();
  validate_protocol(config_.protocol, config_.env);
  depth_ = render_office_scene(config_.env.task.layout, config_.view).second;
  pitch_ = pixel_pitch(config_.view);
  focus_.pupil_diameter = config_.env.task.pupil_mm;
}

SessionService::~SessionService() = default;

void SessionService::emit(const std::string& type, nlohmann::json payload,
                          std::uint64_t connection) {
  out_.push_back({connection, to_json(Message{type, ++out_seq_, now_, std::move(payload)})});
}

bool SessionService::task_active() const { return std::holds_alternative<ActiveTask>(active_); }

bool SessionService::finished() const {
  return loop_ && loop_->controller().phase() == experiment::Controller::Phase::finished;
}

std::vector<Outbound> SessionService::connect(std::uint64_t connection) {
  seen_[connection];
  emit("setup", setup_payload(), connection);
  if (session_) {
    emit("scene_state", scene_state_payload(), connection);
    if (const auto* t = std::get_if<ActiveTask>(&active_); t && t->current) {
      emit("trial_present", trial_payload(), connection);
      emit("autofocal_state", autofocal_payload(), connection);
    } else if (const auto* q = std::get_if<ActiveQuestionnaire>(&active_)) {
      emit("questionnaire_present",
           {{"scene", q->scene_name}, {"questionnaire", questionnaire::to_json(q->questionnaire)}},
           connection);
    }
  }
  return std::exchange(out_, {});
}

void SessionService::disconnect(std::uint64_t connection) { seen_.erase(connection); }

std::vector<Outbound> SessionService::handle(std::uint64_t connection, std::string_view text) {
  std::optional<std::int64_t> seq;
  try {
    const Message m = parse_message(text);
    seq = m.seq;
    if (!seen_[connection].insert(m.seq).second) return {};
    if (m.timestamp > now_) now_ = m.timestamp;
    if (m.type == "session_start") {
      on_session_start(m);
    } else if (m.type == "command") {
      on_command(m);
    } else if (m.type == "gaze_proxy") {
      on_gaze_proxy(m);
    } else if (m.type == "trial_response") {
      on_trial_response(m);
    } else if (m.type == "questionnaire_answers") {
      on_questionnaire_answers(m);
    } else {
      throw ValidationError("unknown message type '" + m.type + "'", {m.type});
    }
  } catch (const MessageError& e) {
    emit("error", error_payload(e.seq(), "malformed_message", e.what(), {}), connection);
  } catch (const ValidationError& e) {
    emit("error", error_payload(seq, to_string(e.kind()), e.what(), e.details()), connection);
  } catch (const Error& e) {
    emit("error", error_payload(seq, to_string(e.kind()), e.what(), {}), connection);
  } catch (const nlohmann::json::exception& e) {
    emit("error", error_payload(seq, "validation_error", e.what(), {}), connection);
  }
  return std::exchange(out_, {});
}

std::vector<Outbound> SessionService::tick(double dt) {
  if (!task_active()) return {};
  const auto& task = std::get<ActiveTask>(active_);
  if (const auto* af = std::get_if<optics::AutofocalConfig>(&task.params.focus)) {
    focus_ = optics::autofocal_update(*af, focus_, target_, dt);
  } else {
    if (!(dt > 0.0)) throw DomainError("dt must be > 0");
    focus_.timestamp += dt;
  }
  emit("autofocal_state", autofocal_payload());
  return std::exchange(out_, {});
}

// --- message handlers ------------------------------------------------------------

void SessionService::on_session_start(const Message& m) {
  if (session_) throw StateError("a session is already running");
  const std::string subject = require(m.payload, "subject").get<std::string>();
  if (subject.empty()) throw ValidationError("subject must not be empty", {"subject"});
  std::map<std::string, std::string> demographics;
  if (auto it = m.payload.find("demographics"); it != m.payload.end()) {
    for (const auto& [key, value] : it->items()) {
      demographics[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  experiment::validate_demographics(config_.env.demographic_fields, demographics);
  session_ = std::make_unique<experiment::Session>(experiment::create_session(
      subject, demographics, config_.env.data_root, config_.protocol.name));
  loop_ = std::make_unique<experiment::ExperimentLoop>(
      config_.protocol, make_registry(), *session_, experiment::ExperimentLoop::Options{true},
      [this] { return now_; });
  loop_->add_listener([this](const SceneEvent& e) {
    if (e.kind == EventKind::scene_unloaded || e.kind == EventKind::experiment_finished) {
      active_ = std::monostate{};
    }
    if (e.kind == EventKind::scene_loaded || e.kind == EventKind::experiment_finished) {
      emit("scene_state", scene_state_payload());
    }
  });
  loop_->post({Command::Kind::start});
  drain_loop();
}

void SessionService::on_command(const Message& m) {
  if (!loop_) throw StateError("no session; send session_start first");
  Command command{experiment::parse_command_kind(require(m.payload, "command").get<std::string>())};
  if (command.kind == Command::Kind::start) throw StateError("the session starts with session_start");
  if (command.kind == Command::Kind::jump) {
    const auto& index = require(m.payload, "index");
    if (!index.is_number_integer() || index.get<long long>() < 0) {
      throw DomainError("jump index must be a non-negative integer");
    }
    command.target = index.get<std::size_t>();
  }
  loop_->post(command);
  drain_loop();
  // Repeating changes the order without a transition.
  if (command.kind == Command::Kind::repeat_scene) emit("scene_state", scene_state_payload());
}

void SessionService::on_gaze_proxy(const Message& m) {
  if (!loop_) throw StateError("no session; send session_start first");
  auto* task = std::get_if<ActiveTask>(&active_);
  if (task == nullptr) return;  // pointer motion outside task scenes carries no meaning
  const double x = require(m.payload, "x").get<double>();
  const double y = require(m.payload, "y").get<double>();
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw DomainError("gaze_proxy x and y must lie in [0, 1]");
  }
  const auto& screens = config_.env.task.layout.screens;
  std::optional<std::size_t> screen;
  if (auto it = m.payload.find("screen"); it != m.payload.end() && !it->is_null()) {
    if (it->is_number_integer()) {
      const auto i = it->get<long long>();
      if (i < 0 || static_cast<std::size_t>(i) >= screens.size()) {
        throw DomainError("screen index " + std::to_string(i) + " out of range");
      }
      screen = static_cast<std::size_t>(i);
    } else {
      const std::string name = it->get<std::string>();
      for (std::size_t i = 0; i < screens.size(); ++i) {
        if (screens[i].name == name) screen = i;
      }
      if (!screen) throw DomainError("unknown screen '" + name + "'");
    }
  }
  const optics::PixelPoint px{
      std::min(x * static_cast<double>(config_.view.image_width),
               static_cast<double>(config_.view.image_width) - 0.5),
      std::min(y * static_cast<double>(config_.view.image_height),
               static_cast<double>(config_.view.image_height) - 0.5)};
  if (screen) {
    target_ = optics::vergence_from_distance(screens[*screen].distance);
  } else {
    const auto* af = std::get_if<optics::AutofocalConfig>(&task->params.focus);
    const optics::AutofocalConfig lookup = af ? *af : optics::AutofocalConfig{};
    if (auto v = optics::gaze_target_vergence(depth_, px, lookup, pitch_)) target_ = *v;
  }

  const auto [lateral, vertical] = pixel_to_angles(config_.view, px);
  const double lat = lateral * kPi / 180.0;
  const double vert = vertical * kPi / 180.0;
  gaze::GazeSample s;
  s.timestamp_ns = std::max<std::int64_t>(std::llround(now_ * 1e9), last_gaze_ns_ + 1);
  last_gaze_ns_ = s.timestamp_ns;
  s.combined.direction = gaze::normalized({std::tan(lat), std::tan(vert), 1.0});
  s.combined.pupil_mm = focus_.pupil_diameter;
  s.combined.valid = true;
  nlohmann::json extras = {{"source", "pointer"}, {"x", x}, {"y", y}};
  extras["screen"] = screen ? nlohmann::json(*screen) : nlohmann::json(nullptr);
  s.vendor_extras = extras.dump();
  if (!task->gaze) {
    task->gaze = std::make_unique<gaze::GazeWriter>(
        reserve_unique_file(session_->scene_dir(task->scene_name), "gaze", ".csv"));
  }
  task->gaze->write(s);
}

void SessionService::on_trial_response(const Message& m) {
  auto* task = std::get_if<ActiveTask>(&active_);
  if (task == nullptr || !task->current) throw StateError("no trial is being presented");
  const task::Trial& trial = *task->current;
  if (auto it = m.payload.find("trial_id"); it != m.payload.end() && !it->is_null()) {
    if (it->get<std::size_t>() != trial.id) {
      throw ValidationError("trial_id " + it->dump() + " does not match the presented trial " +
                                std::to_string(trial.id),
                            {"trial_id"});
    }
  }
  const auto response = task::parse_response(require(m.payload, "response").get<std::string>());
  task::TrialRecord record;
  record.trial = trial;
  record.response = task::score_response(trial, response, now_ - task->presented_at);
  const std::array<std::size_t, 3> roles = {trial.landolt_screen, trial.sloan_screen,
                                            trial.table_screen};
  const auto& screens = config_.env.task.layout.screens;
  for (std::size_t r = 0; r < 3; ++r) {
    record.blur_major[r] =
        optics::blur_ellipse(config_.env.task.refraction, focus_.lens_power,
                             optics::vergence_from_distance(screens[roles[r]].distance),
                             focus_.pupil_diameter)
            .major;
  }
  task->trials->write(record);
  task->records.push_back(record);
  task->current.reset();
  emit("trial_recorded", {{"trial_id", trial.id}, {"correct", record.response.correct}});
  if (task->presented < task->params.trials) {
    present_next_trial();
  } else {
    finish_task_scene();
  }
}

void SessionService::on_questionnaire_answers(const Message& m) {
  auto* active = std::get_if<ActiveQuestionnaire>(&active_);
  if (active == nullptr) throw StateError("no questionnaire is being presented");
  const auto& answers = require(m.payload, "answers");
  if (!answers.is_object()) throw ValidationError("'answers' must be an object", {"answers"});
  questionnaire::ResponseSet responses;
  responses.abbreviation = active->questionnaire.abbreviation;
  responses.scene_name = active->scene_name;
  responses.answers = answers.get<std::map<std::string, nlohmann::json>>();
  const fs::path path =
      questionnaire::record_responses(active->questionnaire, responses, *session_);
  emit("questionnaire_recorded",
       {{"scene", active->scene_name}, {"file", path.filename().string()}});
  loop_->complete_current_scene();
  drain_loop();
}

// --- scenes ------------------------------------------------------------------------

experiment::SceneRegistry SessionService::make_registry() {
  experiment::SceneRegistry registry;
  registry.add(kMainMenu, [this](SceneContext& ctx) {
    nlohmann::json j = {{"subject_id", ctx.session.subject_id},
                        {"demographics", ctx.session.demographics},
                        {"fields", experiment::to_json(config_.env.demographic_fields)}};
    write_json_file(reserve_unique_file(ctx.scene_dir(), "demographics", ".json"), j);
    ctx.complete();
  });
  auto task_handler = [this](SceneContext& ctx) {
    ActiveTask t;
    t.scene_name = ctx.scene_name;
    t.params = parse_task_scene(ctx.entry.scene_id, ctx.entry.parameter);
    // The same stream run_block draws its trials from.
    Rng master(scene_seed(config_.env.seed, ctx.scene_index, occurrences_[ctx.scene_index]++));
    t.trial_rng = master.fork();
    t.trials = std::make_unique<task::TrialWriter>(
        reserve_unique_file(ctx.scene_dir(), "trials", ".csv"));
    focus_.lens_power = 0.0;
    if (const auto* f = std::get_if<task::FixedFocus>(&t.params.focus)) focus_.lens_power = f->lens_power;
    target_ = focus_.lens_power;
    active_ = std::move(t);
    present_next_trial();
  };
  registry.add(kBaseline, task_handler);
  registry.add(kMatchingTask, task_handler);
  registry.add(kQuestionnaire, [this](SceneContext& ctx) {
    ActiveQuestionnaire q{ctx.scene_name, questionnaire::load_questionnaire(
                                              ctx.entry.parameter, config_.env.questionnaire_dir)};
    emit("questionnaire_present",
         {{"scene", q.scene_name}, {"questionnaire", questionnaire::to_json(q.questionnaire)}});
    active_ = std::move(q);
  });
  return registry;
}

void SessionService::present_next_trial() {
  auto& t = std::get<ActiveTask>(active_);
  t.current = task::generate_trial(t.trial_rng, config_.env.task.layout, config_.env.task,
                                   t.presented++);
  t.presented_at = now_;
  emit("trial_present", trial_payload());
}

void SessionService::finish_task_scene() {
  auto& t = std::get<ActiveTask>(active_);
  if (t.gaze) t.gaze->flush();
  const task::BlockResult result = task::summarize(t.records, config_.env.task.layout);
  write_json_file(reserve_unique_file(session_->scene_dir(t.scene_name), "summary", ".json"),
                  block_summary(result, t.params));
  loop_->complete_current_scene();
  drain_loop();
}

void SessionService::drain_loop() {
  loop_->drain();
  // Rewritten after every transition so an abandoned session still has its log.
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : loop_->events()) events.push_back(experiment::to_json(e));
  write_json_file(session_->session_dir / "events.json", events);
}

// --- payloads ----------------------------------------------------------------------

nlohmann::json SessionService::setup_payload() const {
  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < config_.protocol.scenes.size(); ++i) {
    const auto& s = config_.protocol.scenes[i];
    scenes.push_back(
        {{"scene", s.scene_id}, {"parameter", s.parameter}, {"name", config_.protocol.scene_name(i)}});
  }
  return {{"protocol", config_.protocol.name},
          {"scenes", scenes},
          {"fields", experiment::to_json(config_.env.demographic_fields)},
          {"layout", config_.env.task.layout},
          {"view",
           {{"horizontal_fov", config_.view.horizontal_fov},
            {"width", config_.view.image_width},
            {"height", config_.view.image_height},
            {"pixel_pitch", pitch_}}},
          {"session_running", static_cast<bool>(session_)}};
}

nlohmann::json SessionService::scene_state_payload() const {
  const auto& c = loop_->controller();
  nlohmann::json p = {{"session", session_->session_dir.filename().string()},
                      {"total", c.order().size()}};
  switch (c.phase()) {
    case experiment::Controller::Phase::idle: p["phase"] = "idle"; break;
    case experiment::Controller::Phase::running: p["phase"] = "running"; break;
    case experiment::Controller::Phase::finished: p["phase"] = "finished"; break;
  }
  if (c.phase() == experiment::Controller::Phase::running) {
    const std::size_t entry = c.current_entry();
    const auto& s = config_.protocol.scenes[entry];
    p["position"] = c.position();
    p["scene_index"] = entry;
    p["scene_id"] = s.scene_id;
    p["parameter"] = s.parameter;
    p["scene_name"] = config_.protocol.scene_name(entry);
  }
  return p;
}

nlohmann::json SessionService::trial_payload() const {
  const auto& t = std::get<ActiveTask>(active_);
  const task::Trial& trial = *t.current;
  return {{"scene", t.scene_name},
          {"trial_id", trial.id},
          {"number", t.presented},
          {"of", t.params.trials},
          {"table_screen", trial.table_screen},
          {"landolt_screen", trial.landolt_screen},
          {"sloan_screen", trial.sloan_screen},
          {"landolt_orientation", static_cast<double>(trial.landolt_orientation) * task::kOrientationStep},
          {"sloan_letter", std::string(1, trial.sloan_letter)},
          {"table", std::string(trial.table.begin(), trial.table.end())},
          {"landolt_placement", placement_json(trial.landolt_placement)},
          {"sloan_placement", placement_json(trial.sloan_placement)},
          {"optotype_gap", trial.optotype_gap}};
}

nlohmann::json SessionService::autofocal_payload() const {
  const auto& t = std::get<ActiveTask>(active_);
  nlohmann::json screens = nlohmann::json::array();
  const auto& layout = config_.env.task.layout;
  for (std::size_t i = 0; i < layout.screens.size(); ++i) {
    const auto& s = layout.screens[i];
    const auto e = optics::blur_ellipse(config_.env.task.refraction, focus_.lens_power,
                                        optics::vergence_from_distance(s.distance),
                                        focus_.pupil_diameter);
    screens.push_back({{"screen", i},
                       {"name", s.name},
                       {"distance", s.distance},
                       {"major_arcmin", e.major},
                       {"minor_arcmin", e.minor},
                       {"orientation", e.orientation},
                       {"major_px", e.major / pitch_},
                       {"minor_px", e.minor / pitch_}});
  }
  const auto* af = std::get_if<optics::AutofocalConfig>(&t.params.focus);
  nlohmann::json p = {{"scene", t.scene_name},
                      {"controller", af ? optics::to_string(af->algorithm) : "fixed"},
                      {"lens_power", focus_.lens_power},
                      {"target_vergence", target_},
                      {"focus_distance", nullptr},
                      {"pupil_mm", focus_.pupil_diameter},
                      {"time", focus_.timestamp},
                      {"screens", screens}};
  if (focus_.lens_power > 0.0) p["focus_distance"] = 1.0 / focus_.lens_power;
  return p;
}

std::vector<nlohmann::json> replay_trace(SessionService& service, std::istream& trace) {
  std::vector<nlohmann::json> out;
  auto keep = [&out](std::vector<Outbound> batch) {
    for (auto& o : batch) out.push_back(std::move(o.message));
  };
  keep(service.connect(1));
  std::string line;
  while (std::getline(trace, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    keep(service.handle(1, line));
  }
  service.disconnect(1);
  return out;
}

}  // namespace visionsim::runner
