#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "visionsim/blur.hpp"
#include "visionsim/depth_map.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/image.hpp"
#include "visionsim/optics.hpp"
#include "visionsim/vision_task.hpp"

namespace visionsim::runner {

/// Scene ids the runner knows how to execute.
inline constexpr const char* kMainMenu = "main_menu";
inline constexpr const char* kBaseline = "baseline";
inline constexpr const char* kMatchingTask = "matching_task";
inline constexpr const char* kQuestionnaire = "questionnaire";

bool is_task_scene(const std::string& scene_id);

/// `key=value;key=value`. Whitespace around keys and values is dropped.
std::map<std::string, std::string> parse_scene_parameter(const std::string& parameter);

/// Task scene parameters. Keys: controller (instant, slew_limited, low_pass,
/// fixed), power, trials, slew_rate, time_constant, foveal_window, aggregator.
/// Baseline defaults to a fixed 0 D lens, matching_task to instant autofocal.
struct TaskSceneParams {
  task::FocusControl focus;
  std::size_t trials = 20;
};

TaskSceneParams parse_task_scene(const std::string& scene_id, const std::string& parameter);

/// Seed for the `occurrence`-th run of protocol entry `entry`.
std::uint64_t scene_seed(std::uint64_t run_seed, std::size_t entry, std::size_t occurrence);

/// Everything a run needs besides the protocol.
struct RunEnvironment {
  std::filesystem::path data_root;
  std::filesystem::path questionnaire_dir = "data/questionnaires";
  task::TaskConfig task;
  std::vector<experiment::DemographicField> demographic_fields =
      experiment::default_demographic_fields();
  std::uint64_t seed = 0;
};

/// Checks the protocol against the runner's scene registry, each task scene's
/// parameter grammar and every referenced questionnaire file.
void validate_protocol(const experiment::Protocol& protocol, const RunEnvironment& env);

/// `--data-root` when given, else $VISIONSIM_DATA, else `visionsim_data`.
std::filesystem::path resolve_data_root(const std::optional<std::filesystem::path>& flag);

struct GazeOverride {
  std::filesystem::path devices_config;
  std::string device;
};

struct HeadlessOptions {
  std::string subject;
  std::map<std::string, std::string> demographics;
  /// Records task-scene gaze from this device instead of the synthetic
  /// observer's gaze.
  std::optional<GazeOverride> gaze_device;
};

struct RunResult {
  experiment::Session session;
  std::vector<experiment::SceneEvent> events;
  std::map<std::string, task::BlockResult> blocks;  // by scene name
};

/// Runs every scene with the synthetic observer and default questionnaire
/// answers, writing the full session folder.
RunResult run_headless(const experiment::Protocol& protocol, const RunEnvironment& env,
                       const HeadlessOptions& options);

/// Writes `<dir>/trials.csv` (or a suffixed name) and returns its path.
std::filesystem::path write_trials(const std::filesystem::path& dir,
                                   const std::vector<task::TrialRecord>& records);

nlohmann::json block_summary(const task::BlockResult& result, const TaskSceneParams& params);

struct PreviewOptions {
  std::optional<std::filesystem::path> image;
  std::optional<std::filesystem::path> depth;
  optics::RefractionProfile profile;
  double lens_power = 0.0;
  double pupil_mm = 4.0;
  double fov = 100.0;
  std::optional<std::filesystem::path> power_map;  // JSON {"rows","cols","values"}
  /// Synthetic office render size when no image is given.
  std::size_t width = 640;
  std::size_t height = 360;
};

struct PreviewResult {
  RgbImage input;
  DepthMap depth;
  BlurField field;
  RgbImage output;
};

/// Loads or synthesizes the scene, then blurs it. Image/depth size mismatch
/// and out-of-range pupils raise ValidationError.
PreviewResult render_preview(const PreviewOptions& options);

optics::PowerMap load_power_map(const std::filesystem::path& path);

}  // namespace visionsim::runner
