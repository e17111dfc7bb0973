#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "visionsim/blur.hpp"
#include "visionsim/gaze.hpp"
#include "visionsim/layout.hpp"
#include "visionsim/optics.hpp"
#include "visionsim/rng.hpp"

namespace visionsim::task {

inline constexpr std::size_t kOrientationCount = 8;
inline constexpr double kOrientationStep = 45.0;
inline constexpr std::array<char, kOrientationCount> kSloanLetters = {'C', 'D', 'H', 'K',
                                                                      'N', 'O', 'R', 'S'};

/// Letter index in kSloanLetters, or nullopt.
std::optional<std::size_t> letter_index(char letter);

enum class Anchor { center, top_left, top_right, bottom_left, bottom_right };

const char* to_string(Anchor anchor);
Anchor parse_anchor(const std::string& name);

/// Stimulus position relative to its screen center, degrees (+x right, +y up).
struct Placement {
  Anchor anchor = Anchor::center;
  double dx = 0.0;
  double dy = 0.0;

  bool operator==(const Placement&) const = default;
};

struct Trial {
  std::size_t id = 0;
  std::size_t table_screen = 0;
  std::size_t landolt_screen = 1;
  std::size_t sloan_screen = 2;
  std::size_t landolt_orientation = 0;  // index; gap direction = index x 45 degrees
  char sloan_letter = 'C';
  /// Table column k pairs orientation k with table[k].
  std::array<char, kOrientationCount> table = kSloanLetters;
  bool is_match = false;
  Placement landolt_placement;
  Placement sloan_placement;
  double optotype_gap = 2.0;  // arcmin

  bool operator==(const Trial&) const = default;
};

bool ground_truth(const Trial& trial);

/// Synthetic respondent. Identification probability for blur ratio r
/// (blur major axis / optotype gap):
///   lapse/8 + (1 - lapse) * [guess + (1 - guess) * logistic(slope * (1 - r / threshold_ratio))]
struct ObserverModel {
  double guess_rate = 1.0 / 8.0;
  double threshold_ratio = 1.0;
  double slope = 4.0;
  double lapse = 0.0;

  void validate() const;
};

double identification_probability(const ObserverModel& model, double blur_ratio);

/// How simulated eyes visit the screens during a trial.
struct GazeModel {
  double sample_rate = 100.0;
  double dwell = 0.6;
  double saccade_duration = 0.05;
  double noise_sigma = 0.2;
  double recheck_probability = 0.25;

  void validate() const;
};

struct TaskConfig {
  SceneLayout layout = SceneLayout::office();
  double optotype_gap = 2.0;     // arcmin
  double p_center = 0.5;
  double jitter_sigma = 0.5;     // degrees
  double corner_fraction = 0.6;  // corner anchor, as a fraction of the half extents
  ObserverModel observer;
  GazeModel gaze;
  optics::RefractionProfile refraction;
  double pupil_mm = 4.0;
  /// Resolution of the depth map used for gaze-depth lookup.
  ViewGeometry depth_geometry{100.0, 400, 225};

  void validate() const;
};

TaskConfig parse_task_config(const nlohmann::json& j);
TaskConfig load_task_config(const std::filesystem::path& path);
nlohmann::json to_json(const TaskConfig& config);

Trial generate_trial(Rng& rng, const SceneLayout& layout, const TaskConfig& config,
                     std::size_t id = 0);

enum class Response { match, no_match };

const char* to_string(Response r);
Response parse_response(const std::string& name);

struct TrialResponse {
  std::size_t trial_id = 0;
  Response response = Response::no_match;
  bool correct = false;
  double response_time = 0.0;  // seconds
};

/// The observer's per-stimulus identification outcome alongside the response.
struct Observation {
  TrialResponse response;
  bool landolt_identified = false;
  bool sloan_identified = false;
  bool table_identified = false;
};

using ScreenBlur = std::map<std::size_t, optics::BlurEllipse>;

Observation observe_trial(const Trial& trial, const ScreenBlur& blur_at_screen,
                          const ObserverModel& model, Rng& rng);
TrialResponse observer_respond(const Trial& trial, const ScreenBlur& blur_at_screen,
                               const ObserverModel& model, Rng& rng);

/// Scores a human or scripted response against the ground truth.
TrialResponse score_response(const Trial& trial, Response response, double response_time);

struct FixedFocus {
  double lens_power = 0.0;
};

using FocusControl = std::variant<optics::AutofocalConfig, FixedFocus>;

struct BlockConfig {
  std::size_t n_trials = 100;
  TaskConfig task;
  FocusControl focus = optics::AutofocalConfig{};
  std::uint64_t seed = 1;
  /// Scales every blur the observer sees.
  double blur_multiplier = 1.0;
  bool keep_gaze = false;
};

struct TrialRecord {
  Trial trial;
  TrialResponse response;
  /// Blur major axis (arcmin) the observer saw for landolt, sloan, table.
  std::array<double, 3> blur_major{};
  /// Whether the observer identified landolt, sloan, table.
  std::array<bool, 3> identified{};
};

struct DistanceStats {
  std::size_t stimuli = 0;
  std::size_t identified = 0;
  std::size_t trials = 0;  // trials whose table was at this distance
  std::size_t correct = 0;
};

struct BlockResult {
  double proportion_correct = 0.0;
  double mean_response_time = 0.0;
  std::map<double, DistanceStats> by_distance;
  std::vector<TrialRecord> records;
  std::vector<gaze::GazeSample> gaze;
};

BlockResult run_block(const BlockConfig& config);

/// Deterministic summary; order-independent over the records.
BlockResult summarize(std::vector<TrialRecord> records, const SceneLayout& layout);

// --- trials.csv --------------------------------------------------------------

const std::vector<std::string>& trial_columns();
std::string format_trial_row(const TrialRecord& record);
TrialRecord parse_trial_row(const std::string& line, std::size_t row);

class TrialWriter {
 public:
  explicit TrialWriter(const std::filesystem::path& path);
  void write(const TrialRecord& record);
  std::size_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

std::vector<TrialRecord> read_trials_csv(const std::filesystem::path& path);

}  // namespace visionsim::task
