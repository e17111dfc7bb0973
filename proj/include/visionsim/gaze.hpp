#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "visionsim/rng.hpp"

namespace visionsim::experiment {
struct Session;
}

namespace visionsim::gaze {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const Vec3&) const = default;
};

double norm(const Vec3& v);
Vec3 normalized(const Vec3& v);

/// Head frame: +x right, +y up, +z forward, meters.
struct EyeSample {
  Vec3 origin;
  Vec3 direction;
  double pupil_mm = 0.0;
  bool valid = false;

  bool operator==(const EyeSample&) const = default;
};

struct GazeSample {
  std::int64_t timestamp_ns = 0;
  EyeSample left;
  EyeSample right;
  EyeSample combined;
  std::string vendor_extras;

  bool operator==(const GazeSample&) const = default;
};

// --- generic file format ---------------------------------------------------

/// timestamp_ns, then {left,right,combined} x {origin_xyz, dir_xyz, pupil_mm,
/// valid}, then vendor_extras (a JSON string literal, CSV-quoted).
const std::vector<std::string>& csv_columns();
std::string csv_header_line();
std::string format_csv_row(const GazeSample& sample);
/// `row` is only used for error reporting.
GazeSample parse_csv_row(std::string_view line, std::size_t row);

/// Streams samples to a gaze file. Rejects non-increasing timestamps.
class GazeWriter {
 public:
  explicit GazeWriter(const std::filesystem::path& path);

  void write(const GazeSample& sample);
  void flush();
  std::size_t count() const noexcept { return count_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
  std::optional<std::int64_t> last_timestamp_;
};

std::vector<GazeSample> read_gaze_csv(const std::filesystem::path& path);

class SampleQueue;

/// Writes `session_dir/<scene_name>/gaze.csv` (gaze_1.csv, ... when the scene
/// already recorded). Returns the file written.
std::filesystem::path record_gaze(std::span<const GazeSample> samples,
                                  const experiment::Session& session,
                                  const std::string& scene_name);
/// Consumes the queue until it is closed (by stop_device, or when a finite source runs out).
std::filesystem::path record_gaze(SampleQueue& stream, const experiment::Session& session,
                                  const std::string& scene_name);

// --- sources ---------------------------------------------------------------

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// nullopt when exhausted or interrupted; see `finished`.
  virtual std::optional<GazeSample> next() = 0;
  /// Queried after `next` returned nullopt: true when no more samples will come.
  virtual bool finished() const { return true; }
  /// Wakes a blocked `next`.
  virtual void interrupt() {}
};

struct Fixation {
  Vec3 target;
  double dwell = 1.0;  // seconds
};

struct FixationScript {
  std::vector<Fixation> fixations;
  double saccade_duration = 0.05;  // seconds
  double noise_sigma = 0.0;        // degrees
  double sample_rate = 100.0;      // Hz
  double pupil_mm = 4.0;
  double ipd = 0.0;                // meters; 0 puts both eyes at the head origin
  std::uint64_t seed = 1;

  void validate() const;
  double duration() const;
};

void to_json(nlohmann::json& j, const FixationScript& s);
void from_json(const nlohmann::json& j, FixationScript& s);

/// A sample tagged with the fixation it belongs to (nullopt during saccades).
struct ScriptedSample {
  GazeSample sample;
  std::optional<std::size_t> fixation;
};

/// Lazy generator for a fixation script.
class SimulatedSource : public SampleSource {
 public:
  explicit SimulatedSource(FixationScript script, std::int64_t start_ns = 0);

  std::optional<GazeSample> next() override;
  std::optional<ScriptedSample> next_scripted();
  std::size_t total_samples() const noexcept { return total_; }

 private:
  FixationScript script_;
  std::int64_t start_ns_;
  std::size_t total_;
  std::size_t index_ = 0;
  std::vector<double> fixation_starts_;
  Rng rng_;
};

std::vector<GazeSample> simulated_gaze(const FixationScript& script, std::int64_t start_ns = 0);
std::vector<ScriptedSample> simulate_script(const FixationScript& script, std::int64_t start_ns = 0);

class ReplaySource : public SampleSource {
 public:
  explicit ReplaySource(const std::filesystem::path& path);
  explicit ReplaySource(std::vector<GazeSample> samples);

  std::optional<GazeSample> next() override;

 private:
  std::vector<GazeSample> samples_;
  std::size_t index_ = 0;
};

/// Samples pushed by application code (e.g. pointer-as-gaze from a client).
class LoopbackSource : public SampleSource {
 public:
  void push(GazeSample sample);
  void close();
  /// Blocks until a sample arrives, the source is closed, or interrupted.
  std::optional<GazeSample> next() override;
  bool finished() const override;
  void interrupt() override;

 private:
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<GazeSample> pending_;
  bool closed_ = false;
  bool interrupted_ = false;
};

// --- delivery --------------------------------------------------------------

/// Ordered single-producer queue; each consumer owns one.
class SampleQueue {
 public:
  void push(const GazeSample& sample);
  void close();
  /// Blocks until a sample is available; nullopt once closed and empty.
  std::optional<GazeSample> pop();
  std::optional<GazeSample> try_pop();
  std::vector<GazeSample> drain();
  bool closed() const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<GazeSample> items_;
  bool closed_ = false;
};

// --- devices ---------------------------------------------------------------

enum class Capability { calibration, per_eye, pupil };

const char* to_string(Capability c);
Capability parse_capability(const std::string& name);

struct SimulatedSpec {
  FixationScript script;
};
struct ReplaySpec {
  std::filesystem::path path;
};
struct ExternalSpec {
  nlohmann::json config;
};

struct DeviceDescriptor {
  std::string name;
  std::set<Capability> capabilities;
  std::variant<SimulatedSpec, ReplaySpec, ExternalSpec> source;

  bool has(Capability c) const { return capabilities.count(c) != 0; }
};

/// real_time paces delivery by sample timestamps; free_run delivers as fast
/// as the source produces.
enum class Pacing { real_time, free_run };

/// Device and sampling lifecycles are separate: sampling can be stopped and
/// restarted without restarting the device. Stopping the device stops
/// sampling and closes every subscriber queue.
class GazeDevice {
 public:
  GazeDevice(DeviceDescriptor descriptor, std::unique_ptr<SampleSource> source,
             Pacing pacing = Pacing::real_time);
  ~GazeDevice();

  GazeDevice(const GazeDevice&) = delete;
  GazeDevice& operator=(const GazeDevice&) = delete;

  void start_device();
  void stop_device();
  void start_sampling();
  /// Returns after every produced sample has been delivered.
  void stop_sampling();
  void calibrate(const std::string& kind = "eye");

  /// Blocks until the source is exhausted or sampling is stopped.
  void wait_until_exhausted();

  std::shared_ptr<SampleQueue> subscribe();

  const DeviceDescriptor& descriptor() const noexcept { return descriptor_; }
  bool device_running() const noexcept { return device_running_; }
  bool sampling() const noexcept { return sampling_; }
  std::size_t device_starts() const noexcept { return device_starts_; }
  std::size_t samples_delivered() const noexcept { return delivered_; }
  std::vector<std::string> calibration_log() const;

 private:
  void sample_loop();

  DeviceDescriptor descriptor_;
  std::unique_ptr<SampleSource> source_;
  Pacing pacing_;
  bool device_running_ = false;
  bool sampling_ = false;
  std::size_t device_starts_ = 0;
  std::atomic<std::size_t> delivered_{0};
  std::atomic<bool> stop_requested_{false};
  std::atomic<bool> exhausted_{false};
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::vector<std::shared_ptr<SampleQueue>> subscribers_;
  std::vector<std::string> calibration_log_;
  std::optional<GazeSample> held_;
  std::thread worker_;
};

/// Devices configured from a JSON list of descriptors.
class DeviceRegistry {
 public:
  /// A noiseless simulated device named "simulated": 10 s straight ahead.
  static DeviceRegistry builtin();
  /// Relative replay paths resolve against `base_dir`.
  static DeviceRegistry from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static DeviceRegistry load(const std::filesystem::path& path);
  /// `flag` when given, else $VISIONSIM_DEVICES, else builtin().
  static DeviceRegistry resolve(const std::optional<std::filesystem::path>& flag);

  void add(DeviceDescriptor descriptor);
  const DeviceDescriptor& descriptor(const std::string& name) const;
  std::vector<std::string> names() const;
  bool empty() const { return devices_.empty(); }

  std::unique_ptr<GazeDevice> create(const std::string& name, Pacing pacing = Pacing::real_time) const;
  /// For external loopback devices, the source to push samples into.
  std::unique_ptr<GazeDevice> create_loopback(const std::string& name,
                                              LoopbackSource*& source_out,
                                              Pacing pacing = Pacing::free_run) const;

 private:
  std::vector<DeviceDescriptor> devices_;
};

}  // namespace visionsim::gaze
