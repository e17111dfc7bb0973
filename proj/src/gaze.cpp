#include "visionsim/gaze.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>

#include "visionsim/csv.hpp"
#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/fs_util.hpp"

namespace visionsim::gaze {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kEyeColumns = 8;
constexpr std::size_t kColumnCount = 1 + 3 * kEyeColumns + 1;

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Rotates `dir` (unit) by `angle` radians toward the tangent direction at
/// azimuth `azimuth`.
Vec3 perturb(Vec3 dir, double angle, double azimuth) {
  const Vec3 helper = std::abs(dir.y) < 0.9 ? Vec3{0.0, 1.0, 0.0} : Vec3{1.0, 0.0, 0.0};
  const Vec3 e1 = normalized(cross(helper, dir));
  const Vec3 e2 = cross(dir, e1);
  const Vec3 tangent = std::cos(azimuth) * e1 + std::sin(azimuth) * e2;
  return normalized(std::cos(angle) * dir + std::sin(angle) * tangent);
}

double parse_number(const std::string& text, std::size_t row, const char* column) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, value);
  if (result.ec != std::errc() || result.ptr != end) {
    throw ParseError("row " + std::to_string(row) + ": bad number in column " + column, row);
  }
  return value;
}

}  // namespace

double norm(const Vec3& v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }

Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (n == 0.0) return v;
  return {v.x / n, v.y / n, v.z / n};
}

// --- file format -------------------------------------------------------------

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> columns = [] {
    std::vector<std::string> c{"timestamp_ns"};
    for (const char* eye : {"left", "right", "combined"}) {
      for (const char* field :
           {"origin_x", "origin_y", "origin_z", "dir_x", "dir_y", "dir_z", "pupil_mm", "valid"}) {
        c.push_back(std::string(eye) + "_" + field);
      }
    }
    c.push_back("vendor_extras");
    return c;
  }();
  return columns;
}

std::string csv_header_line() {
  std::string line;
  for (const auto& c : csv_columns()) line += (line.empty() ? "" : ",") + c;
  return line;
}

std::string format_csv_row(const GazeSample& s) {
  std::string line = std::to_string(s.timestamp_ns);
  for (const EyeSample* eye : {&s.left, &s.right, &s.combined}) {
    // Invalid eyes are written zeroed so every row has the same shape.
    const EyeSample e = eye->valid ? *eye : EyeSample{};
    for (double v : {e.origin.x, e.origin.y, e.origin.z, e.direction.x, e.direction.y,
                     e.direction.z, e.pupil_mm}) {
      line += ',';
      line += format_double(v);
    }
    line += e.valid ? ",1" : ",0";
  }
  line += ',';
  line += csv_field(nlohmann::json(s.vendor_extras).dump());
  return line;
}

GazeSample parse_csv_row(std::string_view line, std::size_t row) {
  const auto fields = split_csv_line(line);
  if (!fields) throw ParseError("row " + std::to_string(row) + ": unterminated quote", row);
  if (fields->size() != kColumnCount) {
    throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(kColumnCount) +
                         " columns, found " + std::to_string(fields->size()),
                     row);
  }
  const auto& f = *fields;
  const auto& names = csv_columns();
  GazeSample s;
  {
    std::int64_t ts = 0;
    const char* end = f[0].data() + f[0].size();
    const auto r = std::from_chars(f[0].data(), end, ts);
    if (r.ec != std::errc() || r.ptr != end) {
      throw ParseError("row " + std::to_string(row) + ": bad timestamp_ns", row);
    }
    s.timestamp_ns = ts;
  }
  std::size_t col = 1;
  for (EyeSample* eye : {&s.left, &s.right, &s.combined}) {
    double v[7];
    for (double& x : v) {
      x = parse_number(f[col], row, names[col].c_str());
      ++col;
    }
    eye->origin = {v[0], v[1], v[2]};
    eye->direction = {v[3], v[4], v[5]};
    eye->pupil_mm = v[6];
    if (f[col] != "0" && f[col] != "1") {
      throw ParseError("row " + std::to_string(row) + ": bad validity flag", row);
    }
    eye->valid = f[col] == "1";
    ++col;
  }
  try {
    const auto extras = nlohmann::json::parse(f[col]);
    if (!extras.is_string()) throw ParseError("vendor_extras is not a string", row);
    s.vendor_extras = extras.get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("row " + std::to_string(row) + ": bad vendor_extras", row);
  }
  return s;
}

GazeWriter::GazeWriter(const fs::path& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  out_ << csv_header_line() << '\n';
}

void GazeWriter::write(const GazeSample& sample) {
  if (last_timestamp_ && sample.timestamp_ns <= *last_timestamp_) {
    throw DomainError("gaze timestamps must strictly increase (" +
                      std::to_string(sample.timestamp_ns) + " after " +
                      std::to_string(*last_timestamp_) + ")");
  }
  out_ << format_csv_row(sample) << '\n';
  if (!out_) {
    throw IoError("failed writing " + path_.string() + " after " + std::to_string(count_) +
                      " samples",
                  count_);
  }
  last_timestamp_ = sample.timestamp_ns;
  ++count_;
  if (count_ % 256 == 0) flush();
}

void GazeWriter::flush() {
  out_.flush();
  if (!out_) throw IoError("failed flushing " + path_.string(), count_);
}

std::vector<GazeSample> read_gaze_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("gaze file not found: " + path.string(), path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty gaze file " + path.string(), 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header_line()) throw ParseError("unexpected gaze file header", 0);
  std::vector<GazeSample> samples;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    GazeSample s = parse_csv_row(line, row);
    if (!samples.empty() && s.timestamp_ns <= samples.back().timestamp_ns) {
      throw ParseError("row " + std::to_string(row) + ": timestamp not increasing", row);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

fs::path record_gaze(std::span<const GazeSample> samples, const experiment::Session& session,
                     const std::string& scene_name) {
  const fs::path path = reserve_unique_file(session.scene_dir(scene_name), "gaze", ".csv");
  GazeWriter writer(path);
  for (const auto& s : samples) writer.write(s);
  writer.flush();
  return path;
}

fs::path record_gaze(SampleQueue& stream, const experiment::Session& session,
                     const std::string& scene_name) {
  const fs::path path = reserve_unique_file(session.scene_dir(scene_name), "gaze", ".csv");
  GazeWriter writer(path);
  while (auto s = stream.pop()) writer.write(*s);
  writer.flush();
  return path;
}

// --- sources -------------------------------------------------------------------

void FixationScript::validate() const {
  if (fixations.empty()) throw ValidationError("fixation script needs at least one target");
  for (std::size_t i = 0; i < fixations.size(); ++i) {
    if (!(fixations[i].dwell > 0.0)) {
      throw ValidationError("fixation dwell must be > 0", {std::to_string(i)});
    }
  }
  if (!(sample_rate > 0.0)) throw ValidationError("sample_rate must be > 0", {"sample_rate"});
  if (!(saccade_duration >= 0.0)) {
    throw ValidationError("saccade_duration must be >= 0", {"saccade_duration"});
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0", {"noise_sigma"});
}

double FixationScript::duration() const {
  double total = 0.0;
  for (const auto& f : fixations) total += f.dwell;
  return total + saccade_duration * static_cast<double>(fixations.size() - 1);
}

void to_json(nlohmann::json& j, const FixationScript& s) {
  nlohmann::json fixations = nlohmann::json::array();
  for (const auto& f : s.fixations) {
    fixations.push_back({{"target", {f.target.x, f.target.y, f.target.z}}, {"dwell", f.dwell}});
  }
  j = {{"fixations", fixations},     {"saccade_duration", s.saccade_duration},
       {"noise_sigma", s.noise_sigma}, {"sample_rate", s.sample_rate},
       {"pupil_mm", s.pupil_mm},       {"ipd", s.ipd},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, FixationScript& s) {
  s = FixationScript{};
  for (const auto& f : j.at("fixations")) {
    const auto t = f.at("target").get<std::vector<double>>();
    if (t.size() != 3) throw ValidationError("fixation target needs 3 coordinates", {"target"});
    s.fixations.push_back({{t[0], t[1], t[2]}, f.value("dwell", 1.0)});
  }
  s.saccade_duration = j.value("saccade_duration", s.saccade_duration);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  s.pupil_mm = j.value("pupil_mm", s.pupil_mm);
  s.ipd = j.value("ipd", s.ipd);
  s.seed = j.value("seed", s.seed);
  s.validate();
}

SimulatedSource::SimulatedSource(FixationScript script, std::int64_t start_ns)
    : script_(std::move(script)), start_ns_(start_ns), rng_(script_.seed) {
  script_.validate();
  total_ = static_cast<std::size_t>(std::llround(script_.duration() * script_.sample_rate));
  double t = 0.0;
  for (const auto& f : script_.fixations) {
    fixation_starts_.push_back(t);
    t += f.dwell + script_.saccade_duration;
  }
}

std::optional<GazeSample> SimulatedSource::next() {
  auto s = next_scripted();
  if (!s) return std::nullopt;
  return std::move(s->sample);
}

std::optional<ScriptedSample> SimulatedSource::next_scripted() {
  if (index_ >= total_) return std::nullopt;
  const double t = static_cast<double>(index_) / script_.sample_rate;
  ScriptedSample out;
  out.sample.timestamp_ns =
      start_ns_ + static_cast<std::int64_t>(std::llround(t * 1e9));
  ++index_;

  // Locate the segment: fixation i spans [start_i, start_i + dwell_i), then
  // the saccade to i + 1.
  std::size_t i = 0;
  while (i + 1 < fixation_starts_.size() && t >= fixation_starts_[i + 1]) ++i;
  const Fixation& fix = script_.fixations[i];
  const double into = t - fixation_starts_[i];
  Vec3 point = fix.target;
  bool in_saccade = false;
  if (into >= fix.dwell && i + 1 < script_.fixations.size()) {
    in_saccade = true;
    const double alpha = script_.saccade_duration > 0.0
                             ? std::clamp((into - fix.dwell) / script_.saccade_duration, 0.0, 1.0)
                             : 1.0;
    point = fix.target + alpha * (script_.fixations[i + 1].target - fix.target);
  }
  if (!in_saccade) out.fixation = i;

  double angle = 0.0;
  double azimuth = 0.0;
  if (!in_saccade && script_.noise_sigma > 0.0) {
    angle = std::abs(rng_.normal()) * script_.noise_sigma * kPi / 180.0;
    azimuth = rng_.uniform() * 2.0 * kPi;
  }

  const double half_ipd = script_.ipd * 0.5;
  const std::pair<EyeSample*, Vec3> eyes[] = {{&out.sample.left, {0.0 - half_ipd, 0.0, 0.0}},
                                              {&out.sample.right, {half_ipd, 0.0, 0.0}},
                                              {&out.sample.combined, {0.0, 0.0, 0.0}}};
  for (const auto& [eye, origin] : eyes) {
    Vec3 dir = normalized(point - origin);
    if (angle > 0.0) dir = perturb(dir, angle, azimuth);
    *eye = {origin, dir, script_.pupil_mm, true};
  }
  out.sample.vendor_extras =
      in_saccade ? std::string(R"({"phase":"saccade"})")
                 : R"({"phase":"fixation","target":)" + std::to_string(i) + "}";
  return out;
}

std::vector<ScriptedSample> simulate_script(const FixationScript& script, std::int64_t start_ns) {
  SimulatedSource source(script, start_ns);
  std::vector<ScriptedSample> out;
  out.reserve(source.total_samples());
  while (auto s = source.next_scripted()) out.push_back(std::move(*s));
  return out;
}

std::vector<GazeSample> simulated_gaze(const FixationScript& script, std::int64_t start_ns) {
  SimulatedSource source(script, start_ns);
  std::vector<GazeSample> out;
  out.reserve(source.total_samples());
  while (auto s = source.next()) out.push_back(std::move(*s));
  return out;
}

ReplaySource::ReplaySource(const fs::path& path) : samples_(read_gaze_csv(path)) {}

ReplaySource::ReplaySource(std::vector<GazeSample> samples) : samples_(std::move(samples)) {}

std::optional<GazeSample> ReplaySource::next() {
  if (index_ >= samples_.size()) return std::nullopt;
  return samples_[index_++];
}

void LoopbackSource::push(GazeSample sample) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) throw StateError("loopback source is closed");
    pending_.push_back(std::move(sample));
  }
  ready_.notify_one();
}

void LoopbackSource::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  ready_.notify_all();
}

std::optional<GazeSample> LoopbackSource::next() {
  std::unique_lock lock(mutex_);
  ready_.wait(lock, [&] { return !pending_.empty() || closed_ || interrupted_; });
  interrupted_ = false;
  if (pending_.empty()) return std::nullopt;
  GazeSample s = std::move(pending_.front());
  pending_.pop_front();
  return s;
}

bool LoopbackSource::finished() const {
  std::lock_guard lock(mutex_);
  return closed_ && pending_.empty();
}

void LoopbackSource::interrupt() {
  {
    std::lock_guard lock(mutex_);
    interrupted_ = true;
  }
  ready_.notify_all();
}

// --- queue ---------------------------------------------------------------------

void SampleQueue::push(const GazeSample& sample) {
  {
    std::lock_guard lock(mutex_);
    items_.push_back(sample);
  }
  ready_.notify_one();
}

void SampleQueue::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  ready_.notify_all();
}

std::optional<GazeSample> SampleQueue::pop() {
  std::unique_lock lock(mutex_);
  ready_.wait(lock, [&] { return !items_.empty() || closed_; });
  if (items_.empty()) return std::nullopt;
  GazeSample s = std::move(items_.front());
  items_.pop_front();
  return s;
}

std::optional<GazeSample> SampleQueue::try_pop() {
  std::lock_guard lock(mutex_);
  if (items_.empty()) return std::nullopt;
  GazeSample s = std::move(items_.front());
  items_.pop_front();
  return s;
}

std::vector<GazeSample> SampleQueue::drain() {
  std::lock_guard lock(mutex_);
  std::vector<GazeSample> out(std::make_move_iterator(items_.begin()),
                              std::make_move_iterator(items_.end()));
  items_.clear();
  return out;
}

bool SampleQueue::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::size_t SampleQueue::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

// --- devices -------------------------------------------------------------------

const char* to_string(Capability c) {
  switch (c) {
    case Capability::calibration: return "calibration";
    case Capability::per_eye: return "per_eye";
    case Capability::pupil: return "pupil";
  }
  return "unknown";
}

Capability parse_capability(const std::string& name) {
  if (name == "calibration") return Capability::calibration;
  if (name == "per_eye") return Capability::per_eye;
  if (name == "pupil") return Capability::pupil;
  throw ValidationError("unknown capability '" + name + "'", {name});
}

GazeDevice::GazeDevice(DeviceDescriptor descriptor, std::unique_ptr<SampleSource> source,
                       Pacing pacing)
    : descriptor_(std::move(descriptor)), source_(std::move(source)), pacing_(pacing) {}

GazeDevice::~GazeDevice() {
  try {
    stop_device();
  } catch (...) {
  }
}

void GazeDevice::start_device() {
  if (device_running_) return;
  device_running_ = true;
  ++device_starts_;
}

void GazeDevice::stop_device() {
  if (!device_running_) return;
  stop_sampling();
  device_running_ = false;
  std::lock_guard lock(mutex_);
  for (auto& q : subscribers_) q->close();
}

void GazeDevice::start_sampling() {
  if (!device_running_) throw StateError("start_sampling requires a started device");
  if (sampling_) return;
  stop_requested_ = false;
  exhausted_ = false;
  sampling_ = true;
  worker_ = std::thread([this] { sample_loop(); });
}

void GazeDevice::stop_sampling() {
  if (!sampling_) return;
  {
    std::lock_guard lock(mutex_);
    stop_requested_ = true;
  }
  wake_.notify_all();
  source_->interrupt();
  if (worker_.joinable()) worker_.join();
  sampling_ = false;
}

void GazeDevice::wait_until_exhausted() {
  if (worker_.joinable()) worker_.join();
  sampling_ = false;
}

void GazeDevice::calibrate(const std::string& kind) {
  if (!descriptor_.has(Capability::calibration)) {
    throw UnsupportedCapability("device '" + descriptor_.name + "' does not support calibration");
  }
  std::lock_guard lock(mutex_);
  calibration_log_.push_back(kind);
}

std::vector<std::string> GazeDevice::calibration_log() const {
  std::lock_guard lock(mutex_);
  return calibration_log_;
}

std::shared_ptr<SampleQueue> GazeDevice::subscribe() {
  auto q = std::make_shared<SampleQueue>();
  std::lock_guard lock(mutex_);
  subscribers_.push_back(q);
  return q;
}

void GazeDevice::sample_loop() {
  using clock = std::chrono::steady_clock;
  const auto cycle_start = clock::now();
  std::optional<std::int64_t> first_ts;
  for (;;) {
    if (stop_requested_) return;
    std::optional<GazeSample> sample = std::move(held_);
    held_.reset();
    if (!sample) sample = source_->next();
    if (!sample) {
      if (stop_requested_) return;
      if (source_->finished()) {
        exhausted_ = true;
        std::lock_guard lock(mutex_);
        for (auto& q : subscribers_) q->close();
        return;
      }
      continue;
    }
    if (pacing_ == Pacing::real_time) {
      if (!first_ts) first_ts = sample->timestamp_ns;
      const auto due = cycle_start + std::chrono::nanoseconds(sample->timestamp_ns - *first_ts);
      std::unique_lock lock(mutex_);
      if (wake_.wait_until(lock, due, [&] { return stop_requested_.load(); })) {
        // Not yet due; keep it for the next sampling cycle.
        held_ = std::move(sample);
        return;
      }
    }
    std::lock_guard lock(mutex_);
    for (auto& q : subscribers_) q->push(*sample);
    ++delivered_;
  }
}

DeviceRegistry DeviceRegistry::builtin() {
  FixationScript script;
  script.fixations = {{{0.0, 0.0, 1.0}, 10.0}};
  DeviceRegistry r;
  r.add({"simulated",
         {Capability::calibration, Capability::per_eye, Capability::pupil},
         SimulatedSpec{script}});
  return r;
}

DeviceRegistry DeviceRegistry::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_array()) throw ValidationError("device config must be a JSON list", {"devices"});
  DeviceRegistry r;
  try {
    for (const auto& d : j) {
      DeviceDescriptor desc;
      desc.name = d.at("name").get<std::string>();
      for (const auto& c : d.value("capabilities", nlohmann::json::array())) {
        desc.capabilities.insert(parse_capability(c.get<std::string>()));
      }
      const auto& src = d.at("source");
      const std::string type = src.at("type").get<std::string>();
      if (type == "simulated") {
        desc.source = SimulatedSpec{src.at("script").get<FixationScript>()};
      } else if (type == "replay") {
        fs::path p = src.at("path").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        desc.source = ReplaySpec{p};
      } else if (type == "external") {
        desc.source = ExternalSpec{src.value("config", nlohmann::json::object())};
      } else {
        throw ValidationError("unknown device source type '" + type + "'", {desc.name});
      }
      r.add(std::move(desc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed device config: ") + e.what(), {"devices"});
  }
  return r;
}

DeviceRegistry DeviceRegistry::load(const fs::path& path) {
  return from_json(read_json_file(path), path.parent_path());
}

DeviceRegistry DeviceRegistry::resolve(const std::optional<fs::path>& flag) {
  if (flag) return load(*flag);
  if (const char* env = std::getenv("VISIONSIM_DEVICES"); env != nullptr && *env != '\0') {
    return load(env);
  }
  return builtin();
}

void DeviceRegistry::add(DeviceDescriptor descriptor) {
  if (descriptor.name.empty()) throw ValidationError("device name must not be empty", {"name"});
  for (const auto& d : devices_) {
    if (d.name == descriptor.name) {
      throw ValidationError("duplicate device name '" + descriptor.name + "'", {descriptor.name});
    }
  }
  devices_.push_back(std::move(descriptor));
}

const DeviceDescriptor& DeviceRegistry::descriptor(const std::string& name) const {
  for (const auto& d : devices_) {
    if (d.name == name) return d;
  }
  throw NotFoundError("no device named '" + name + "'", name);
}

std::vector<std::string> DeviceRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& d : devices_) out.push_back(d.name);
  return out;
}

std::unique_ptr<GazeDevice> DeviceRegistry::create(const std::string& name, Pacing pacing) const {
  const DeviceDescriptor& d = descriptor(name);
  if (const auto* sim = std::get_if<SimulatedSpec>(&d.source)) {
    return std::make_unique<GazeDevice>(d, std::make_unique<SimulatedSource>(sim->script), pacing);
  }
  if (const auto* replay = std::get_if<ReplaySpec>(&d.source)) {
    return std::make_unique<GazeDevice>(d, std::make_unique<ReplaySource>(replay->path), pacing);
  }
  LoopbackSource* ignored = nullptr;
  return create_loopback(name, ignored, pacing);
}

std::unique_ptr<GazeDevice> DeviceRegistry::create_loopback(const std::string& name,
                                                            LoopbackSource*& source_out,
                                                            Pacing pacing) const {
  const DeviceDescriptor& d = descriptor(name);
  const auto* ext = std::get_if<ExternalSpec>(&d.source);
  if (ext == nullptr) throw ValidationError("device '" + name + "' is not external", {name});
  const std::string driver = ext->config.value("driver", "");
  if (driver != "loopback") {
    throw UnsupportedCapability("no driver '" + driver + "' for external device '" + name +
                                "' (only 'loopback' is built in)");
  }
  auto source = std::make_unique<LoopbackSource>();
  source_out = source.get();
  return std::make_unique<GazeDevice>(d, std::move(source), pacing);
}

}  // namespace visionsim::gaze
