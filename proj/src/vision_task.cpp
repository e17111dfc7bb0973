#include "visionsim/vision_task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "visionsim/csv.hpp"
#include "visionsim/error.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/office_scene.hpp"

namespace visionsim::task {

namespace {

constexpr double kPi = 3.14159265358979323846;

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Uniform over the letters other than `excluded`.
char other_letter(char excluded, Rng& rng) {
  std::array<char, kOrientationCount - 1> pool{};
  std::size_t n = 0;
  for (char c : kSloanLetters) {
    if (c != excluded) pool[n++] = c;
  }
  return pool[rng.index(pool.size())];
}

std::size_t other_orientation(std::size_t excluded, Rng& rng) {
  const std::size_t k = rng.index(kOrientationCount - 1);
  return k >= excluded ? k + 1 : k;
}

Placement place_stimulus(Rng& rng, const Screen& screen, const TaskConfig& config) {
  Placement p;
  double base_x = 0.0;
  double base_y = 0.0;
  if (!rng.bernoulli(config.p_center)) {
    p.anchor = static_cast<Anchor>(1 + rng.index(4));
    const double cx = config.corner_fraction * screen.half_width();
    const double cy = config.corner_fraction * screen.half_height();
    const bool left = p.anchor == Anchor::top_left || p.anchor == Anchor::bottom_left;
    const bool top = p.anchor == Anchor::top_left || p.anchor == Anchor::top_right;
    base_x = left ? -cx : cx;
    base_y = top ? cy : -cy;
  }
  // A Landolt ring spans five gap widths; keep the whole optotype on screen.
  const double margin = 2.5 * config.optotype_gap / 60.0;
  const double lim_x = std::max(0.0, screen.half_width() - margin);
  const double lim_y = std::max(0.0, screen.half_height() - margin);
  p.dx = std::clamp(base_x + rng.normal(0.0, config.jitter_sigma), -lim_x, lim_x);
  p.dy = std::clamp(base_y + rng.normal(0.0, config.jitter_sigma), -lim_y, lim_y);
  return p;
}

double blur_ratio(const ScreenBlur& blur, std::size_t screen, double gap, const char* role) {
  const auto it = blur.find(screen);
  if (it == blur.end()) {
    throw DomainError(std::string("no blur given for the ") + role + " screen " +
                      std::to_string(screen));
  }
  return it->second.major / gap;
}

gaze::Vec3 point_on_screen(const Screen& screen, double dx, double dy) {
  const double lateral = (screen.lateral_offset + dx) * kPi / 180.0;
  const double vertical = (screen.vertical_offset + dy) * kPi / 180.0;
  return {screen.distance * std::tan(lateral), screen.distance * std::tan(vertical),
          screen.distance};
}

}  // namespace

std::optional<std::size_t> letter_index(char letter) {
  const auto it = std::find(kSloanLetters.begin(), kSloanLetters.end(), letter);
  if (it == kSloanLetters.end()) return std::nullopt;
  return static_cast<std::size_t>(it - kSloanLetters.begin());
}

const char* to_string(Anchor anchor) {
  switch (anchor) {
    case Anchor::center: return "center";
    case Anchor::top_left: return "top_left";
    case Anchor::top_right: return "top_right";
    case Anchor::bottom_left: return "bottom_left";
    case Anchor::bottom_right: return "bottom_right";
  }
  return "center";
}

Anchor parse_anchor(const std::string& name) {
  for (Anchor a : {Anchor::center, Anchor::top_left, Anchor::top_right, Anchor::bottom_left,
                   Anchor::bottom_right}) {
    if (name == to_string(a)) return a;
  }
  throw ValidationError("unknown anchor '" + name + "'", {name});
}

bool ground_truth(const Trial& trial) {
  return trial.table.at(trial.landolt_orientation) == trial.sloan_letter;
}

void ObserverModel::validate() const {
  if (!(lapse >= 0.0 && lapse <= 0.05)) throw ValidationError("lapse must be in [0, 0.05]", {"lapse"});
  if (!(threshold_ratio > 0.0)) throw ValidationError("threshold_ratio must be > 0", {"threshold_ratio"});
  if (!(slope > 0.0)) throw ValidationError("slope must be > 0", {"slope"});
  if (!(guess_rate >= 0.0 && guess_rate <= 1.0)) {
    throw ValidationError("guess_rate must be in [0, 1]", {"guess_rate"});
  }
}

double identification_probability(const ObserverModel& m, double blur_ratio) {
  const double seen = logistic(m.slope * (1.0 - blur_ratio / m.threshold_ratio));
  return m.lapse / static_cast<double>(kOrientationCount) +
         (1.0 - m.lapse) * (m.guess_rate + (1.0 - m.guess_rate) * seen);
}

void GazeModel::validate() const {
  if (!(sample_rate > 0.0)) throw ValidationError("gaze sample_rate must be > 0", {"sample_rate"});
  if (!(dwell > 0.0)) throw ValidationError("gaze dwell must be > 0", {"dwell"});
  if (!(saccade_duration >= 0.0)) {
    throw ValidationError("saccade_duration must be >= 0", {"saccade_duration"});
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0", {"noise_sigma"});
  if (!(recheck_probability >= 0.0 && recheck_probability <= 1.0)) {
    throw ValidationError("recheck_probability must be in [0, 1]", {"recheck_probability"});
  }
}

void TaskConfig::validate() const {
  layout.validate(true);
  if (!(optotype_gap > 0.0)) throw ValidationError("optotype_gap must be > 0", {"optotype_gap"});
  if (!(p_center >= 0.0 && p_center <= 1.0)) throw ValidationError("p_center must be in [0, 1]", {"p_center"});
  if (!(jitter_sigma >= 0.0)) throw ValidationError("jitter_sigma must be >= 0", {"jitter_sigma"});
  if (!(corner_fraction >= 0.0 && corner_fraction <= 1.0)) {
    throw ValidationError("corner_fraction must be in [0, 1]", {"corner_fraction"});
  }
  observer.validate();
  gaze.validate();
  refraction.validate();
  optics::validate_pupil(pupil_mm);
  depth_geometry.validate();
}

TaskConfig parse_task_config(const nlohmann::json& j) {
  TaskConfig c;
  try {
    if (j.contains("layout")) c.layout = j.at("layout").get<SceneLayout>();
    if (j.contains("distances")) {
      // Shorthand: override the default screens' distances in order.
      const auto d = j.at("distances").get<std::vector<double>>();
      for (std::size_t i = 0; i < d.size() && i < c.layout.screens.size(); ++i) {
        c.layout.screens[i].distance = d[i];
      }
    }
    c.optotype_gap = j.value("optotype_gap", c.optotype_gap);
    c.p_center = j.value("p_center", c.p_center);
    c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
    c.corner_fraction = j.value("corner_fraction", c.corner_fraction);
    if (j.contains("observer")) {
      const auto& o = j.at("observer");
      c.observer.guess_rate = o.value("guess_rate", c.observer.guess_rate);
      c.observer.threshold_ratio = o.value("threshold_ratio", c.observer.threshold_ratio);
      c.observer.slope = o.value("slope", c.observer.slope);
      c.observer.lapse = o.value("lapse", c.observer.lapse);
    }
    if (j.contains("gaze")) {
      const auto& g = j.at("gaze");
      c.gaze.sample_rate = g.value("sample_rate", c.gaze.sample_rate);
      c.gaze.dwell = g.value("dwell", c.gaze.dwell);
      c.gaze.saccade_duration = g.value("saccade_duration", c.gaze.saccade_duration);
      c.gaze.noise_sigma = g.value("noise_sigma", c.gaze.noise_sigma);
      c.gaze.recheck_probability = g.value("recheck_probability", c.gaze.recheck_probability);
    }
    if (j.contains("refraction")) c.refraction = j.at("refraction").get<optics::RefractionProfile>();
    c.pupil_mm = j.value("pupil_mm", c.pupil_mm);
    if (j.contains("depth_geometry")) {
      const auto& g = j.at("depth_geometry");
      c.depth_geometry.horizontal_fov = g.value("horizontal_fov", c.depth_geometry.horizontal_fov);
      c.depth_geometry.image_width = g.value("image_width", c.depth_geometry.image_width);
      c.depth_geometry.image_height = g.value("image_height", c.depth_geometry.image_height);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed task config: ") + e.what(), {"task"});
  } catch (const DomainError& e) {
    throw ValidationError(std::string("invalid task config: ") + e.what(), {"task"});
  }
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ValidationError(std::string("invalid task config: ") + e.what(), {"task"});
  }
  return c;
}

TaskConfig load_task_config(const std::filesystem::path& path) {
  return parse_task_config(read_json_file(path));
}

nlohmann::json to_json(const TaskConfig& c) {
  return {{"layout", c.layout},
          {"optotype_gap", c.optotype_gap},
          {"p_center", c.p_center},
          {"jitter_sigma", c.jitter_sigma},
          {"corner_fraction", c.corner_fraction},
          {"observer",
           {{"guess_rate", c.observer.guess_rate},
            {"threshold_ratio", c.observer.threshold_ratio},
            {"slope", c.observer.slope},
            {"lapse", c.observer.lapse}}},
          {"gaze",
           {{"sample_rate", c.gaze.sample_rate},
            {"dwell", c.gaze.dwell},
            {"saccade_duration", c.gaze.saccade_duration},
            {"noise_sigma", c.gaze.noise_sigma},
            {"recheck_probability", c.gaze.recheck_probability}}},
          {"refraction", c.refraction},
          {"pupil_mm", c.pupil_mm},
          {"depth_geometry",
           {{"horizontal_fov", c.depth_geometry.horizontal_fov},
            {"image_width", c.depth_geometry.image_width},
            {"image_height", c.depth_geometry.image_height}}}};
}

Trial generate_trial(Rng& rng, const SceneLayout& layout, const TaskConfig& config,
                     std::size_t id) {
  Trial t;
  t.id = id;
  t.optotype_gap = config.optotype_gap;

  std::vector<std::size_t> screens(layout.screens.size());
  std::iota(screens.begin(), screens.end(), 0);
  t.table_screen = rng.index(screens.size());
  screens.erase(screens.begin() + static_cast<long>(t.table_screen));
  const std::size_t li = rng.index(screens.size());
  t.landolt_screen = screens[li];
  screens.erase(screens.begin() + static_cast<long>(li));
  t.sloan_screen = screens[rng.index(screens.size())];

  t.landolt_orientation = rng.index(kOrientationCount);
  t.table = kSloanLetters;
  shuffle(t.table.begin(), t.table.end(), rng);
  const char paired = t.table[t.landolt_orientation];
  t.sloan_letter = rng.bernoulli(0.5) ? paired : other_letter(paired, rng);
  t.is_match = ground_truth(t);

  t.landolt_placement = place_stimulus(rng, layout.screens[t.landolt_screen], config);
  t.sloan_placement = place_stimulus(rng, layout.screens[t.sloan_screen], config);
  return t;
}

const char* to_string(Response r) { return r == Response::match ? "match" : "no_match"; }

Response parse_response(const std::string& name) {
  if (name == "match") return Response::match;
  if (name == "no_match") return Response::no_match;
  throw ValidationError("response must be 'match' or 'no_match', got '" + name + "'", {name});
}

TrialResponse score_response(const Trial& trial, Response response, double response_time) {
  return {trial.id, response, (response == Response::match) == ground_truth(trial),
          response_time};
}

Observation observe_trial(const Trial& trial, const ScreenBlur& blur, const ObserverModel& model,
                          Rng& rng) {
  const double gap = trial.optotype_gap;
  if (!(gap > 0.0)) throw DomainError("optotype gap must be > 0");
  const double r_landolt = blur_ratio(blur, trial.landolt_screen, gap, "landolt");
  const double r_sloan = blur_ratio(blur, trial.sloan_screen, gap, "sloan");
  const double r_table = blur_ratio(blur, trial.table_screen, gap, "table");

  Observation obs;
  obs.landolt_identified = rng.uniform() < identification_probability(model, r_landolt);
  const std::size_t orientation = obs.landolt_identified
                                      ? trial.landolt_orientation
                                      : other_orientation(trial.landolt_orientation, rng);

  obs.sloan_identified = rng.uniform() < identification_probability(model, r_sloan);
  const char letter =
      obs.sloan_identified ? trial.sloan_letter : other_letter(trial.sloan_letter, rng);

  // The table is read in the column of the orientation the observer saw.
  obs.table_identified = rng.uniform() < identification_probability(model, r_table);
  const char column_letter = trial.table[orientation];
  const char table_letter =
      obs.table_identified ? column_letter : other_letter(column_letter, rng);

  obs.response = score_response(
      trial, table_letter == letter ? Response::match : Response::no_match, 0.0);
  return obs;
}

TrialResponse observer_respond(const Trial& trial, const ScreenBlur& blur,
                               const ObserverModel& model, Rng& rng) {
  return observe_trial(trial, blur, model, rng).response;
}

BlockResult summarize(std::vector<TrialRecord> records, const SceneLayout& layout) {
  BlockResult result;
  std::size_t correct = 0;
  double total_rt = 0.0;
  for (const auto& r : records) {
    correct += r.response.correct ? 1 : 0;
    total_rt += r.response.response_time;
    const std::array<std::size_t, 3> screens = {r.trial.landolt_screen, r.trial.sloan_screen,
                                                r.trial.table_screen};
    for (std::size_t role = 0; role < 3; ++role) {
      auto& stats = result.by_distance[layout.screens.at(screens[role]).distance];
      ++stats.stimuli;
      stats.identified += r.identified[role] ? 1 : 0;
    }
    auto& table_stats = result.by_distance[layout.screens.at(r.trial.table_screen).distance];
    ++table_stats.trials;
    table_stats.correct += r.response.correct ? 1 : 0;
  }
  if (!records.empty()) {
    const auto n = static_cast<double>(records.size());
    result.proportion_correct = static_cast<double>(correct) / n;
    result.mean_response_time = total_rt / n;
  }
  result.records = std::move(records);
  return result;
}

BlockResult run_block(const BlockConfig& config) {
  if (config.n_trials == 0) throw ValidationError("n_trials must be >= 1", {"n_trials"});
  const TaskConfig& task = config.task;
  task.validate();
  if (const auto* af = std::get_if<optics::AutofocalConfig>(&config.focus)) af->validate();
  if (!(config.blur_multiplier >= 0.0)) {
    throw ValidationError("blur_multiplier must be >= 0", {"blur_multiplier"});
  }

  const SceneLayout& layout = task.layout;
  const ViewGeometry& geometry = task.depth_geometry;
  const double pitch = pixel_pitch(geometry);
  const DepthMap depth = render_office_scene(layout, geometry).second;

  Rng master(config.seed);
  Rng trial_rng = master.fork();
  Rng observer_rng = master.fork();
  Rng gaze_rng = master.fork();

  const double dt = 1.0 / task.gaze.sample_rate;
  const auto* autofocal = std::get_if<optics::AutofocalConfig>(&config.focus);
  optics::FocusState focus;
  focus.pupil_diameter = task.pupil_mm;
  focus.lens_power = autofocal ? 0.0 : std::get<FixedFocus>(config.focus).lens_power;
  double target = focus.lens_power;
  // The depth-lookup aggregator for fixed focus is irrelevant; any config works.
  const optics::AutofocalConfig lookup = autofocal ? *autofocal : optics::AutofocalConfig{};

  std::vector<TrialRecord> records;
  records.reserve(config.n_trials);
  std::vector<gaze::GazeSample> gaze_log;
  std::int64_t clock_ns = 0;

  for (std::size_t n = 0; n < config.n_trials; ++n) {
    const Trial trial = generate_trial(trial_rng, layout, task, n);
    const Screen& ls = layout.screens[trial.landolt_screen];
    const Screen& ss = layout.screens[trial.sloan_screen];
    const Screen& ts = layout.screens[trial.table_screen];
    const std::array<gaze::Vec3, 3> points = {
        point_on_screen(ls, trial.landolt_placement.dx, trial.landolt_placement.dy),
        point_on_screen(ss, trial.sloan_placement.dx, trial.sloan_placement.dy),
        point_on_screen(ts, 0.0, 0.0)};

    gaze::FixationScript script;
    script.sample_rate = task.gaze.sample_rate;
    script.saccade_duration = task.gaze.saccade_duration;
    script.noise_sigma = task.gaze.noise_sigma;
    script.pupil_mm = task.pupil_mm;
    script.seed = gaze_rng.next_u64();
    for (const auto& p : points) script.fixations.push_back({p, task.gaze.dwell});
    if (gaze_rng.bernoulli(task.gaze.recheck_probability)) {
      script.fixations.push_back({points[0], task.gaze.dwell});
      script.fixations.push_back({points[2], task.gaze.dwell});
    }

    const auto samples = gaze::simulate_script(script, clock_ns);
    std::vector<double> lens_at(samples.size());
    std::array<std::vector<std::size_t>, 3> fixation_samples;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& dir = samples[i].sample.combined.direction;
      if (autofocal) {
        const double lateral = std::atan2(dir.x, dir.z) * 180.0 / kPi;
        const double vertical = std::atan2(dir.y, dir.z) * 180.0 / kPi;
        const auto px = angles_to_pixel(geometry, lateral, vertical);
        if (px.x >= 0.0 && px.y >= 0.0 && px.x < static_cast<double>(geometry.image_width) &&
            px.y < static_cast<double>(geometry.image_height)) {
          if (auto v = optics::gaze_target_vergence(depth, px, lookup, pitch)) target = *v;
        }
        focus = optics::autofocal_update(*autofocal, focus, target, dt);
      }
      lens_at[i] = focus.lens_power;
      if (const auto f = samples[i].fixation; f && *f < 3) fixation_samples[*f].push_back(i);
    }

    // Each stimulus is read at the midpoint of its first fixation.
    const std::array<const Screen*, 3> roles = {&ls, &ss, &ts};
    const std::array<std::size_t, 3> role_screen = {trial.landolt_screen, trial.sloan_screen,
                                                    trial.table_screen};
    TrialRecord record;
    record.trial = trial;
    ScreenBlur blur;
    for (std::size_t role = 0; role < 3; ++role) {
      const auto& idx = fixation_samples[role];
      const double lens = idx.empty() ? focus.lens_power : lens_at[idx[idx.size() / 2]];
      auto e = optics::blur_ellipse(task.refraction, lens,
                                    optics::vergence_from_distance(roles[role]->distance),
                                    task.pupil_mm);
      e.major *= config.blur_multiplier;
      e.minor *= config.blur_multiplier;
      blur[role_screen[role]] = e;
      record.blur_major[role] = e.major;
    }

    const Observation obs = observe_trial(trial, blur, task.observer, observer_rng);
    record.response = obs.response;
    record.response.response_time = script.duration();
    record.identified = {obs.landolt_identified, obs.sloan_identified, obs.table_identified};
    records.push_back(record);

    if (!samples.empty()) clock_ns = samples.back().sample.timestamp_ns;
    clock_ns += static_cast<std::int64_t>(std::llround(dt * 1e9));
    if (config.keep_gaze) {
      for (const auto& s : samples) gaze_log.push_back(s.sample);
    }
  }

  BlockResult result = summarize(std::move(records), layout);
  result.gaze = std::move(gaze_log);
  return result;
}

// --- trials.csv ----------------------------------------------------------------

const std::vector<std::string>& trial_columns() {
  static const std::vector<std::string> columns = {
      "trial_id",       "table_screen",   "landolt_screen", "sloan_screen",
      "orientation_deg", "letter",         "table",          "is_match",
      "landolt_anchor", "landolt_dx",     "landolt_dy",     "sloan_anchor",
      "sloan_dx",       "sloan_dy",       "optotype_gap",   "response",
      "correct",        "response_time"};
  return columns;
}

std::string format_trial_row(const TrialRecord& r) {
  const Trial& t = r.trial;
  std::string line;
  auto add = [&line](const std::string& field) {
    if (!line.empty()) line += ',';
    line += csv_field(field);
  };
  add(std::to_string(t.id));
  add(std::to_string(t.table_screen));
  add(std::to_string(t.landolt_screen));
  add(std::to_string(t.sloan_screen));
  add(std::to_string(static_cast<int>(t.landolt_orientation) * 45));
  add(std::string(1, t.sloan_letter));
  add(std::string(t.table.begin(), t.table.end()));
  add(t.is_match ? "1" : "0");
  add(to_string(t.landolt_placement.anchor));
  add(format_double(t.landolt_placement.dx));
  add(format_double(t.landolt_placement.dy));
  add(to_string(t.sloan_placement.anchor));
  add(format_double(t.sloan_placement.dx));
  add(format_double(t.sloan_placement.dy));
  add(format_double(t.optotype_gap));
  add(to_string(r.response.response));
  add(r.response.correct ? "1" : "0");
  add(format_double(r.response.response_time));
  return line;
}

TrialRecord parse_trial_row(const std::string& line, std::size_t row) {
  const auto fields = split_csv_line(line);
  if (!fields || fields->size() != trial_columns().size()) {
    throw ParseError("trials row " + std::to_string(row) + ": wrong column count", row);
  }
  const auto& f = *fields;
  try {
    TrialRecord r;
    Trial& t = r.trial;
    t.id = std::stoul(f[0]);
    t.table_screen = std::stoul(f[1]);
    t.landolt_screen = std::stoul(f[2]);
    t.sloan_screen = std::stoul(f[3]);
    t.landolt_orientation = static_cast<std::size_t>(std::stoi(f[4]) / 45);
    if (f[5].size() != 1 || f[6].size() != kOrientationCount) throw std::invalid_argument("letters");
    t.sloan_letter = f[5][0];
    std::copy(f[6].begin(), f[6].end(), t.table.begin());
    t.is_match = f[7] == "1";
    t.landolt_placement = {parse_anchor(f[8]), std::stod(f[9]), std::stod(f[10])};
    t.sloan_placement = {parse_anchor(f[11]), std::stod(f[12]), std::stod(f[13])};
    t.optotype_gap = std::stod(f[14]);
    r.response = {t.id, parse_response(f[15]), f[16] == "1", std::stod(f[17])};
    return r;
  } catch (const std::exception& e) {
    throw ParseError("trials row " + std::to_string(row) + ": " + e.what(), row);
  }
}

TrialWriter::TrialWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  std::string header;
  for (const auto& c : trial_columns()) header += (header.empty() ? "" : ",") + c;
  out_ << header << '\n';
  out_.flush();
}

void TrialWriter::write(const TrialRecord& record) {
  out_ << format_trial_row(record) << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing " + path_.string(), count_);
  ++count_;
}

std::vector<TrialRecord> read_trials_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("trials file not found: " + path.string(), path.string());
  std::string line;
  std::getline(in, line);
  std::vector<TrialRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty()) out.push_back(parse_trial_row(line, row));
  }
  return out;
}

}  // namespace visionsim::task
