// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>

#include "visionsim/blur.hpp"
#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/gaze.hpp"
#include "visionsim/optics.hpp"
#include "visionsim/questionnaire.hpp"
#include "visionsim/rng.hpp"
#include "visionsim/runner.hpp"
#include "visionsim/vision_task.hpp"

using namespace visionsim;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failure reasons; the first few end up in the detail line.
class Checker {
 public:
  void require(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ << (failures_ > 1 ? "; " : "") << what;
  }
  void note(const std::string& what) { info_ << (info_.tellp() > 0 ? ", " : "") << what; }
  Outcome outcome() const {
    return {failures_ == 0, failures_ == 0 ? info_.str() : notes_.str()};
  }

 private:
  int failures_ = 0;
  std::ostringstream notes_;
  std::ostringstream info_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

class ScratchDir {
 public:
  ScratchDir() {
    std::string pattern = (fs::temp_directory_path() / "visionsim-acceptance-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) throw IoError("cannot create a scratch directory");
    path_ = pattern;
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Outcome blur_physics() {
  Checker c;
  const optics::RefractionProfile emmetrope;
  const double spot = optics::blur_ellipse(emmetrope, 0.0, 1.0, 4.0).major;
  const double oracle = 4e-3 * 1.0 * 10800.0 / kPi;
  c.require(std::abs(spot - 13.751) / 13.751 < 1e-6, "4 mm / 1 D gave " + fmt(spot, 10));
  c.require(std::abs(spot - oracle) / oracle < 1e-7, "4 mm / 1 D differs from 4e-3 x 10800/pi");

  Rng rng(2024);
  double worst_linearity = 0.0;
  double worst_zero = 0.0;
  for (int i = 0; i < 1000; ++i) {
    optics::RefractionProfile p;
    p.sphere = uniform(rng, -6.0, 4.0);
    p.cylinder = uniform(rng, -3.0, 0.0);
    p.axis = uniform(rng, 0.0, 180.0);
    const double lens = uniform(rng, -3.0, 3.0);
    const double object = uniform(rng, 0.0, 4.0);
    const double pupil = uniform(rng, 0.6, 4.9);
    const double scale = uniform(rng, 1.0, 2.0);
    const auto a = optics::blur_ellipse(p, lens, object, pupil);
    const auto b = optics::blur_ellipse(p, lens, object, pupil * scale);
    for (auto [x, y] : {std::pair{a.major, b.major}, std::pair{a.minor, b.minor}}) {
      const double expected = x * scale;
      worst_linearity = std::max(worst_linearity, std::abs(y - expected) / std::max(1.0, expected));
    }
    // In focus: the lens cancels the whole demand on a spherical eye.
    optics::RefractionProfile sph;
    sph.sphere = p.sphere;
    const auto z = optics::blur_ellipse(sph, object - p.sphere, object, pupil);
    worst_zero = std::max(worst_zero, z.major);
  }
  c.require(worst_linearity < 1e-9, "pupil linearity error " + fmt(worst_linearity));
  c.require(worst_zero < 1e-9, "in-focus blur " + fmt(worst_zero));
  c.note("spot " + fmt(spot, 8) + " arcmin");
  c.note("1000 points");
  return c.outcome();
}

Outcome renderer() {
  Checker c;
  const std::size_t n = 512;
  Rng rng(7);
  RgbImage image(n, n);
  for (auto& v : image.data()) v = static_cast<float>(uniform(rng, 0.0, 1.0));

  c.require(apply_blur(image, BlurField(n, n)) == image, "zero field is not the identity");

  BlurField field(n, n);
  constexpr double kMaxMajor = 16.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      auto& cell = field.at(x, y);
      cell.major = static_cast<float>(uniform(rng, 0.0, kMaxMajor));
      cell.minor = static_cast<float>(uniform(rng, 0.0, 1.0)) * cell.major;
      cell.orientation = static_cast<float>(uniform(rng, 0.0, 180.0));
    }
  }

  const RgbImage flat(n, n, {0.3f, 0.55f, 0.8f});
  c.require(apply_blur(flat, field) == flat, "flat field changed");

  const RgbImage out = apply_blur(image, field);
  const std::size_t margin = static_cast<std::size_t>(kMaxMajor);
  double worst = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double in_sum = 0.0;
    double out_sum = 0.0;
    for (std::size_t y = margin; y < n - margin; ++y) {
      for (std::size_t x = margin; x < n - margin; ++x) {
        in_sum += image.at(x, y, ch);
        out_sum += out.at(x, y, ch);
      }
    }
    worst = std::max(worst, std::abs(out_sum - in_sum) / in_sum);
  }
  c.require(worst < 0.01, "interior mean off by " + fmt(100.0 * worst) + "%");
  c.note("interior mean error " + fmt(100.0 * worst, 3) + "%");
  return c.outcome();
}

Outcome autofocal() {
  Checker c;
  optics::AutofocalConfig slew;
  slew.algorithm = optics::AutofocalAlgorithm::slew_limited;
  slew.slew_rate = 10.0;
  const double start = 1.0 / 6.0;
  const double target = 1.0 / 0.3;
  const double expected = (target - start) / slew.slew_rate;
  for (double dt : {0.001, 0.01, 1.0 / 60.0}) {
    optics::FocusState s;
    s.lens_power = start;
    int steps = 0;
    while (s.lens_power != target && steps < 100000) {
      s = optics::autofocal_update(slew, s, target, dt);
      ++steps;
    }
    const double reached = steps * dt;
    c.require(std::abs(reached - expected) <= dt + 1e-12,
              "dt " + fmt(dt) + " reached at " + fmt(reached) + " s");
  }

  optics::AutofocalConfig lp;
  lp.algorithm = optics::AutofocalAlgorithm::low_pass;
  lp.time_constant = 0.2;
  optics::FocusState s;
  s.lens_power = start;
  const double dt = 0.01;
  double worst = 0.0;
  for (int i = 1; i <= 300; ++i) {
    s = optics::autofocal_update(lp, s, target, dt);
    const double closed = target + (start - target) * std::exp(-i * dt / lp.time_constant);
    worst = std::max(worst, std::abs(s.lens_power - closed));
  }
  c.require(worst <= 1e-9, "low-pass deviates by " + fmt(worst));
  c.note("slew reaches target in " + fmt(expected) + " s");
  c.note("low-pass max error " + fmt(worst, 2));
  return c.outcome();
}

Outcome matching_oracle() {
  Checker c;
  Rng rng(11);
  for (int tables = 0; tables < 200; ++tables) {
    task::Trial t;
    shuffle(t.table.begin(), t.table.end(), rng);
    int matches = 0;
    for (std::size_t o = 0; o < task::kOrientationCount; ++o) {
      for (char letter : task::kSloanLetters) {
        t.landolt_orientation = o;
        t.sloan_letter = letter;
        const auto column = std::find(t.table.begin(), t.table.end(), letter) - t.table.begin();
        const bool oracle = column == static_cast<long>(o);
        c.require(task::ground_truth(t) == oracle, "ground truth disagrees with the table");
        matches += task::ground_truth(t) ? 1 : 0;
      }
    }
    c.require(matches == 8, "table with " + std::to_string(matches) + " matches");
  }

  const task::TaskConfig config;
  Rng gen(42);
  std::size_t matches = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    const auto trial = task::generate_trial(gen, config.layout, config, i);
    c.require(trial.is_match == task::ground_truth(trial), "generated is_match is wrong");
    matches += trial.is_match ? 1 : 0;
  }
  const double rate = static_cast<double>(matches) / n;
  c.require(std::abs(rate - 0.5) <= 0.02, "match rate " + fmt(rate));
  c.note("200 tables x 64");
  c.note("match rate " + fmt(rate));
  return c.outcome();
}

Outcome end_to_end() {
  Checker c;
  task::BlockConfig base;
  base.n_trials = 1000;
  base.seed = 42;
  base.task.pupil_mm = 4.0;
  base.task.optotype_gap = 2.0;

  auto instant = base;
  instant.focus = optics::AutofocalConfig{};
  auto fixed = base;
  fixed.focus = task::FixedFocus{1.0};
  const double pc_instant = task::run_block(instant).proportion_correct;
  const double pc_fixed = task::run_block(fixed).proportion_correct;
  c.require(pc_instant >= 0.90, "instant autofocal " + fmt(pc_instant));
  c.require(pc_instant - pc_fixed >= 0.15,
            "fixed 1 m only " + fmt(pc_instant - pc_fixed) + " lower");

  std::vector<double> pcs;
  for (double m : {0.0, 1.0, 2.0, 4.0}) {
    auto cfg = fixed;
    cfg.blur_multiplier = m;
    pcs.push_back(task::run_block(cfg).proportion_correct);
  }
  for (std::size_t i = 1; i < pcs.size(); ++i) {
    c.require(pcs[i] <= pcs[i - 1] + 0.02, "multiplier step " + std::to_string(i) + " rose");
  }
  c.note("instant " + fmt(pc_instant) + ", fixed " + fmt(pc_fixed));
  c.note("multipliers " + fmt(pcs[0]) + "/" + fmt(pcs[1]) + "/" + fmt(pcs[2]) + "/" + fmt(pcs[3]));
  return c.outcome();
}

Outcome persistence() {
  Checker c;
  ScratchDir scratch;
  const fs::path root = scratch.path();

  std::vector<std::string> names;
  for (int i = 0; i < 3; ++i) {
    names.push_back(experiment::create_session("S01", {}, root / "sessions").session_dir.filename().string());
  }
  c.require(names == std::vector<std::string>{"S01", "S01_1", "S01_2"}, "collision suffixes wrong");

  experiment::Protocol shuffled;
  shuffled.name = "order";
  shuffled.order_mode = experiment::OrderMode::shuffled;
  for (int i = 0; i < 8; ++i) shuffled.scenes.push_back({"baseline", "", ""});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    shuffled.seed = seed;
    const auto a = experiment::resolve_order(shuffled);
    c.require(a == experiment::resolve_order(shuffled), "shuffle not deterministic");
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> identity(8);
    std::iota(identity.begin(), identity.end(), 0);
    c.require(sorted == identity, "shuffle is not a permutation");
  }

  {
    Rng rng(3);
    std::vector<gaze::GazeSample> samples(500);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& s = samples[i];
      s.timestamp_ns = static_cast<std::int64_t>(i) * 10'000'000;
      for (auto* eye : {&s.left, &s.right, &s.combined}) {
        eye->direction = gaze::normalized({rng.normal(0.0, 0.2), rng.normal(0.0, 0.2), 1.0});
        eye->origin = {uniform(rng, -0.04, 0.04), 0.0, 0.0};
        eye->pupil_mm = uniform(rng, 2.0, 6.0);
        eye->valid = uniform(rng, 0.0, 1.0) > 0.1;
      }
      s.vendor_extras = R"({"note": "a, \"quoted\" value"})";
    }
    const fs::path file = root / "gaze.csv";
    {
      gaze::GazeWriter w(file);
      for (const auto& s : samples) w.write(s);
    }
    const auto back = gaze::read_gaze_csv(file);
    auto close = [](const gaze::EyeSample& a, gaze::EyeSample b) {
      // Invalid eyes are stored zeroed.
      if (!b.valid) b = gaze::EyeSample{};
      const double d[] = {a.origin.x - b.origin.x,       a.origin.y - b.origin.y,
                          a.origin.z - b.origin.z,       a.direction.x - b.direction.x,
                          a.direction.y - b.direction.y, a.direction.z - b.direction.z,
                          a.pupil_mm - b.pupil_mm};
      return a.valid == b.valid &&
             std::all_of(std::begin(d), std::end(d), [](double v) { return std::abs(v) < 1e-9; });
    };
    bool same = back.size() == samples.size();
    for (std::size_t i = 0; same && i < back.size(); ++i) {
      same = back[i].timestamp_ns == samples[i].timestamp_ns &&
             back[i].vendor_extras == samples[i].vendor_extras &&
             close(back[i].left, samples[i].left) && close(back[i].right, samples[i].right) &&
             close(back[i].combined, samples[i].combined);
    }
    c.require(same, "gaze.csv round trip differs");
  }

  const fs::path qdir = fs::path(VISIONSIM_DATA_DIR) / "questionnaires";
  {
    const auto tlx = questionnaire::load_questionnaire("TLX", qdir);
    const auto session = experiment::create_session("Q01", {}, root / "sessions");
    const auto responses = questionnaire::default_responses(tlx, "questionnaire");
    const auto file = questionnaire::record_responses(tlx, responses, session);
    const auto back = questionnaire::parse_response_set(read_json_file(file));
    c.require(back.answers == responses.answers && back.abbreviation == "TLX",
              "questionnaire round trip differs");
    c.require(questionnaire::load_questionnaire("TLX", qdir) ==
                  questionnaire::parse_questionnaire(questionnaire::to_json(tlx)),
              "questionnaire schema round trip differs");
  }

  runner::RunEnvironment env;
  env.data_root = root / "runs";
  env.questionnaire_dir = qdir;
  env.seed = 42;
  const auto protocol = experiment::load_protocol(fs::path(VISIONSIM_DATA_DIR) / "protocols" / "demo.json");
  try {
    const auto run = runner::run_headless(protocol, env, {"S01", {}, {}});
    const fs::path dir = run.session.session_dir;
    for (const fs::path rel : {"session.json", "events.json", "main_menu/demographics.json",
                               "baseline/trials.csv", "baseline/gaze.csv", "baseline/summary.json",
                               "matching_task/trials.csv", "matching_task/gaze.csv",
                               "matching_task/summary.json", "questionnaire/responses_TLX.json"}) {
      c.require(fs::is_regular_file(dir / rel), "missing " + rel.string());
    }
  } catch (const std::exception& e) {
    c.require(false, std::string("headless run failed: ") + e.what());
  }
  c.note("3 sessions, 50 shuffle seeds, demo run");
  return c.outcome();
}

Outcome no_secondary_component() {
  Checker c;
#ifdef VISIONSIM_SECONDARY_BUILT
  c.require(false, "a web UI target is part of this build");
#endif
  c.note("criteria above ran from the core library alone");
  return c.outcome();
}

struct Criterion {
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"blur_physics", 1.0, blur_physics},
      {"renderer_identity_conservation", 10.0, renderer},
      {"autofocal_controllers", 1.0, autofocal},
      {"matching_task_oracle", 5.0, matching_oracle},
      {"end_to_end_simulated_experiment", 60.0, end_to_end},
      {"persistence_and_protocol", 10.0, persistence},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criterion.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (elapsed >= criterion.limit_s) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("over the ") +
                  fmt(criterion.limit_s) + " s limit";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %s (%.3f s): %s\n", o.pass ? "PASS" : "FAIL", criterion.name, elapsed,
                o.detail.c_str());
  }
  const auto last = no_secondary_component();
  failures += last.pass ? 0 : 1;
  std::printf("%s no_secondary_component: %s\n", last.pass ? "PASS" : "FAIL", last.detail.c_str());
  std::fflush(stdout);
  return failures;
}
