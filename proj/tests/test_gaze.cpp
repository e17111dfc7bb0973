#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "test_util.hpp"
#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/gaze.hpp"

using namespace visionsim;
using namespace visionsim::gaze;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

double angle_deg(const Vec3& a, const Vec3& b) {
  const double c = (a.x * b.x + a.y * b.y + a.z * b.z) / (norm(a) * norm(b));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / kPi;
}

FixationScript two_targets() {
  FixationScript s;
  s.fixations = {{{0.0, 0.0, 1.0}, 1.0}, {{0.5, 0.2, 2.0}, 1.0}};
  s.saccade_duration = 0.1;
  s.sample_rate = 100.0;
  return s;
}

GazeSample odd_sample(std::int64_t ts) {
  GazeSample s;
  s.timestamp_ns = ts;
  s.left = {{-0.032, 0.001, 0.0}, normalized({0.1, -0.2, 1.0}), 3.75, true};
  s.right = {{0.032, 0.0, 0.0}, normalized({0.12, -0.2, 1.0}), 3.8125, true};
  s.combined = {};  // invalid eye: zeroed fields
  s.vendor_extras = R"({"vendor":"acme","note":"a, \"quoted\" value"})";
  return s;
}

void check_same(const GazeSample& a, const GazeSample& b) {
  CHECK(a.timestamp_ns == b.timestamp_ns);
  CHECK(a.vendor_extras == b.vendor_extras);
  for (auto [ea, eb] : {std::pair{&a.left, &b.left}, {&a.right, &b.right}, {&a.combined, &b.combined}}) {
    CHECK(ea->valid == eb->valid);
    CHECK(ea->pupil_mm == doctest::Approx(eb->pupil_mm).epsilon(1e-9));
    CHECK(std::abs(ea->origin.x - eb->origin.x) <= 1e-9);
    CHECK(std::abs(ea->origin.y - eb->origin.y) <= 1e-9);
    CHECK(std::abs(ea->origin.z - eb->origin.z) <= 1e-9);
    CHECK(std::abs(ea->direction.x - eb->direction.x) <= 1e-9);
    CHECK(std::abs(ea->direction.y - eb->direction.y) <= 1e-9);
    CHECK(std::abs(ea->direction.z - eb->direction.z) <= 1e-9);
  }
}

DeviceDescriptor simulated_descriptor(std::set<Capability> caps = {Capability::calibration}) {
  FixationScript s;
  s.fixations = {{{0.0, 0.0, 1.0}, 5.0}};
  return {"sim", std::move(caps), SimulatedSpec{s}};
}

}  // namespace

TEST_SUITE("gaze") {

TEST_CASE("csv layout") {
  CHECK(csv_columns().size() == 26);
  CHECK(csv_columns().front() == "timestamp_ns");
  CHECK(csv_columns()[1] == "left_origin_x");
  CHECK(csv_columns().back() == "vendor_extras");
  CHECK(csv_header_line().find("combined_valid") != std::string::npos);
}

TEST_CASE("csv row round trip") {
  const auto s = odd_sample(123456789);
  const auto line = format_csv_row(s);
  check_same(parse_csv_row(line, 1), s);
}

TEST_CASE("gaze file round trip") {
  TempDir dir;
  const auto samples = simulated_gaze([] {
    auto s = two_targets();
    s.noise_sigma = 0.7;
    s.ipd = 0.064;
    return s;
  }());
  {
    GazeWriter w(dir / "gaze.csv");
    for (const auto& s : samples) w.write(s);
    w.write(odd_sample(samples.back().timestamp_ns + 1));
    w.flush();
    CHECK(w.count() == samples.size() + 1);
  }
  const auto back = read_gaze_csv(dir / "gaze.csv");
  REQUIRE(back.size() == samples.size() + 1);
  for (std::size_t i = 0; i < samples.size(); ++i) check_same(back[i], samples[i]);
  check_same(back.back(), odd_sample(samples.back().timestamp_ns + 1));
}

TEST_CASE("1000 samples make 1001 lines") {
  TempDir dir;
  auto script = two_targets();
  script.fixations[0].dwell = 4.0;
  script.fixations[1].dwell = 5.9;
  const auto samples = simulated_gaze(script);
  REQUIRE(samples.size() == 1000);
  {
    GazeWriter w(dir / "g.csv");
    for (const auto& s : samples) w.write(s);
  }
  std::ifstream in(dir / "g.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 1001);
}

TEST_CASE("writer rejects non-increasing timestamps") {
  TempDir dir;
  GazeWriter w(dir / "g.csv");
  w.write(odd_sample(10));
  CHECK_THROWS_AS(w.write(odd_sample(10)), DomainError);
  CHECK_THROWS_AS(w.write(odd_sample(5)), DomainError);
  CHECK(w.count() == 1);
}

TEST_CASE("truncated row reports its row number") {
  TempDir dir;
  {
    GazeWriter w(dir / "g.csv");
    for (int i = 1; i <= 20; ++i) w.write(odd_sample(i * 1000));
  }
  std::ifstream in(dir / "g.csv");
  std::stringstream out;
  int line_no = 0;
  for (std::string l; std::getline(in, l); ++line_no) {
    // Line 0 is the header, so data row 17 is line 17.
    out << (line_no == 17 ? l.substr(0, l.size() / 3) : l) << '\n';
  }
  in.close();
  std::ofstream(dir / "g.csv") << out.str();
  try {
    read_gaze_csv(dir / "g.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 17);
  }
  CHECK_THROWS_AS(read_gaze_csv(dir / "missing.csv"), NotFoundError);
}

TEST_CASE("simulated gaze") {
  SUBCASE("noiseless straight ahead") {
    FixationScript s;
    s.fixations = {{{0.0, 0.0, 2.0}, 0.5}};
    for (const auto& g : simulated_gaze(s)) {
      CHECK(g.combined.direction == Vec3{0.0, 0.0, 1.0});
      CHECK(g.left.direction == Vec3{0.0, 0.0, 1.0});
    }
  }
  SUBCASE("sample count") {
    const auto samples = simulated_gaze(two_targets());
    CHECK(samples.size() == 210);
    CHECK(two_targets().duration() == doctest::Approx(2.1));
    for (std::size_t i = 1; i < samples.size(); ++i) {
      CHECK(samples[i].timestamp_ns > samples[i - 1].timestamp_ns);
    }
  }
  SUBCASE("noise magnitude") {
    FixationScript s;
    s.fixations = {{{0.0, 0.0, 1.0}, 100.0}};
    s.noise_sigma = 0.5;
    s.seed = 3;
    const auto samples = simulated_gaze(s);
    REQUIRE(samples.size() == 10000);
    double sum = 0.0;
    for (const auto& g : samples) sum += angle_deg(g.combined.direction, {0, 0, 1});
    const double mean = sum / static_cast<double>(samples.size());
    CHECK(mean >= 0.3);
    CHECK(mean <= 0.7);
    // Half-normal mean.
    CHECK(mean == doctest::Approx(0.5 * std::sqrt(2.0 / kPi)).epsilon(0.03));
  }
  SUBCASE("directions are unit length") {
    auto s = two_targets();
    s.noise_sigma = 2.0;
    s.ipd = 0.063;
    for (const auto& g : simulated_gaze(s)) {
      CHECK(std::abs(norm(g.left.direction) - 1.0) <= 1e-6);
      CHECK(std::abs(norm(g.right.direction) - 1.0) <= 1e-6);
      CHECK(std::abs(norm(g.combined.direction) - 1.0) <= 1e-6);
    }
  }
  SUBCASE("fixation tags") {
    const auto tagged = simulate_script(two_targets());
    CHECK(tagged.front().fixation == std::optional<std::size_t>{0});
    CHECK(tagged[105].fixation == std::nullopt);  // mid saccade
    CHECK(tagged.back().fixation == std::optional<std::size_t>{1});
  }
  SUBCASE("determinism") {
    auto s = two_targets();
    s.noise_sigma = 1.0;
    CHECK(simulated_gaze(s) == simulated_gaze(s));
  }
  SUBCASE("invalid scripts") {
    FixationScript s;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.fixations = {{{0, 0, 1}, 0.0}};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.fixations = {{{0, 0, 1}, 1.0}};
    s.sample_rate = 0.0;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
}

TEST_CASE("record_gaze writes per-scene files") {
  TempDir root;
  const auto session = experiment::create_session("S01", {}, root.path());
  const auto samples = simulated_gaze(two_targets());
  const auto a = record_gaze(samples, session, "task");
  const auto b = record_gaze(samples, session, "quest");
  const auto c = record_gaze(samples, session, "task");
  CHECK(a == session.session_dir / "task" / "gaze.csv");
  CHECK(b == session.session_dir / "quest" / "gaze.csv");
  CHECK(c == session.session_dir / "task" / "gaze_1.csv");
  CHECK(read_gaze_csv(a).size() == samples.size());
}

TEST_CASE("device lifecycle") {
  GazeDevice dev(simulated_descriptor(), std::make_unique<SimulatedSource>(two_targets()));
  CHECK_THROWS_AS(dev.start_sampling(), StateError);
  dev.start_device();
  auto q = dev.subscribe();
  dev.start_sampling();
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  dev.stop_sampling();
  const auto first = q->drain();
  CHECK(first.size() >= 9);
  CHECK(first.size() <= 12);
  CHECK(dev.samples_delivered() == first.size());

  // Restarting sampling does not restart the device and continues the stream.
  dev.start_sampling();
  std::this_thread::sleep_for(std::chrono::milliseconds(30));
  dev.stop_sampling();
  CHECK(dev.device_starts() == 1);
  const auto second = q->drain();
  REQUIRE_FALSE(second.empty());
  CHECK(second.front().timestamp_ns > first.back().timestamp_ns);

  dev.calibrate();
  CHECK(dev.calibration_log() == std::vector<std::string>{"eye"});
  dev.stop_device();
  CHECK(q->closed());
  CHECK_FALSE(dev.device_running());
}

TEST_CASE("calibration needs the capability") {
  GazeDevice dev(simulated_descriptor({}), std::make_unique<SimulatedSource>(two_targets()));
  dev.start_device();
  CHECK_THROWS_AS(dev.calibrate(), UnsupportedCapability);
}

TEST_CASE("ordered delivery to every subscriber") {
  const auto samples = simulated_gaze(two_targets());
  GazeDevice dev(simulated_descriptor(), std::make_unique<ReplaySource>(samples), Pacing::free_run);
  dev.start_device();
  auto a = dev.subscribe();
  auto b = dev.subscribe();
  dev.start_sampling();
  dev.wait_until_exhausted();
  dev.stop_device();
  CHECK(a->drain() == samples);
  CHECK(b->drain() == samples);
}

TEST_CASE("free-run replay throughput") {
  std::vector<GazeSample> samples;
  samples.reserve(100000);
  for (std::int64_t i = 0; i < 100000; ++i) samples.push_back(odd_sample(i * 1000));
  GazeDevice dev(simulated_descriptor(), std::make_unique<ReplaySource>(samples), Pacing::free_run);
  dev.start_device();
  auto q = dev.subscribe();
  const auto t0 = std::chrono::steady_clock::now();
  dev.start_sampling();
  dev.wait_until_exhausted();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(q->size() == 100000);
  CHECK(secs < 1.0);
}

TEST_CASE("replay of a recorded file") {
  TempDir root;
  const auto session = experiment::create_session("S01", {}, root.path());
  auto script = two_targets();
  script.noise_sigma = 0.3;
  const auto samples = simulated_gaze(script);
  const auto path = record_gaze(samples, session, "task");
  ReplaySource src(path);
  std::vector<GazeSample> back;
  while (auto s = src.next()) back.push_back(*s);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) check_same(back[i], samples[i]);
}

TEST_CASE("loopback source") {
  DeviceRegistry reg;
  reg.add({"pointer", {}, ExternalSpec{{{"driver", "loopback"}}}});
  reg.add({"tobii", {}, ExternalSpec{{{"driver", "vendor-sdk"}}}});
  LoopbackSource* src = nullptr;
  auto dev = reg.create_loopback("pointer", src);
  REQUIRE(src != nullptr);
  dev->start_device();
  auto q = dev->subscribe();
  dev->start_sampling();
  src->push(odd_sample(1));
  src->push(odd_sample(2));
  src->close();
  dev->wait_until_exhausted();
  CHECK(q->size() == 2);
  CHECK_THROWS_AS(src->push(odd_sample(3)), StateError);
  CHECK_THROWS_AS(reg.create("tobii"), UnsupportedCapability);
}

TEST_CASE("device registry") {
  TempDir dir;
  const auto reg = DeviceRegistry::load(testutil::data_dir() / "devices.json");
  CHECK(reg.names() == std::vector<std::string>{"simulated"});
  CHECK(reg.descriptor("simulated").has(Capability::pupil));
  CHECK_THROWS_AS(reg.descriptor("nope"), NotFoundError);

  const auto builtin = DeviceRegistry::builtin();
  const auto& spec = std::get<SimulatedSpec>(builtin.descriptor("simulated").source);
  CHECK(spec.script.duration() == doctest::Approx(10.0));

  write_json_file(dir / "replay.json", nlohmann::json::parse(R"([
    {"name": "rec", "source": {"type": "replay", "path": "rec.csv"}}])"));
  const auto replay = DeviceRegistry::load(dir / "replay.json");
  CHECK(std::get<ReplaySpec>(replay.descriptor("rec").source).path == dir / "rec.csv");

  CHECK_THROWS_AS(DeviceRegistry::from_json(nlohmann::json::parse(R"([
    {"name": "a", "source": {"type": "simulated", "script": {"fixations": [{"target": [0,0,1]}]}}},
    {"name": "a", "source": {"type": "simulated", "script": {"fixations": [{"target": [0,0,1]}]}}}])"), dir.path()),
                  ValidationError);
  CHECK_THROWS_AS(DeviceRegistry::from_json(nlohmann::json::parse(R"([
    {"name": "a", "source": {"type": "magic"}}])"), dir.path()),
                  ValidationError);
  CHECK_THROWS_AS(DeviceRegistry::from_json(nlohmann::json::parse(R"({"name": "a"})"), dir.path()),
                  ValidationError);
  CHECK_THROWS_AS(DeviceRegistry::from_json(nlohmann::json::parse(R"([
    {"name": "a", "capabilities": ["telepathy"], "source": {"type": "simulated", "script": {"fixations": [{"target": [0,0,1]}]}}}])"), dir.path()),
                  ValidationError);
}

TEST_CASE("registry resolution order") {
  TempDir dir;
  write_json_file(dir / "env.json", nlohmann::json::parse(R"([
    {"name": "from_env", "source": {"type": "simulated", "script": {"fixations": [{"target": [0,0,1]}]}}}])"));
  ::setenv("VISIONSIM_DEVICES", (dir / "env.json").c_str(), 1);
  CHECK(DeviceRegistry::resolve(std::nullopt).names() == std::vector<std::string>{"from_env"});
  CHECK(DeviceRegistry::resolve(testutil::data_dir() / "devices.json").names() ==
        std::vector<std::string>{"simulated"});
  ::unsetenv("VISIONSIM_DEVICES");
  CHECK(DeviceRegistry::resolve(std::nullopt).names() == std::vector<std::string>{"simulated"});
}

}  // TEST_SUITE
