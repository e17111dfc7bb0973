#include "visionsim/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "visionsim/error.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/gaze.hpp"
#include "visionsim/image_io.hpp"
#include "visionsim/office_scene.hpp"
#include "visionsim/questionnaire.hpp"

namespace visionsim::runner {

namespace fs = std::filesystem;
using experiment::Protocol;
using experiment::SceneContext;
using experiment::Session;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("scene parameter '" + key + "' expects a number, got '" + value + "'",
                        {key});
}

std::vector<gaze::GazeSample> device_samples(const GazeOverride& g, std::size_t count) {
  const auto registry = gaze::DeviceRegistry::load(g.devices_config);
  auto device = registry.create(g.device, gaze::Pacing::free_run);
  auto queue = device->subscribe();
  device->start_device();
  device->start_sampling();
  std::vector<gaze::GazeSample> out;
  out.reserve(count);
  while (out.size() < count) {
    auto s = queue->pop();
    if (!s) break;
    out.push_back(std::move(*s));
  }
  device->stop_device();
  return out;
}

}  // namespace

bool is_task_scene(const std::string& scene_id) {
  return scene_id == kBaseline || scene_id == kMatchingTask;
}

std::map<std::string, std::string> parse_scene_parameter(const std::string& parameter) {
  std::map<std::string, std::string> out;
  std::size_t start = 0;
  while (start <= parameter.size()) {
    const std::size_t end = std::min(parameter.find(';', start), parameter.size());
    const std::string part = trim(parameter.substr(start, end - start));
    start = end + 1;
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("scene parameter '" + part + "' is not key=value", {part});
    }
    const std::string key = trim(part.substr(0, eq));
    if (key.empty()) throw ValidationError("empty key in scene parameter '" + parameter + "'", {part});
    if (!out.emplace(key, trim(part.substr(eq + 1))).second) {
      throw ValidationError("duplicate scene parameter '" + key + "'", {key});
    }
  }
  return out;
}

TaskSceneParams parse_task_scene(const std::string& scene_id, const std::string& parameter) {
  static const std::set<std::string> known = {"controller", "power",         "trials",
                                              "slew_rate",  "time_constant", "foveal_window",
                                              "aggregator"};
  const auto kv = parse_scene_parameter(parameter);
  for (const auto& [key, value] : kv) {
    if (!known.count(key)) throw ValidationError("unknown scene parameter '" + key + "'", {key});
  }
  TaskSceneParams p;
  std::string controller = scene_id == kBaseline ? "fixed" : "instant";
  if (auto it = kv.find("controller"); it != kv.end()) controller = it->second;
  if (auto it = kv.find("trials"); it != kv.end()) {
    const double n = parse_number("trials", it->second);
    if (!(n >= 1.0) || n != std::floor(n)) {
      throw ValidationError("trials must be a positive integer", {"trials"});
    }
    p.trials = static_cast<std::size_t>(n);
  }
  if (controller == "fixed") {
    task::FixedFocus f;
    if (auto it = kv.find("power"); it != kv.end()) f.lens_power = parse_number("power", it->second);
    p.focus = f;
    return p;
  }
  optics::AutofocalConfig c;
  try {
    c.algorithm = optics::parse_algorithm(controller);
    if (auto it = kv.find("aggregator"); it != kv.end()) {
      c.depth_aggregator = optics::parse_aggregator(it->second);
    }
  } catch (const Error& e) {
    throw ValidationError(e.what(), {"controller"});
  }
  if (auto it = kv.find("slew_rate"); it != kv.end()) c.slew_rate = parse_number("slew_rate", it->second);
  if (auto it = kv.find("time_constant"); it != kv.end()) {
    c.time_constant = parse_number("time_constant", it->second);
  }
  if (auto it = kv.find("foveal_window"); it != kv.end()) {
    c.foveal_window = parse_number("foveal_window", it->second);
  }
  if (kv.count("power")) throw ValidationError("'power' only applies to controller=fixed", {"power"});
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what(), {"controller"});
  }
  p.focus = c;
  return p;
}

std::uint64_t scene_seed(std::uint64_t run_seed, std::size_t entry, std::size_t occurrence) {
  // splitmix64 over the three inputs
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(run_seed) ^ entry) ^ occurrence);
}

void validate_protocol(const Protocol& protocol, const RunEnvironment& env) {
  protocol.validate();
  std::vector<std::string> problems;
  for (const auto& entry : protocol.scenes) {
    const std::string& id = entry.scene_id;
    if (id == kMainMenu) continue;
    if (is_task_scene(id)) {
      parse_task_scene(id, entry.parameter);
    } else if (id == kQuestionnaire) {
      questionnaire::load_questionnaire(entry.parameter, env.questionnaire_dir);
    } else {
      problems.push_back(id);
    }
  }
  if (!problems.empty()) {
    std::string list;
    for (const auto& id : problems) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("no handler registered for scene(s): " + list, problems);
  }
}

fs::path resolve_data_root(const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VISIONSIM_DATA"); env != nullptr && *env != '\0') return env;
  return "visionsim_data";
}

fs::path write_trials(const fs::path& dir, const std::vector<task::TrialRecord>& records) {
  const fs::path path = reserve_unique_file(dir, "trials", ".csv");
  task::TrialWriter writer(path);
  for (const auto& r : records) writer.write(r);
  return path;
}

nlohmann::json block_summary(const task::BlockResult& result, const TaskSceneParams& params) {
  nlohmann::json by_distance = nlohmann::json::array();
  for (const auto& [distance, s] : result.by_distance) {
    by_distance.push_back({{"distance", distance},
                           {"stimuli", s.stimuli},
                           {"identified", s.identified},
                           {"table_trials", s.trials},
                           {"table_correct", s.correct}});
  }
  nlohmann::json focus;
  if (const auto* f = std::get_if<task::FixedFocus>(&params.focus)) {
    focus = {{"controller", "fixed"}, {"power", f->lens_power}};
  } else {
    focus = std::get<optics::AutofocalConfig>(params.focus);
    focus["controller"] = focus["algorithm"];
  }
  return {{"trials", result.records.size()},
          {"proportion_correct", result.proportion_correct},
          {"mean_response_time", result.mean_response_time},
          {"focus", focus},
          {"by_distance", by_distance}};
}

RunResult run_headless(const Protocol& protocol, const RunEnvironment& env,
                       const HeadlessOptions& options) {
  validate_protocol(protocol, env);
  experiment::validate_demographics(env.demographic_fields, options.demographics);
  if (options.gaze_device) {
    gaze::DeviceRegistry::load(options.gaze_device->devices_config)
        .descriptor(options.gaze_device->device);
  }

  RunResult result;
  result.session =
      experiment::create_session(options.subject, options.demographics, env.data_root, protocol.name);
  Session& session = result.session;
  std::map<std::size_t, std::size_t> occurrences;

  experiment::SceneRegistry registry;
  registry.add(kMainMenu, [&](SceneContext& ctx) {
    nlohmann::json j = {{"subject_id", ctx.session.subject_id},
                        {"demographics", ctx.session.demographics},
                        {"fields", experiment::to_json(env.demographic_fields)}};
    write_json_file(reserve_unique_file(ctx.scene_dir(), "demographics", ".json"), j);
    ctx.complete();
  });
  auto task_handler = [&](SceneContext& ctx) {
    const TaskSceneParams params = parse_task_scene(ctx.entry.scene_id, ctx.entry.parameter);
    task::BlockConfig block;
    block.n_trials = params.trials;
    block.task = env.task;
    block.focus = params.focus;
    block.seed = scene_seed(env.seed, ctx.scene_index, occurrences[ctx.scene_index]++);
    block.keep_gaze = !options.gaze_device.has_value();
    task::BlockResult br = task::run_block(block);
    const fs::path dir = ctx.scene_dir();
    write_trials(dir, br.records);
    if (options.gaze_device) {
      const auto n = static_cast<std::size_t>(
          std::llround(br.mean_response_time * static_cast<double>(br.records.size()) *
                       env.task.gaze.sample_rate));
      const auto samples = device_samples(*options.gaze_device, std::max<std::size_t>(n, 1));
      gaze::record_gaze(samples, ctx.session, ctx.scene_name);
    } else {
      gaze::record_gaze(br.gaze, ctx.session, ctx.scene_name);
    }
    br.gaze.clear();
    write_json_file(reserve_unique_file(dir, "summary", ".json"), block_summary(br, params));
    result.blocks[ctx.scene_name] = std::move(br);
    ctx.complete();
  };
  registry.add(kBaseline, task_handler);
  registry.add(kMatchingTask, task_handler);
  registry.add(kQuestionnaire, [&](SceneContext& ctx) {
    const auto q = questionnaire::load_questionnaire(ctx.entry.parameter, env.questionnaire_dir);
    questionnaire::record_responses(q, questionnaire::default_responses(q, ctx.scene_name),
                                    ctx.session);
    ctx.complete();
  });

  experiment::ExperimentLoop loop(protocol, std::move(registry), session,
                                  experiment::ExperimentLoop::Options{true});
  loop.run();
  result.events = loop.events();

  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : result.events) events.push_back(experiment::to_json(e));
  write_json_file(session.session_dir / "events.json", events);
  return result;
}

optics::PowerMap load_power_map(const fs::path& path) {
  const auto j = read_json_file(path);
  try {
    return optics::PowerMap(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                            j.at("values").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed power map " + path.string() + ": " + e.what(),
                          {path.string()});
  } catch (const DomainError& e) {
    throw ValidationError("invalid power map " + path.string() + ": " + e.what(), {path.string()});
  }
}

PreviewResult render_preview(const PreviewOptions& o) {
  try {
    optics::validate_pupil(o.pupil_mm);
    o.profile.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what(), {"pupil"});
  }
  if (o.image.has_value() != o.depth.has_value()) {
    throw ValidationError("--image and --depth must be given together", {"image", "depth"});
  }
  ViewGeometry geometry{o.fov, o.width, o.height};
  std::optional<RgbImage> image;
  std::optional<DepthMap> depth;
  if (o.image) {
    image = read_png(*o.image);
    depth = read_depth(*o.depth);
    if (image->width() != depth->width() || image->height() != depth->height()) {
      throw ValidationError("image is " + std::to_string(image->width()) + "x" +
                                std::to_string(image->height()) + " but depth is " +
                                std::to_string(depth->width()) + "x" +
                                std::to_string(depth->height()),
                            {"image", "depth"});
    }
    geometry.image_width = image->width();
    geometry.image_height = image->height();
  }
  try {
    geometry.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what(), {"fov"});
  }
  if (!image) {
    auto [img, dm] = render_office_scene(task::SceneLayout::office(), geometry);
    image = std::move(img);
    depth = std::move(dm);
  }
  std::optional<optics::PowerMap> power_map;
  if (o.power_map) power_map = load_power_map(*o.power_map);

  optics::FocusState focus;
  focus.lens_power = o.lens_power;
  focus.pupil_diameter = o.pupil_mm;
  BlurField field = compute_blur_field(*depth, o.profile, focus,
                                       power_map ? &*power_map : nullptr, geometry);
  RgbImage output = apply_blur(*image, field);
  return {std::move(*image), std::move(*depth), std::move(field), std::move(output)};
}

}  // namespace visionsim::runner
