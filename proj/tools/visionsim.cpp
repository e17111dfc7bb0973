#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <json.hpp>

#include "visionsim/error.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/image_io.hpp"
#include "visionsim/runner.hpp"
#include "visionsim/service.hpp"
#include "visionsim/ws_server.hpp"

namespace fs = std::filesystem;
using namespace visionsim;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation:
    case ErrorKind::parse:
    case ErrorKind::domain: return 2;
    case ErrorKind::not_found: return 3;
    case ErrorKind::io: return 4;
    case ErrorKind::state:
    case ErrorKind::unsupported: return 5;
  }
  return 1;
}

void report(const Error& e, bool json) {
  if (!json) {
    std::cerr << "error: " << e.what() << '\n';
    return;
  }
  nlohmann::json j = {{"kind", to_string(e.kind())}, {"message", e.what()}};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e); v && !v->details().empty()) {
    j["details"] = v->details();
  }
  if (const auto* n = dynamic_cast<const NotFoundError*>(&e)) j["path"] = n->path();
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) j["row"] = p->row();
  if (const auto* io = dynamic_cast<const IoError*>(&e)) j["written"] = io->written();
  std::cerr << nlohmann::json{{"error", j}}.dump() << '\n';
}

struct Common {
  fs::path protocol;
  std::optional<fs::path> data_root;
  std::optional<fs::path> questionnaires;
  std::optional<fs::path> task;
  std::optional<fs::path> fields;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--protocol", c.protocol, "Protocol JSON file")->required();
  cmd->add_option("--data-root", c.data_root,
                  "Folder for subject sessions (default: $VISIONSIM_DATA, else ./visionsim_data)");
  cmd->add_option("--questionnaires", c.questionnaires,
                  "Folder with <abbrev>.json files (default: <protocol dir>/../questionnaires)");
  cmd->add_option("--task", c.task, "Task config JSON");
  cmd->add_option("--demographic-fields", c.fields, "JSON list of setup-mask field descriptors");
  cmd->add_option("--seed", c.seed, "Run seed (default: the protocol's seed)");
}

runner::RunEnvironment environment(const Common& c, const experiment::Protocol& protocol) {
  runner::RunEnvironment env;
  env.data_root = runner::resolve_data_root(c.data_root);
  env.questionnaire_dir = c.questionnaires
                              ? *c.questionnaires
                              : c.protocol.parent_path() / ".." / "questionnaires";
  if (c.task) env.task = task::load_task_config(*c.task);
  if (c.fields) env.demographic_fields = experiment::parse_demographic_fields(read_json_file(*c.fields));
  env.seed = c.seed.value_or(protocol.seed);
  return env;
}

std::map<std::string, std::string> parse_pairs(const std::vector<std::string>& pairs) {
  std::map<std::string, std::string> out;
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("expected key=value, got '" + p + "'", {p});
    }
    out[p.substr(0, eq)] = p.substr(eq + 1);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visionsim: headless vision-science experiment engine"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "Print errors as JSON on stderr");

  // run
  Common run_c;
  std::string subject;
  std::vector<std::string> demographics;
  std::optional<fs::path> devices;
  std::optional<std::string> device;
  std::optional<fs::path> trace;
  std::optional<fs::path> trace_out;
  auto* run = app.add_subcommand("run", "Run a protocol headlessly");
  add_common(run, run_c);
  run->add_option("--subject", subject, "Subject id (folder name)");
  run->add_option("--demographic", demographics, "Demographic answer, key=value (repeatable)");
  run->add_option("--devices", devices,
                  "Gaze device registry JSON (default: $VISIONSIM_DEVICES, else built-in)");
  run->add_option("--device", device, "Record task-scene gaze from this registry device");
  run->add_option("--trace", trace, "Replay a client message trace instead of the observer");
  run->add_option("--trace-out", trace_out, "Write the server messages of a trace replay (JSONL)");

  // preview
  runner::PreviewOptions pv;
  std::optional<double> focus_distance;
  fs::path out;
  std::optional<fs::path> field_out;
  std::optional<fs::path> scene_out;
  std::optional<fs::path> depth_out;
  auto* preview = app.add_subcommand("preview", "Render one blurred frame");
  preview->add_option("--image", pv.image, "Input PNG (default: synthetic office scene)");
  preview->add_option("--depth", pv.depth, "Depth map, PFM (meters) or 16-bit PNG (millimeters)");
  preview->add_option("--sphere", pv.profile.sphere, "Sphere, diopters");
  preview->add_option("--cylinder", pv.profile.cylinder, "Cylinder, diopters (>= 0)");
  preview->add_option("--axis", pv.profile.axis, "Cylinder axis, degrees [0, 180)");
  preview->add_option("--accommodation", pv.profile.residual_accommodation,
                      "Residual accommodation, diopters");
  auto* lens = preview->add_option("--lens-power", pv.lens_power, "Tunable lens power, diopters");
  preview->add_option("--focus-distance", focus_distance, "Tune the lens to this distance, meters")
      ->excludes(lens);
  preview->add_option("--pupil", pv.pupil_mm, "Pupil diameter, mm");
  preview->add_option("--fov", pv.fov, "Horizontal field of view, degrees");
  preview->add_option("--width", pv.width, "Synthetic scene width, px");
  preview->add_option("--height", pv.height, "Synthetic scene height, px");
  preview->add_option("--power-map", pv.power_map, "Progressive add map JSON {rows, cols, values}");
  preview->add_option("--out", out, "Output PNG")->required();
  preview->add_option("--field-out", field_out, "Blur field heatmap (major axis, px) as PFM");
  preview->add_option("--scene-out", scene_out, "Unblurred input as PNG");
  preview->add_option("--depth-out", depth_out, "Depth map as PFM");

  // validate
  Common val_c;
  std::optional<fs::path> val_devices;
  auto* validate = app.add_subcommand("validate", "Check a protocol and everything it references");
  add_common(validate, val_c);
  validate->add_option("--devices", val_devices, "Gaze device registry JSON to check");

  // serve
  Common srv_c;
  runner::ServeOptions serve_opts;
  auto* serve = app.add_subcommand("serve", "Serve a session over WebSocket");
  add_common(serve, srv_c);
  serve->add_option("--address", serve_opts.address, "Listen address");
  serve->add_option("--port", serve_opts.port, "Listen port (0 picks one)");
  serve->add_option("--tick-hz", serve_opts.tick_hz, "autofocal_state rate during task scenes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto protocol = experiment::load_protocol(run_c.protocol);
      const auto env = environment(run_c, protocol);
      if (trace) {
        runner::SessionService service({protocol, env, {}});
        std::ifstream in(*trace);
        if (!in) throw NotFoundError("trace not found: " + trace->string(), trace->string());
        const auto messages = runner::replay_trace(service, in);
        if (trace_out) {
          std::ofstream o(*trace_out);
          for (const auto& m : messages) o << m.dump() << '\n';
          if (!o) throw IoError("failed writing " + trace_out->string());
        }
        std::size_t errors = 0;
        for (const auto& m : messages) {
          if (m.at("type") == "error") {
            ++errors;
            std::cerr << "trace: " << m.at("payload").dump() << '\n';
          }
        }
        if (!service.session()) throw ValidationError("trace never started a session", {"trace"});
        std::cout << service.session()->session_dir.string() << '\n';
        return errors == 0 ? 0 : 2;
      }
      if (subject.empty()) throw ValidationError("--subject is required", {"subject"});
      runner::HeadlessOptions options;
      options.subject = subject;
      options.demographics = parse_pairs(demographics);
      if (device) {
        fs::path config;
        if (devices) {
          config = *devices;
        } else if (const char* e = std::getenv("VISIONSIM_DEVICES"); e && *e) {
          config = e;
        } else {
          throw ValidationError("--device needs --devices or $VISIONSIM_DEVICES", {"device"});
        }
        options.gaze_device = runner::GazeOverride{config, *device};
      } else {
        gaze::DeviceRegistry::resolve(devices);
      }
      const auto result = runner::run_headless(protocol, env, options);
      std::cout << result.session.session_dir.string() << '\n';
      return 0;
    }
    if (*preview) {
      if (focus_distance) pv.lens_power = optics::vergence_from_distance(*focus_distance);
      const auto r = runner::render_preview(pv);
      write_png(out, r.output);
      if (field_out) write_field_heatmap(*field_out, r.field);
      if (scene_out) write_png(*scene_out, r.input);
      if (depth_out) write_pfm(*depth_out, r.depth);
      return 0;
    }
    if (*validate) {
      const auto protocol = experiment::load_protocol(val_c.protocol);
      runner::validate_protocol(protocol, environment(val_c, protocol));
      if (val_devices) gaze::DeviceRegistry::load(*val_devices);
      std::cout << "ok: " << protocol.name << " (" << protocol.scenes.size() << " scenes)\n";
      return 0;
    }
    if (*serve) {
      const auto protocol = experiment::load_protocol(srv_c.protocol);
      runner::SessionService service({protocol, environment(srv_c, protocol), {}});
      runner::WebSocketServer server(service, serve_opts);
      boost::asio::io_context signals_ctx;
      boost::asio::signal_set signals(signals_ctx, SIGINT, SIGTERM);
      signals.async_wait([&server](const boost::system::error_code&, int) { server.stop(); });
      std::thread signal_thread([&signals_ctx] { signals_ctx.run(); });
      std::cout << "serving " << protocol.name << " on ws://" << serve_opts.address << ':'
                << server.port() << '\n'
                << std::flush;
      server.run();
      signals_ctx.stop();
      signal_thread.join();
      return 0;
    }
  } catch (const Error& e) {
    report(e, json_errors);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    if (json_errors) {
      std::cerr << nlohmann::json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump()
                << '\n';
    } else {
      std::cerr << "error: " << e.what() << '\n';
    }
    return 1;
  }
  return 0;
}
