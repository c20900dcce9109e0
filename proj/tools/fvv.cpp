// fvv: command-line entry points for the edge server, simulated capture and
// offline tools.

#include "fvv/bench.hpp"
#include "fvv/config.hpp"
#include "fvv/edge_server.hpp"
#include "fvv/log.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>

extern char **environ;

using namespace fvv;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

// Every subcommand accepts every config key as --<key>, plus --config.
struct ConfigFlags {
  void attach(CLI::App *app) {
    app->add_option("--config", path, "JSON config file (default: $FVV_CONFIG)");
    for (const auto &key : config_keys()) {
      options[key] = app->add_option("--" + key, values[key], "config key " + key);
    }
  }

  Config load(std::map<std::string, std::string> extra = {}, std::span<const std::string> required = {}) const {
    std::map<std::string, std::string> flags = std::move(extra);
    for (const auto &[key, opt] : options) {
      if (opt->count() > 0) {
        flags[key] = values.at(key);
      }
    }
    const auto sources = gather_config_sources(path.empty() ? std::nullopt : std::optional(path), flags, environ);
    auto c = parse_config(sources, required);
    log::init(c.log_level);
    return c;
  }

  std::string path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option *> options;
};

ServerConfig server_config(const Config &c) {
  ServerConfig s;
  s.assembler = assembler_config(c);
  s.selection.lambda = c.lambda;
  s.selection.hysteresis = c.hysteresis;
  s.synthesis.depth_epsilon = c.epsilon;
  s.synthesis.depth_epsilon_relative = c.epsilon_relative;
  s.synthesis.splat_2x2 = c.splat;
  s.output = c.output_encoding == "raw" ? OutputEncoding::raw : OutputEncoding::png;
  s.bind = c.bind;
  s.media_port = static_cast<std::uint16_t>(c.media_port);
  s.control_port = static_cast<std::uint16_t>(c.control_port);
  s.ws_port = static_cast<std::uint16_t>(c.ws_port);
  return s;
}

BackgroundModel background_for(const Config &c) {
  if (!c.background.empty()) {
    return BackgroundModel::load(c.background);
  }
  if (!c.calibration.empty()) {
    return build_background_model(load_calibration(c.calibration), make_scene("empty"));
  }
  return simulated_background(c.width, c.height);
}

Calibration calibration_for(const Config &c) {
  if (!c.calibration.empty()) {
    return load_calibration(c.calibration);
  }
  if (!c.background.empty()) {
    return load_calibration(std::filesystem::path(c.background) / "calibration.json");
  }
  return default_calibration(c.width, c.height);
}

std::pair<int, int> parse_resolution(const std::string &text) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  if (std::sscanf(text.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w <= 0 || h <= 0) {
    throw std::runtime_error("bad resolution \"" + text + "\", expected WxH");
  }
  return {w, h};
}

int cmd_serve(const ConfigFlags &flags) {
  const auto c = flags.load();
  Server server(background_for(c), server_config(c));
  server.start();
  wait_for_signal();
  const auto s = server.stats_snapshot();
  server.stop();
  log::info("serve_exit", {{"frames", s.frames_synthesized}, {"incomplete_sets", s.incomplete_sets},
                           {"dropped_ticks", s.dropped_ticks}, {"lost_events", s.lost_events}});
  return 0;
}

int cmd_capture_sim(const ConfigFlags &flags) {
  const auto c = flags.load();
  const auto calib = calibration_for(c);
  auto scene = std::make_shared<const Scene>(make_scene(c.scene));
  std::vector<std::unique_ptr<CaptureNode>> nodes;
  for (auto id : parse_camera_list(c.cameras)) {
    CaptureNodeConfig nc;
    nc.host = c.server;
    nc.media_port = static_cast<std::uint16_t>(c.media_port);
    nc.control_port = static_cast<std::uint16_t>(c.control_port);
    nc.camera = id;
    nc.period_us = static_cast<Timestamp>(c.period_us);
    nc.compress = c.compress;
    nodes.push_back(std::make_unique<CaptureNode>(scene, calib.at(id), calib.quantizer, nc));
    nodes.back()->start();
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    for (auto &n : nodes) {
      if (auto f = n->failure()) {
        throw std::runtime_error("capture node failed: " + *f);
      }
    }
  }
  for (auto &n : nodes) {
    n->stop();
  }
  return 0;
}

struct SynthesizeArgs {
  std::vector<double> pose;
  int camera = -1;
  std::vector<int> exclude;
  int tick = 0;
  std::string out;
};

int cmd_synthesize(const ConfigFlags &flags, const SynthesizeArgs &a) {
  const std::string required[] = {"dataset"};
  const auto c = flags.load({}, required);
  const auto ds = load_dataset(c.dataset);
  if (a.tick < 0 || static_cast<std::size_t>(a.tick) >= ds.ticks()) {
    throw std::runtime_error("tick " + std::to_string(a.tick) + " is outside the dataset (" +
                             std::to_string(ds.ticks()) + " ticks)");
  }
  CameraModel view;
  if (!a.pose.empty()) {
    if (a.pose.size() != 18) {
      throw std::runtime_error("--pose takes 18 numbers (rotation 9, translation 3, fx fy cx cy width height)");
    }
    ctl::Viewpoint vp;
    std::copy_n(a.pose.begin(), 12, vp.pose.begin());
    std::copy_n(a.pose.begin() + 12, 6, vp.intrinsics.begin());
    view = camera_from_viewpoint(vp);
  } else if (a.camera >= 0) {
    view = ds.calibration.at(static_cast<CameraId>(a.camera));
    view.id = kVirtualCameraId;
  } else {
    throw std::runtime_error("give --pose or --camera");
  }

  BackgroundModel bg;
  if (!c.background.empty()) {
    bg = BackgroundModel::load(c.background);
  } else if (ds.background.size() == ds.calibration.cameras.size()) {
    bg.calibration = ds.calibration;
    bg.depth = ds.background;
    bg.validate();
  } else {
    throw std::runtime_error("dataset has no background depth; pass --background");
  }

  std::vector<CameraModel> rig;
  for (const auto &cam : ds.calibration.cameras) {
    if (std::find(a.exclude.begin(), a.exclude.end(), cam.id) == a.exclude.end()) {
      rig.push_back(cam);
    }
  }
  if (rig.empty()) {
    throw std::runtime_error("every camera is excluded");
  }
  SelectionParams sp;
  sp.lambda = c.lambda;
  sp.hysteresis = c.hysteresis;
  const auto state = select_cameras(view, rig, std::nullopt, sp);
  FrameSet set;
  set.tick_ts = static_cast<Timestamp>(a.tick) * kDatasetPeriodUs;
  for (auto id : state.active) {
    set.frames[id] = {std::make_shared<const TimedFrame>(ds.frames.at(id).at(static_cast<std::size_t>(a.tick))), 0};
  }
  SynthesisConfig sc;
  sc.depth_epsilon = c.epsilon;
  sc.depth_epsilon_relative = c.epsilon_relative;
  sc.splat_2x2 = c.splat;
  const auto out = synthesize(set, state, bg, sc);

  const std::filesystem::path path = a.out;
  if (path.extension() == ".png") {
    write_file(path, encode_png(out.final));
  } else {
    write_file(path, serialize_color(out.final, static_cast<std::uint32_t>(a.tick)));
  }
  std::size_t covered = 0;
  for (auto b : out.covered.bits) {
    covered += b != 0 ? 1 : 0;
  }
  nlohmann::json active = state.active;
  std::printf("%s\n", nlohmann::json{{"out", a.out},
                                     {"active", active},
                                     {"coverage", static_cast<double>(covered) / out.covered.bits.size()}}
                          .dump()
                          .c_str());
  return 0;
}

int cmd_pack_depth(const std::string &in, const std::string &out, unsigned frame_index) {
  int w = 0, h = 0;
  const auto codes = parse_pgm16(read_file(in), w, h);
  DepthMap d;
  d.width = w;
  d.height = h;
  d.codes = codes;
  write_file(out, serialize_packed_depth(pack_depth(d), frame_index));
  return 0;
}

int cmd_unpack_depth(const std::string &in, const std::string &out) {
  const auto d = unpack_depth(parse_packed_depth(read_file(in)));
  write_file(out, serialize_pgm16(d.width, d.height, d.codes));
  return 0;
}

int cmd_render_dataset(const ConfigFlags &flags, const std::string &out) {
  const auto c = flags.load();
  const auto ds = render_dataset(make_scene(c.scene), calibration_for(c), static_cast<std::size_t>(c.ticks),
                                 static_cast<Timestamp>(c.period_us));
  export_dataset(out, ds);
  log::info("dataset_written", {{"dir", out}, {"ticks", c.ticks}, {"cameras", ds.calibration.cameras.size()}});
  return 0;
}

int cmd_bench(const ConfigFlags &flags, const std::string &resolution) {
  std::map<std::string, std::string> extra;
  if (!resolution.empty()) {
    const auto [w, h] = parse_resolution(resolution);
    extra["width"] = std::to_string(w);
    extra["height"] = std::to_string(h);
  }
  const auto c = flags.load(extra);
  BenchOptions o;
  o.width = c.width;
  o.height = c.height;
  o.ticks = c.ticks;
  o.scene = c.scene;
  o.output = c.output_encoding == "raw" ? OutputEncoding::raw : OutputEncoding::png;
  o.synthesis.depth_epsilon = c.epsilon;
  o.synthesis.depth_epsilon_relative = c.epsilon_relative;
  o.synthesis.splat_2x2 = c.splat;
  std::fputs(format_bench_table(run_bench(o)).c_str(), stdout);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"FVV Live edge server and tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fvv 0.1.0");

  ConfigFlags serve_flags, capture_flags, synth_flags, render_flags, bench_flags;

  auto *serve = app.add_subcommand("serve", "Run the edge server (media, control and WebSocket ports)");
  serve_flags.attach(serve);

  auto *capture = app.add_subcommand("capture-sim", "Run simulated capture nodes against a server");
  capture_flags.attach(capture);

  SynthesizeArgs sa;
  auto *synth = app.add_subcommand("synthesize", "Synthesize one frame offline from a dataset");
  synth_flags.attach(synth);
  synth->add_option("--pose", sa.pose, "world-to-camera rotation (9, row-major), translation (3), fx fy cx cy w h")
      ->expected(18);
  synth->add_option("--camera", sa.camera, "use this rig camera's pose as the viewpoint");
  synth->add_option("--exclude", sa.exclude, "cameras left out of selection (held-out views)")->delimiter(',');
  synth->add_option("--tick", sa.tick, "dataset tick");
  synth->add_option("--out", sa.out, "output image (.png, otherwise FVVI color)")->required();

  std::string pack_in, pack_out, unpack_in, unpack_out;
  unsigned frame_index = 0;
  auto *pack = app.add_subcommand("pack-depth", "Convert a 16-bit PGM of depth codes to a packed depth file");
  pack->add_option("--in", pack_in, "input .pgm (P5, maxval 4095 or 65535)")->required();
  pack->add_option("--out", pack_out, "output .fvvd")->required();
  pack->add_option("--frame-index", frame_index, "frame index stored in the header");
  auto *unpack = app.add_subcommand("unpack-depth", "Convert a packed depth file to a 16-bit PGM of codes");
  unpack->add_option("--in", unpack_in, "input .fvvd")->required();
  unpack->add_option("--out", unpack_out, "output .pgm")->required();

  std::string render_out;
  auto *render_ds = app.add_subcommand("render-dataset", "Render a synthetic multi-camera dataset");
  render_flags.attach(render_ds);
  render_ds->add_option("--out", render_out, "output directory")->required();

  std::string resolution;
  auto *bench = app.add_subcommand("bench", "Time the synthesis pipeline per stage");
  bench_flags.attach(bench);
  bench->add_option("--resolution", resolution, "WxH, e.g. 640x360");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "fvv: error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (serve->parsed()) {
      return cmd_serve(serve_flags);
    }
    if (capture->parsed()) {
      return cmd_capture_sim(capture_flags);
    }
    if (synth->parsed()) {
      return cmd_synthesize(synth_flags, sa);
    }
    if (pack->parsed()) {
      return cmd_pack_depth(pack_in, pack_out, frame_index);
    }
    if (unpack->parsed()) {
      return cmd_unpack_depth(unpack_in, unpack_out);
    }
    if (render_ds->parsed()) {
      return cmd_render_dataset(render_flags, render_out);
    }
    if (bench->parsed()) {
      return cmd_bench(bench_flags, resolution);
    }
  } catch (const std::exception &e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "fvv: error: " << msg << "\n";
    return 1;
  }
  return 1;
}
