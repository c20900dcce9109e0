#pragma once

// Shared by the loopback test and the acceptance binary.

#include "fvv/edge_server.hpp"

#include <chrono>
#include <set>
#include <string>

namespace fvv {

struct LoopbackOptions {
  int width = 320;
  int height = 180;
  int frames = 300;
  // Nine nodes, the server and the viewer share one process; 15 fps leaves
  // headroom on a single core.
  Timestamp period_us = 66666;
  bool compress = false;
};

struct LoopbackResult {
  int frames = 0;
  bool monotone = true;
  std::vector<CameraId> leaders; // active[0] of each selection report, repeats collapsed
  PipelineStats stats;
  double seconds = 0.0;
  std::string error;

  bool leaders_in_order(std::size_t cameras) const {
    if (leaders.size() != cameras) {
      return false;
    }
    for (std::size_t i = 0; i < cameras; ++i) {
      if (leaders[i] != i) {
        return false;
      }
    }
    return true;
  }
};

// Server, nine simulated capture nodes and a scripted viewer on loopback
// ports. The viewer walks the arc through the rig, one step per received frame.
inline LoopbackResult run_loopback(const LoopbackOptions &opt) {
  using namespace std::chrono;
  LoopbackResult r;
  const auto t0 = steady_clock::now();
  const auto bg = simulated_background(opt.width, opt.height);
  ServerConfig cfg;
  cfg.media_port = cfg.control_port = cfg.ws_port = 0;
  cfg.enable_ws = false;
  cfg.assembler.period_us = opt.period_us;
  cfg.assembler.tolerance_us = opt.period_us / 2;
  Server server(bg, cfg);
  server.start();

  auto scene = std::make_shared<const Scene>(make_scene("default"));
  std::vector<std::unique_ptr<CaptureNode>> nodes;
  for (const auto &cam : bg.calibration.cameras) {
    CaptureNodeConfig c;
    c.media_port = server.media_port();
    c.control_port = server.control_port();
    c.camera = cam.id;
    c.period_us = opt.period_us;
    c.compress = opt.compress;
    c.local_clock.offset_us = -250'000 + 50'000 * static_cast<std::int64_t>(cam.id);
    nodes.push_back(std::make_unique<CaptureNode>(scene, cam, DepthQuantizer{}, c));
    nodes.back()->start();
  }
  const auto deadline = t0 + seconds(110);
  while (server.connected_cameras().size() < nodes.size() && steady_clock::now() < deadline) {
    std::this_thread::sleep_for(milliseconds(5));
  }

  ViewerClient viewer;
  const auto hello = viewer.connect("127.0.0.1", server.control_port(), server.media_port());
  if (!std::holds_alternative<ctl::Welcome>(hello)) {
    r.error = "viewer refused";
    return r;
  }
  const auto &rig = bg.calibration.cameras;
  auto step = [&](int i) {
    const double s = opt.frames > 1 ? static_cast<double>(i) / (opt.frames - 1) : 0.0;
    viewer.send_viewpoint(arc_viewpoint(rig, s, kStageTarget));
  };
  auto note = [&](const ControlMessage &m) {
    if (const auto *rep = std::get_if<ctl::SelectionReport>(&m); rep && !rep->active.empty()) {
      if (r.leaders.empty() || r.leaders.back() != rep->active.front()) {
        r.leaders.push_back(rep->active.front());
      }
    }
  };
  step(0);
  std::optional<Timestamp> last;
  while (r.frames < opt.frames && steady_clock::now() < deadline) {
    while (auto m = viewer.next_control(milliseconds(0))) {
      note(*m);
    }
    auto media = viewer.next_media(milliseconds(200));
    if (!media) {
      if (!viewer.connected()) {
        r.error = "viewer disconnected";
        break;
      }
      continue;
    }
    if (last && media->capture_ts <= *last) {
      r.monotone = false;
    }
    last = media->capture_ts;
    ++r.frames;
    step(std::min(r.frames, opt.frames - 1));
  }
  while (auto m = viewer.next_control(milliseconds(0))) {
    note(*m);
  }
  r.stats = server.stats_snapshot();
  for (auto &n : nodes) {
    if (auto f = n->failure(); f && r.error.empty()) {
      r.error = *f;
    }
  }
  viewer.close();
  for (auto &n : nodes) {
    n->stop();
  }
  server.stop();
  r.seconds = duration<double>(steady_clock::now() - t0).count();
  if (r.frames < opt.frames && r.error.empty()) {
    r.error = "timed out";
  }
  return r;
}

} // namespace fvv
