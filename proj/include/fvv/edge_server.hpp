#pragma once

#include "fvv/calibration.hpp"
#include "fvv/scene_sim.hpp"
#include "fvv/selection.hpp"
#include "fvv/sync.hpp"
#include "fvv/synthesis.hpp"
#include "fvv/transport.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace fvv {

class ServerError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Microseconds on the shared clock (the server's wall clock).
Timestamp wall_clock_us();

enum class OutputEncoding { png, raw };

struct ServerConfig {
  AssemblerConfig assembler;
  SelectionParams selection;
  SynthesisConfig synthesis;
  OutputEncoding output = OutputEncoding::png;
  std::string bind = "127.0.0.1";
  std::uint16_t media_port = 9500;   // 0 = any free port
  std::uint16_t control_port = 9501;
  std::uint16_t ws_port = 9502;
  bool enable_ws = true;
  // Skip to the newest decidable tick when synthesis falls behind.
  bool drop_late_ticks = true;
  // A camera dropped for staleness stays out of selection this long.
  Timestamp lost_retry_us = 2'000'000;
  Timestamp heartbeat_us = kHeartbeatPeriodUs;
  Timestamp peer_timeout_us = kPeerTimeoutUs;

  void validate() const;
};

struct TickOutput {
  Timestamp tick_ts = 0;
  ViewState view;
  bool selection_changed = false; // first output with this active/subscribed selection
  I420Frame frame;
  MediaType encoded_type = MediaType::png;
  std::vector<std::uint8_t> encoded;
  StageTimes times;
  int stale_active = 0;
};

// Assembly, selection, synthesis and encoding for one viewer, without I/O.
// Not thread-safe; the server serializes access.
class EdgePipeline {
public:
  using Clock = std::function<Timestamp()>;

  EdgePipeline(BackgroundModel background, ServerConfig config, Clock clock = wall_clock_us);

  const Calibration &calibration() const { return bg_.calibration; }
  const ServerConfig &config() const { return config_; }

  // Takes effect at the next tick.
  void set_viewpoint(const CameraModel &virtual_cam);
  bool has_viewpoint() const { return viewpoint_.has_value(); }
  void clear_viewpoint();

  // Cameras eligible for selection. All calibrated cameras start available.
  void set_available(const std::set<CameraId> &cameras);
  void mark_lost(CameraId camera, std::optional<Timestamp> retry_at = std::nullopt);
  void mark_alive(CameraId camera);
  std::set<CameraId> available() const;

  bool ingest(FramePtr frame);

  // One pipeline step. With `now`, only decided ticks are produced (real-time);
  // with std::nullopt, queued frames are treated as complete (offline replay).
  std::optional<TickOutput> tick(std::optional<Timestamp> now);

  // Cameras the capture nodes should stream right now.
  std::vector<CameraId> subscriptions() const;
  const std::optional<ViewState> &view() const { return view_; }
  PipelineStats stats() const { return stats_; }
  std::vector<CameraId> take_lost_events();

private:
  bool reselect(Timestamp now);

  BackgroundModel bg_;
  ServerConfig config_;
  Clock clock_;
  FrameAssembler assembler_;
  std::optional<CameraModel> viewpoint_;
  bool viewpoint_dirty_ = false;
  bool availability_dirty_ = true;
  std::optional<ViewState> view_;
  bool report_pending_ = false;
  std::set<CameraId> connected_;
  std::map<CameraId, std::optional<Timestamp>> lost_; // nullopt = until mark_alive
  std::vector<CameraId> lost_events_;
  bool output_started_ = false;
  std::optional<Timestamp> last_output_tick_;
  PipelineStats stats_;
};

// TCP control (length-prefixed JSON) and media (FVVM) listeners plus an
// optional WebSocket bridge, all feeding one EdgePipeline.
//
// Media port: capture nodes push frames. A viewer opens a media connection
// and sends one empty color message with camera_id 0xFFFF to attach as the
// output sink.
// WebSocket port: text frames carry control JSON, binary frames carry FVVM
// messages (server to browser only).
class Server {
public:
  Server(BackgroundModel background, ServerConfig config);
  ~Server();
  Server(const Server &) = delete;
  Server &operator=(const Server &) = delete;

  void start();
  void stop();
  bool running() const { return running_; }

  std::uint16_t media_port() const;
  std::uint16_t control_port() const;
  std::uint16_t ws_port() const;

  PipelineStats stats_snapshot() const;
  std::optional<ViewState> view_snapshot() const;
  std::set<CameraId> connected_cameras() const;

  struct Impl;

private:
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> running_{false};
};

// ---------------------------------------------------------------------------
// Simulated capture node

struct CaptureNodeConfig {
  std::string host = "127.0.0.1";
  std::uint16_t control_port = 9501;
  std::uint16_t media_port = 9500;
  CameraId camera = 0;
  Timestamp period_us = 33333;
  ClockModel local_clock;   // simulated offset of this node's free-running clock
  int clock_probes = 8;
  bool compress = false;
  Timestamp heartbeat_us = kHeartbeatPeriodUs;
};

// Renders its camera at every shared-clock tick while subscribed and pushes
// the frame to the server.
class CaptureNode {
public:
  CaptureNode(std::shared_ptr<const Scene> scene, CameraModel camera, DepthQuantizer quantizer,
              CaptureNodeConfig config);
  ~CaptureNode();
  CaptureNode(const CaptureNode &) = delete;
  CaptureNode &operator=(const CaptureNode &) = delete;

  // Connects, estimates the clock offset and starts capturing. Throws on connect failure.
  void start();
  // Closes sockets abruptly, like a killed process.
  void kill();
  void stop();

  bool subscribed() const { return subscribed_; }
  OffsetEstimate offset() const;
  std::uint64_t frames_sent() const { return frames_sent_; }
  std::optional<std::string> failure() const;

  struct Impl;

private:
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> subscribed_{false};
  std::atomic<std::uint64_t> frames_sent_{0};
};

// ---------------------------------------------------------------------------
// Scripted viewer (TCP), used by tests, the CLI and as a reference client.

class ViewerClient {
public:
  ViewerClient();
  ~ViewerClient();
  ViewerClient(const ViewerClient &) = delete;
  ViewerClient &operator=(const ViewerClient &) = delete;

  // Sends Hello(viewer); returns the Welcome or the server's Error.
  std::variant<ctl::Welcome, ctl::Error> connect(const std::string &host, std::uint16_t control_port,
                                                 std::uint16_t media_port, bool attach_media = true);
  void send(const ControlMessage &msg);
  void send_viewpoint(const CameraModel &cam);

  std::optional<ControlMessage> next_control(std::chrono::milliseconds timeout);
  std::optional<MediaMessage> next_media(std::chrono::milliseconds timeout);
  bool connected() const;
  void close();

  struct Impl;

private:
  std::unique_ptr<Impl> impl_;
};

// Rig and background for `serve`/`bench` without files: the default rig at
// the given size and the oracle render of the empty scene.
BackgroundModel simulated_background(int width, int height);

} // namespace fvv
