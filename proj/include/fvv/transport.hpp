#pragma once

#include "fvv/calibration.hpp"
#include "fvv/geometry.hpp"
#include "fvv/sync.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fvv {

// ---------------------------------------------------------------------------
// Errors

enum class ProtocolErrc : int {
  bad_magic = 1,
  truncated = 2,
  version_mismatch = 3,
  decompression_failed = 4,
  bad_type = 5,
  size_mismatch = 6,
  too_large = 7,
  bad_control = 8,
};

const char *to_string(ProtocolErrc code);

class ProtocolError : public std::runtime_error {
public:
  ProtocolError(ProtocolErrc code, const std::string &what);
  ProtocolErrc code() const { return code_; }

private:
  ProtocolErrc code_;
};

// ---------------------------------------------------------------------------
// Media channel
//
// Header (little-endian, 26 bytes):
//   "FVVM" | version u8 | type u8 | camera_id u16 | capture_ts u64 |
//   width u16 | height u16 | flags u16 | payload_len u32
// payload_len counts the bytes on the wire (after compression).

inline constexpr std::uint8_t kMediaVersion = 1;
inline constexpr std::size_t kMediaHeaderSize = 26;
inline constexpr std::uint16_t kFlagDeflate = 0x0001;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;
inline constexpr CameraId kVirtualCameraId = 0xFFFF;

enum class MediaType : std::uint8_t {
  color = 1,        // I420 planes
  packed_depth = 2, // Y/U/V planes of a PackedDepthFrame
  mask = 3,         // 1 bpp rows, MSB first
  png = 4,          // encoded output frame for browsers (size not checked)
};

struct MediaMessage {
  MediaType type = MediaType::color;
  CameraId camera_id = 0;
  Timestamp capture_ts = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint16_t flags = 0;
  std::vector<std::uint8_t> payload; // always uncompressed in memory

  bool compressed() const { return (flags & kFlagDeflate) != 0; }
  bool operator==(const MediaMessage &) const = default;
};

// Uncompressed payload size implied by type and dimensions; nullopt for png.
std::optional<std::size_t> expected_payload_size(MediaType type, int width, int height);

std::vector<std::uint8_t> encode_media(const MediaMessage &msg);
// Decodes exactly one message from the front of `bytes`; `consumed` receives its wire size.
MediaMessage decode_media(std::span<const std::uint8_t> bytes, std::size_t *consumed = nullptr);

// Incremental decoder for a byte stream of concatenated messages. The magic is
// checked as soon as four bytes are present, before any payload is buffered.
class MediaStreamParser {
public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<MediaMessage> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

// Raw DEFLATE (no zlib header).
std::vector<std::uint8_t> deflate_bytes(std::span<const std::uint8_t> in, int level = 1);
std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, std::size_t expected_size);

// A capture frame travels as three messages sharing camera and timestamp.
std::vector<MediaMessage> frame_to_media(const TimedFrame &frame, bool compress);

// Collects the three parts of each frame; returns the frame once complete.
class FrameReassembler {
public:
  std::optional<TimedFrame> add(MediaMessage msg);
  std::size_t partial() const { return parts_.size(); }

private:
  struct Parts {
    std::optional<MediaMessage> color, depth, mask;
  };
  std::map<std::pair<CameraId, Timestamp>, Parts> parts_;
};

// ---------------------------------------------------------------------------
// Control channel: u32 little-endian length, then a JSON document with a
// "type" field.

struct StageTimes {
  double assembly_us = 0.0;
  double warp_us = 0.0;
  double blend_us = 0.0;
  double composite_us = 0.0;
  double encode_us = 0.0;

  double total_us() const { return assembly_us + warp_us + blend_us + composite_us + encode_us; }
  StageTimes &operator+=(const StageTimes &o);
  bool operator==(const StageTimes &) const = default;
};

struct PipelineStats {
  std::uint64_t ticks = 0;               // frame sets assembled
  std::uint64_t frames_synthesized = 0;
  std::uint64_t stale_frames = 0;        // repeated frames used in synthesized sets
  std::uint64_t incomplete_sets = 0;     // active camera missing or stale after output began
  std::uint64_t dropped_ticks = 0;       // skipped to catch up
  std::uint64_t lost_events = 0;
  StageTimes last;
  StageTimes total;
  double latency_us_last = 0.0;          // capture to emit
  double latency_us_total = 0.0;

  StageTimes mean() const;
  double mean_latency_us() const;
  bool operator==(const PipelineStats &) const = default;
};

namespace ctl {

enum class Role : std::uint8_t { capture, viewer };

struct Hello {
  Role role = Role::viewer;
  std::vector<CameraId> cameras; // capture nodes list the cameras they serve
  bool operator==(const Hello &) const = default;
};
struct Welcome {
  Calibration calibration;
  Timestamp server_ts = 0;
  bool operator==(const Welcome &) const = default;
};
struct ClockProbe {
  Timestamp t1 = 0;
  bool operator==(const ClockProbe &) const = default;
};
struct ClockReply {
  Timestamp t1 = 0, t2 = 0, t3 = 0;
  bool operator==(const ClockReply &) const = default;
};
struct Subscribe {
  std::vector<CameraId> camera_ids;
  bool operator==(const Subscribe &) const = default;
};
struct Unsubscribe {
  std::vector<CameraId> camera_ids;
  bool operator==(const Unsubscribe &) const = default;
};
struct Viewpoint {
  std::array<double, 12> pose{};      // row-major world-to-camera rotation, then translation
  std::array<double, 6> intrinsics{}; // fx, fy, cx, cy, width, height
  Timestamp client_ts = 0;
  bool operator==(const Viewpoint &) const = default;
};
struct SelectionReport {
  Timestamp tick_ts = 0;
  std::vector<CameraId> active;
  std::vector<CameraId> subscribed;
  bool operator==(const SelectionReport &) const = default;
};
struct Error {
  int code = 0;
  std::string text;
  bool operator==(const Error &) const = default;
};
struct Heartbeat {
  Timestamp ts = 0;
  bool operator==(const Heartbeat &) const = default;
};
struct StatsRequest {
  bool operator==(const StatsRequest &) const = default;
};
struct Stats {
  PipelineStats stats;
  bool operator==(const Stats &) const = default;
};

inline constexpr int kErrViewerSlotTaken = 1;
inline constexpr int kErrBadRequest = 2;
inline constexpr int kErrNotAllowed = 3;

} // namespace ctl

using ControlMessage = std::variant<ctl::Hello, ctl::Welcome, ctl::ClockProbe, ctl::ClockReply, ctl::Subscribe,
                                    ctl::Unsubscribe, ctl::Viewpoint, ctl::SelectionReport, ctl::Error,
                                    ctl::Heartbeat, ctl::StatsRequest, ctl::Stats>;

inline constexpr std::uint32_t kMaxControlSize = 1u << 20;

// JSON text without the length prefix (WebSocket bridge uses this directly).
std::string control_to_json(const ControlMessage &msg);
ControlMessage control_from_json(std::string_view text);

std::vector<std::uint8_t> encode_control(const ControlMessage &msg);

class ControlStreamParser {
public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<ControlMessage> next();

private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

ctl::Viewpoint viewpoint_from_camera(const CameraModel &cam, Timestamp client_ts);
CameraModel camera_from_viewpoint(const ctl::Viewpoint &vp);

// ---------------------------------------------------------------------------
// Liveness

// Tracks the last time each peer was heard from. Peers silent for longer than
// the timeout are reported once by expired() and then forgotten.
class LivenessMonitor {
public:
  using Clock = std::function<Timestamp()>;

  explicit LivenessMonitor(Clock clock, Timestamp timeout_us = 5'000'000);

  void touch(std::uint64_t peer);
  void forget(std::uint64_t peer);
  bool tracking(std::uint64_t peer) const;
  std::vector<std::uint64_t> expired();

private:
  Clock clock_;
  Timestamp timeout_us_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, Timestamp> last_seen_;
};

inline constexpr Timestamp kHeartbeatPeriodUs = 1'000'000;
inline constexpr Timestamp kPeerTimeoutUs = 5'000'000;

} // namespace fvv
