#include "fvv/transport.hpp"

#include "fvv/bytes.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>

namespace fvv {

using nlohmann::json;

const char *to_string(ProtocolErrc code) {
  switch (code) {
  case ProtocolErrc::bad_magic:
    return "bad magic";
  case ProtocolErrc::truncated:
    return "truncated";
  case ProtocolErrc::version_mismatch:
    return "version mismatch";
  case ProtocolErrc::decompression_failed:
    return "decompression failed";
  case ProtocolErrc::bad_type:
    return "bad message type";
  case ProtocolErrc::size_mismatch:
    return "size mismatch";
  case ProtocolErrc::too_large:
    return "message too large";
  case ProtocolErrc::bad_control:
    return "bad control message";
  }
  return "unknown";
}

ProtocolError::ProtocolError(ProtocolErrc code, const std::string &what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

// ---------------------------------------------------------------------------
// DEFLATE

std::vector<std::uint8_t> deflate_bytes(std::span<const std::uint8_t> in, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef *>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) {
    throw std::runtime_error("deflate failed");
  }
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, std::size_t expected_size) {
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) {
    throw ProtocolError(ProtocolErrc::decompression_failed, "inflateInit2 failed");
  }
  std::vector<std::uint8_t> out(expected_size);
  zs.next_in = const_cast<Bytef *>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  const auto leftover = zs.avail_in;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected_size || leftover != 0) {
    throw ProtocolError(ProtocolErrc::decompression_failed,
                        "inflated " + std::to_string(produced) + " of " + std::to_string(expected_size) + " bytes");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Media

std::optional<std::size_t> expected_payload_size(MediaType type, int width, int height) {
  switch (type) {
  case MediaType::color:
  case MediaType::packed_depth:
    return I420Frame::byte_size(width, height);
  case MediaType::mask:
    return Bitmap::packed_size(width, height);
  case MediaType::png:
    return std::nullopt;
  }
  return std::nullopt;
}

namespace {

bool known_type(std::uint8_t t) { return t >= 1 && t <= 4; }

struct Header {
  MediaType type;
  CameraId camera;
  Timestamp ts;
  std::uint16_t w, h, flags;
  std::uint32_t payload_len;
};

// Validates the fixed part of a header; `bytes` holds at least the full header.
Header parse_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.tag();
  if (magic != "FVVM") {
    throw ProtocolError(ProtocolErrc::bad_magic, "expected FVVM");
  }
  const auto version = r.u8();
  if (version != kMediaVersion) {
    throw ProtocolError(ProtocolErrc::version_mismatch, "version " + std::to_string(version));
  }
  const auto type = r.u8();
  if (!known_type(type)) {
    throw ProtocolError(ProtocolErrc::bad_type, "type " + std::to_string(type));
  }
  Header h{};
  h.type = static_cast<MediaType>(type);
  h.camera = r.u16();
  h.ts = r.u64();
  h.w = r.u16();
  h.h = r.u16();
  h.flags = r.u16();
  h.payload_len = r.u32();
  if (h.payload_len > kMaxPayload) {
    throw ProtocolError(ProtocolErrc::too_large, std::to_string(h.payload_len) + " byte payload");
  }
  return h;
}

void check_magic_prefix(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kMagic[4] = {'F', 'V', 'V', 'M'};
  const auto n = std::min<std::size_t>(4, bytes.size());
  if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n), kMagic)) {
    throw ProtocolError(ProtocolErrc::bad_magic, "expected FVVM");
  }
}

} // namespace

std::vector<std::uint8_t> encode_media(const MediaMessage &msg) {
  if (!known_type(static_cast<std::uint8_t>(msg.type))) {
    throw ProtocolError(ProtocolErrc::bad_type, "type " + std::to_string(static_cast<int>(msg.type)));
  }
  const auto expected = expected_payload_size(msg.type, msg.width, msg.height);
  if (expected && *expected != msg.payload.size()) {
    throw ProtocolError(ProtocolErrc::size_mismatch, "payload " + std::to_string(msg.payload.size()) +
                                                         " bytes, expected " + std::to_string(*expected));
  }
  std::vector<std::uint8_t> compressed;
  std::span<const std::uint8_t> body = msg.payload;
  if (msg.compressed()) {
    compressed = deflate_bytes(msg.payload);
    body = compressed;
  }
  if (body.size() > kMaxPayload) {
    throw ProtocolError(ProtocolErrc::too_large, std::to_string(body.size()) + " byte payload");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kMediaHeaderSize + body.size());
  ByteWriter w(out);
  w.tag("FVVM");
  w.u8(kMediaVersion);
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.u16(msg.camera_id);
  w.u64(msg.capture_ts);
  w.u16(msg.width);
  w.u16(msg.height);
  w.u16(msg.flags);
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.bytes(body);
  return out;
}

MediaMessage decode_media(std::span<const std::uint8_t> bytes, std::size_t *consumed) {
  check_magic_prefix(bytes);
  if (bytes.size() < kMediaHeaderSize) {
    throw ProtocolError(ProtocolErrc::truncated, "header has " + std::to_string(bytes.size()) + " bytes");
  }
  const Header h = parse_header(bytes);
  if (bytes.size() - kMediaHeaderSize < h.payload_len) {
    throw ProtocolError(ProtocolErrc::truncated, "payload has " + std::to_string(bytes.size() - kMediaHeaderSize) +
                                                     " of " + std::to_string(h.payload_len) + " bytes");
  }
  const auto body = bytes.subspan(kMediaHeaderSize, h.payload_len);
  MediaMessage m;
  m.type = h.type;
  m.camera_id = h.camera;
  m.capture_ts = h.ts;
  m.width = h.w;
  m.height = h.h;
  m.flags = h.flags;
  const auto expected = expected_payload_size(h.type, h.w, h.h);
  if (m.compressed()) {
    if (!expected) {
      throw ProtocolError(ProtocolErrc::bad_type, "compressed payload of unsized type");
    }
    m.payload = inflate_bytes(body, *expected);
  } else {
    m.payload.assign(body.begin(), body.end());
  }
  if (expected && m.payload.size() != *expected) {
    throw ProtocolError(ProtocolErrc::size_mismatch, "payload " + std::to_string(m.payload.size()) +
                                                         " bytes, expected " + std::to_string(*expected));
  }
  if (consumed != nullptr) {
    *consumed = kMediaHeaderSize + h.payload_len;
  }
  return m;
}

void MediaStreamParser::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<MediaMessage> MediaStreamParser::next() {
  const std::span<const std::uint8_t> avail(buf_.data() + pos_, buf_.size() - pos_);
  if (avail.empty()) {
    return std::nullopt;
  }
  check_magic_prefix(avail);
  if (avail.size() < kMediaHeaderSize) {
    return std::nullopt;
  }
  const Header h = parse_header(avail);
  if (avail.size() < kMediaHeaderSize + h.payload_len) {
    return std::nullopt;
  }
  std::size_t used = 0;
  auto msg = decode_media(avail, &used);
  pos_ += used;
  return msg;
}

std::vector<MediaMessage> frame_to_media(const TimedFrame &frame, bool compress) {
  const auto w = static_cast<std::uint16_t>(frame.color.width);
  const auto h = static_cast<std::uint16_t>(frame.color.height);
  const std::uint16_t flags = compress ? kFlagDeflate : 0;
  std::vector<MediaMessage> out(3);
  out[0] = {MediaType::color, frame.camera_id, frame.capture_ts, w, h, flags, frame.color.data};
  out[1] = {MediaType::packed_depth, frame.camera_id, frame.capture_ts, w, h, flags, frame.foreground_depth.to_i420()};
  out[2] = {MediaType::mask, frame.camera_id, frame.capture_ts, w, h, flags, frame.foreground_mask.pack()};
  return out;
}

std::optional<TimedFrame> FrameReassembler::add(MediaMessage msg) {
  const auto key = std::make_pair(msg.camera_id, msg.capture_ts);
  auto &p = parts_[key];
  switch (msg.type) {
  case MediaType::color:
    p.color = std::move(msg);
    break;
  case MediaType::packed_depth:
    p.depth = std::move(msg);
    break;
  case MediaType::mask:
    p.mask = std::move(msg);
    break;
  case MediaType::png:
    parts_.erase(key);
    throw ProtocolError(ProtocolErrc::bad_type, "png is not a capture stream");
  }
  if (!p.color || !p.depth || !p.mask) {
    return std::nullopt;
  }
  const int w = p.color->width;
  const int h = p.color->height;
  if (p.depth->width != w || p.depth->height != h || p.mask->width != w || p.mask->height != h) {
    parts_.erase(key);
    throw ProtocolError(ProtocolErrc::size_mismatch, "camera " + std::to_string(key.first) + " parts differ in size");
  }
  TimedFrame f;
  f.camera_id = key.first;
  f.capture_ts = key.second;
  f.color.width = w;
  f.color.height = h;
  f.color.data = std::move(p.color->payload);
  f.foreground_depth = PackedDepthFrame::from_i420(p.depth->payload, w, h);
  f.foreground_mask = Bitmap::unpack(p.mask->payload, w, h);
  // Parts of older frames from this camera will never complete.
  for (auto it = parts_.begin(); it != parts_.end();) {
    if (it->first.first == key.first && it->first.second <= key.second) {
      it = parts_.erase(it);
    } else {
      ++it;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Stats

StageTimes &StageTimes::operator+=(const StageTimes &o) {
  assembly_us += o.assembly_us;
  warp_us += o.warp_us;
  blend_us += o.blend_us;
  composite_us += o.composite_us;
  encode_us += o.encode_us;
  return *this;
}

StageTimes PipelineStats::mean() const {
  if (frames_synthesized == 0) {
    return {};
  }
  const double n = static_cast<double>(frames_synthesized);
  return {total.assembly_us / n, total.warp_us / n, total.blend_us / n, total.composite_us / n,
          total.encode_us / n};
}

double PipelineStats::mean_latency_us() const {
  return frames_synthesized == 0 ? 0.0 : latency_us_total / static_cast<double>(frames_synthesized);
}

// ---------------------------------------------------------------------------
// Control

namespace {

json stages_to_json(const StageTimes &s) {
  return {{"assembly_us", s.assembly_us}, {"warp_us", s.warp_us},         {"blend_us", s.blend_us},
          {"composite_us", s.composite_us}, {"encode_us", s.encode_us}};
}

StageTimes stages_from_json(const json &j) {
  return {j.at("assembly_us").get<double>(), j.at("warp_us").get<double>(), j.at("blend_us").get<double>(),
          j.at("composite_us").get<double>(), j.at("encode_us").get<double>()};
}

json stats_to_json(const PipelineStats &s) {
  return {{"ticks", s.ticks},
          {"frames_synthesized", s.frames_synthesized},
          {"stale_frames", s.stale_frames},
          {"incomplete_sets", s.incomplete_sets},
          {"dropped_ticks", s.dropped_ticks},
          {"lost_events", s.lost_events},
          {"last", stages_to_json(s.last)},
          {"total", stages_to_json(s.total)},
          {"latency_us_last", s.latency_us_last},
          {"latency_us_total", s.latency_us_total}};
}

PipelineStats stats_from_json(const json &j) {
  PipelineStats s;
  s.ticks = j.at("ticks").get<std::uint64_t>();
  s.frames_synthesized = j.at("frames_synthesized").get<std::uint64_t>();
  s.stale_frames = j.at("stale_frames").get<std::uint64_t>();
  s.incomplete_sets = j.at("incomplete_sets").get<std::uint64_t>();
  s.dropped_ticks = j.at("dropped_ticks").get<std::uint64_t>();
  s.lost_events = j.at("lost_events").get<std::uint64_t>();
  s.last = stages_from_json(j.at("last"));
  s.total = stages_from_json(j.at("total"));
  s.latency_us_last = j.at("latency_us_last").get<double>();
  s.latency_us_total = j.at("latency_us_total").get<double>();
  return s;
}

template <typename T> std::vector<T> array_of(const json &j, const char *key) {
  return j.at(key).get<std::vector<T>>();
}

json to_json(const ControlMessage &msg) {
  return std::visit(
      [](const auto &m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ctl::Hello>) {
          return {{"type", "hello"}, {"role", m.role == ctl::Role::capture ? "capture" : "viewer"},
                  {"cameras", m.cameras}};
        } else if constexpr (std::is_same_v<T, ctl::Welcome>) {
          return {{"type", "welcome"}, {"calibration", json::parse(calibration_to_json(m.calibration))},
                  {"server_ts", m.server_ts}};
        } else if constexpr (std::is_same_v<T, ctl::ClockProbe>) {
          return {{"type", "clock_probe"}, {"t1", m.t1}};
        } else if constexpr (std::is_same_v<T, ctl::ClockReply>) {
          return {{"type", "clock_reply"}, {"t1", m.t1}, {"t2", m.t2}, {"t3", m.t3}};
        } else if constexpr (std::is_same_v<T, ctl::Subscribe>) {
          return {{"type", "subscribe"}, {"camera_ids", m.camera_ids}};
        } else if constexpr (std::is_same_v<T, ctl::Unsubscribe>) {
          return {{"type", "unsubscribe"}, {"camera_ids", m.camera_ids}};
        } else if constexpr (std::is_same_v<T, ctl::Viewpoint>) {
          return {{"type", "viewpoint"}, {"pose", m.pose}, {"intrinsics", m.intrinsics}, {"client_ts", m.client_ts}};
        } else if constexpr (std::is_same_v<T, ctl::SelectionReport>) {
          return {{"type", "selection_report"}, {"tick_ts", m.tick_ts}, {"active", m.active},
                  {"subscribed", m.subscribed}};
        } else if constexpr (std::is_same_v<T, ctl::Error>) {
          return {{"type", "error"}, {"code", m.code}, {"text", m.text}};
        } else if constexpr (std::is_same_v<T, ctl::Heartbeat>) {
          return {{"type", "heartbeat"}, {"ts", m.ts}};
        } else if constexpr (std::is_same_v<T, ctl::StatsRequest>) {
          return {{"type", "stats_request"}};
        } else {
          static_assert(std::is_same_v<T, ctl::Stats>);
          return {{"type", "stats"}, {"stats", stats_to_json(m.stats)}};
        }
      },
      msg);
}

ControlMessage from_json(const json &j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "hello") {
    const auto role = j.at("role").get<std::string>();
    if (role != "capture" && role != "viewer") {
      throw ProtocolError(ProtocolErrc::bad_control, "unknown role \"" + role + "\"");
    }
    ctl::Hello m;
    m.role = role == "capture" ? ctl::Role::capture : ctl::Role::viewer;
    m.cameras = j.contains("cameras") ? array_of<CameraId>(j, "cameras") : std::vector<CameraId>{};
    return m;
  }
  if (type == "welcome") {
    return ctl::Welcome{parse_calibration(j.at("calibration").dump()), j.value<Timestamp>("server_ts", 0)};
  }
  if (type == "clock_probe") {
    return ctl::ClockProbe{j.at("t1").get<Timestamp>()};
  }
  if (type == "clock_reply") {
    return ctl::ClockReply{j.at("t1").get<Timestamp>(), j.at("t2").get<Timestamp>(), j.at("t3").get<Timestamp>()};
  }
  if (type == "subscribe") {
    return ctl::Subscribe{array_of<CameraId>(j, "camera_ids")};
  }
  if (type == "unsubscribe") {
    return ctl::Unsubscribe{array_of<CameraId>(j, "camera_ids")};
  }
  if (type == "viewpoint") {
    ctl::Viewpoint m;
    m.pose = j.at("pose").get<std::array<double, 12>>();
    m.intrinsics = j.at("intrinsics").get<std::array<double, 6>>();
    m.client_ts = j.value<Timestamp>("client_ts", 0);
    return m;
  }
  if (type == "selection_report") {
    return ctl::SelectionReport{j.value<Timestamp>("tick_ts", 0), array_of<CameraId>(j, "active"),
                                array_of<CameraId>(j, "subscribed")};
  }
  if (type == "error") {
    return ctl::Error{j.at("code").get<int>(), j.at("text").get<std::string>()};
  }
  if (type == "heartbeat") {
    return ctl::Heartbeat{j.value<Timestamp>("ts", 0)};
  }
  if (type == "stats_request") {
    return ctl::StatsRequest{};
  }
  if (type == "stats") {
    return ctl::Stats{stats_from_json(j.at("stats"))};
  }
  throw ProtocolError(ProtocolErrc::bad_control, "unknown type \"" + type + "\"");
}

} // namespace

std::string control_to_json(const ControlMessage &msg) { return to_json(msg).dump(); }

ControlMessage control_from_json(std::string_view text) {
  try {
    return from_json(json::parse(text));
  } catch (const ProtocolError &) {
    throw;
  } catch (const std::exception &e) {
    throw ProtocolError(ProtocolErrc::bad_control, e.what());
  }
}

std::vector<std::uint8_t> encode_control(const ControlMessage &msg) {
  const auto text = control_to_json(msg);
  if (text.size() > kMaxControlSize) {
    throw ProtocolError(ProtocolErrc::too_large, std::to_string(text.size()) + " byte control message");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + text.size());
  ByteWriter w(out);
  w.u32(static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

void ControlStreamParser::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<ControlMessage> ControlStreamParser::next() {
  const std::size_t avail = buf_.size() - pos_;
  if (avail < 4) {
    return std::nullopt;
  }
  ByteReader r(std::span<const std::uint8_t>(buf_.data() + pos_, 4));
  const auto len = r.u32();
  if (len > kMaxControlSize) {
    throw ProtocolError(ProtocolErrc::too_large, std::to_string(len) + " byte control message");
  }
  if (avail < 4 + static_cast<std::size_t>(len)) {
    return std::nullopt;
  }
  const std::string_view text(reinterpret_cast<const char *>(buf_.data() + pos_ + 4), len);
  pos_ += 4 + len;
  return control_from_json(text);
}

ctl::Viewpoint viewpoint_from_camera(const CameraModel &cam, Timestamp client_ts) {
  ctl::Viewpoint vp;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      vp.pose[static_cast<std::size_t>(3 * r + c)] = cam.pose.rotation(r, c);
    }
    vp.pose[static_cast<std::size_t>(9 + r)] = cam.pose.translation(r);
  }
  const auto &k = cam.intrinsics;
  vp.intrinsics = {k.fx, k.fy, k.cx, k.cy, static_cast<double>(k.width), static_cast<double>(k.height)};
  vp.client_ts = client_ts;
  return vp;
}

CameraModel camera_from_viewpoint(const ctl::Viewpoint &vp) {
  CameraModel cam;
  cam.id = kVirtualCameraId;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      cam.pose.rotation(r, c) = vp.pose[static_cast<std::size_t>(3 * r + c)];
    }
    cam.pose.translation(r) = vp.pose[static_cast<std::size_t>(9 + r)];
  }
  const auto &k = vp.intrinsics;
  cam.intrinsics = {k[0], k[1], k[2], k[3], static_cast<int>(k[4]), static_cast<int>(k[5])};
  try {
    cam.intrinsics.validate();
    cam.pose.validate();
  } catch (const GeometryError &e) {
    throw ProtocolError(ProtocolErrc::bad_control, std::string("viewpoint: ") + e.what());
  }
  return cam;
}

// ---------------------------------------------------------------------------
// Liveness

LivenessMonitor::LivenessMonitor(Clock clock, Timestamp timeout_us) : clock_(std::move(clock)), timeout_us_(timeout_us) {}

void LivenessMonitor::touch(std::uint64_t peer) {
  const auto now = clock_();
  std::lock_guard lock(mu_);
  last_seen_[peer] = now;
}

void LivenessMonitor::forget(std::uint64_t peer) {
  std::lock_guard lock(mu_);
  last_seen_.erase(peer);
}

bool LivenessMonitor::tracking(std::uint64_t peer) const {
  std::lock_guard lock(mu_);
  return last_seen_.count(peer) != 0;
}

std::vector<std::uint64_t> LivenessMonitor::expired() {
  const auto now = clock_();
  std::lock_guard lock(mu_);
  std::vector<std::uint64_t> out;
  for (auto it = last_seen_.begin(); it != last_seen_.end();) {
    if (now > it->second && now - it->second > timeout_us_) {
      out.push_back(it->first);
      it = last_seen_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

} // namespace fvv
