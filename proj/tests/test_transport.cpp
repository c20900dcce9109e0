#include "fvv/scene_sim.hpp"
#include "fvv/selection.hpp"
#include "fvv/transport.hpp"

#include <doctest.h>

#include <random>

using namespace fvv;

namespace {

MediaMessage random_message(std::mt19937 &rng) {
  std::uniform_int_distribution<int> half(1, 12);
  std::uniform_int_distribution<int> byte(0, 255);
  MediaMessage m;
  m.type = static_cast<MediaType>(1 + rng() % 4);
  m.camera_id = static_cast<CameraId>(rng());
  m.capture_ts = (static_cast<std::uint64_t>(rng()) << 32) | rng();
  m.width = static_cast<std::uint16_t>(2 * half(rng));
  m.height = static_cast<std::uint16_t>(2 * half(rng));
  const bool png = m.type == MediaType::png;
  m.flags = (!png && rng() % 2 == 0) ? kFlagDeflate : 0;
  const auto size = expected_payload_size(m.type, m.width, m.height).value_or(rng() % 300);
  m.payload.resize(size);
  // Mix runs and noise so compression sometimes helps and sometimes does not.
  const bool runs = rng() % 2 == 0;
  for (auto &b : m.payload) {
    b = static_cast<std::uint8_t>(runs ? (rng() % 8 == 0 ? byte(rng) : 7) : byte(rng));
  }
  return m;
}

ProtocolErrc decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_media(bytes);
  } catch (const ProtocolError &e) {
    return e.code();
  }
  FAIL("decode did not throw");
  return ProtocolErrc::bad_control;
}

std::vector<ControlMessage> sample_controls() {
  ctl::Viewpoint vp = viewpoint_from_camera(default_rig(64, 36)[3], 123456789);
  PipelineStats stats;
  stats.ticks = 10;
  stats.frames_synthesized = 9;
  stats.last.warp_us = 1234.5;
  stats.total.encode_us = 0.1;
  stats.latency_us_total = 3e6;
  return {ctl::Hello{ctl::Role::capture, {0, 1, 2}},
          ctl::Hello{ctl::Role::viewer, {}},
          ctl::Welcome{default_calibration(64, 36), 42},
          ctl::ClockProbe{1},
          ctl::ClockReply{1, 2, 3},
          ctl::Subscribe{{1, 2, 3, 4, 5}},
          ctl::Unsubscribe{{0}},
          vp,
          ctl::SelectionReport{99, {3, 4, 2}, {1, 2, 3, 4, 5}},
          ctl::Error{ctl::kErrViewerSlotTaken, "viewer slot taken"},
          ctl::Heartbeat{5},
          ctl::StatsRequest{},
          ctl::Stats{stats}};
}

} // namespace

TEST_CASE("minimal 2x2 color frame is a 26-byte header plus 6 bytes") {
  MediaMessage m;
  m.type = MediaType::color;
  m.camera_id = 0x0102;
  m.capture_ts = 0x1122334455667788ULL;
  m.width = 2;
  m.height = 2;
  m.payload = {10, 20, 30, 40, 128, 129};
  const auto bytes = encode_media(m);
  const std::vector<std::uint8_t> expected = {'F', 'V', 'V', 'M', 1, 1, 0x02, 0x01, 0x88, 0x77, 0x66, 0x55, 0x44,
                                              0x33, 0x22, 0x11, 2, 0, 2, 0, 0, 0, 6, 0, 0, 0,
                                              10, 20, 30, 40, 128, 129};
  CHECK(kMediaHeaderSize == 26);
  CHECK(bytes == expected);
  std::size_t used = 0;
  CHECK(decode_media(bytes, &used) == m);
  CHECK(used == bytes.size());
}

TEST_CASE("each decode failure has its own error code") {
  MediaMessage m;
  m.type = MediaType::mask;
  m.width = 16;
  m.height = 2;
  m.payload = {1, 2, 3, 4};
  const auto good = encode_media(m);

  // Bad magic is reported from the first four bytes alone.
  const std::vector<std::uint8_t> xxxx = {'X', 'X', 'X', 'X'};
  CHECK(decode_error(xxxx) == ProtocolErrc::bad_magic);
  auto bad = good;
  bad[1] = 'X';
  CHECK(decode_error(bad) == ProtocolErrc::bad_magic);

  CHECK(decode_error(std::span(good).first(10)) == ProtocolErrc::truncated);
  CHECK(decode_error(std::span(good).first(good.size() - 1)) == ProtocolErrc::truncated);

  bad = good;
  bad[4] = 2;
  CHECK(decode_error(bad) == ProtocolErrc::version_mismatch);
  bad = good;
  bad[5] = 9;
  CHECK(decode_error(bad) == ProtocolErrc::bad_type);

  // Payload length disagrees with the plane size for the dimensions.
  bad = good;
  bad[16] = 32;
  CHECK(decode_error(bad) == ProtocolErrc::size_mismatch);

  auto z = m;
  z.flags = kFlagDeflate;
  bad = encode_media(z);
  bad[kMediaHeaderSize] ^= 0xFF;
  bad.push_back(0);
  bad[22] += 1;
  CHECK(decode_error(bad) == ProtocolErrc::decompression_failed);

  bad = good;
  bad[22] = 0xFF;
  bad[25] = 0x7F;
  CHECK(decode_error(bad) == ProtocolErrc::too_large);

  m.payload.pop_back();
  CHECK_THROWS_AS(encode_media(m), ProtocolError);
}

TEST_CASE("random media messages round-trip bit-exactly") {
  std::mt19937 rng(17);
  int compressed = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto m = random_message(rng);
    compressed += m.compressed() ? 1 : 0;
    const auto bytes = encode_media(m);
    std::size_t used = 0;
    REQUIRE(decode_media(bytes, &used) == m);
    REQUIRE(used == bytes.size());
  }
  CHECK(compressed > 3000);
}

TEST_CASE("compressed and uncompressed payloads decode to the same planes") {
  std::mt19937 rng(4);
  for (int i = 0; i < 200; ++i) {
    auto m = random_message(rng);
    if (m.type == MediaType::png) {
      continue;
    }
    m.flags = 0;
    auto z = m;
    z.flags = kFlagDeflate;
    REQUIRE(decode_media(encode_media(z)).payload == decode_media(encode_media(m)).payload);
  }
}

TEST_CASE("concatenated media streams parse back at any split points") {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<MediaMessage> msgs;
    std::vector<std::uint8_t> stream;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) {
      msgs.push_back(random_message(rng));
      const auto b = encode_media(msgs.back());
      stream.insert(stream.end(), b.begin(), b.end());
    }
    MediaStreamParser parser;
    std::vector<MediaMessage> got;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      const std::size_t chunk = std::min<std::size_t>(stream.size() - pos, 1 + rng() % 97);
      parser.feed(std::span(stream).subspan(pos, chunk));
      pos += chunk;
      while (auto m = parser.next()) {
        got.push_back(std::move(*m));
      }
    }
    REQUIRE(got == msgs);
    REQUIRE(parser.buffered() == 0);
  }
}

TEST_CASE("stream parser rejects garbage at a message boundary immediately") {
  MediaStreamParser parser;
  const std::vector<std::uint8_t> junk = {'R', 'T', 'M', 'P'};
  parser.feed(std::span(junk).first(1));
  CHECK_THROWS_AS(parser.next(), ProtocolError);
}

TEST_CASE("capture frames survive the three-message split") {
  const auto calib = default_calibration(64, 36);
  const auto r = render(make_scene("default"), calib.cameras[2], calib.quantizer, 500'000);
  const auto frame = make_timed_frame(2, 500'000, r);
  for (bool compress : {false, true}) {
    FrameReassembler re;
    std::optional<TimedFrame> out;
    auto msgs = frame_to_media(frame, compress);
    std::swap(msgs[0], msgs[2]);
    for (auto &m : msgs) {
      REQUIRE_FALSE(out.has_value());
      out = re.add(decode_media(encode_media(m)));
    }
    REQUIRE(out.has_value());
    CHECK(out->camera_id == 2);
    CHECK(out->capture_ts == 500'000);
    CHECK(out->color == frame.color);
    CHECK(out->foreground_depth == frame.foreground_depth);
    CHECK(out->foreground_mask == frame.foreground_mask);
    CHECK(re.partial() == 0);
  }
}

TEST_CASE("control messages round-trip through the length-prefixed stream") {
  const auto msgs = sample_controls();
  std::vector<std::uint8_t> stream;
  for (const auto &m : msgs) {
    const auto b = encode_control(m);
    stream.insert(stream.end(), b.begin(), b.end());
  }
  std::mt19937 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    ControlStreamParser parser;
    std::vector<ControlMessage> got;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      const std::size_t chunk = std::min<std::size_t>(stream.size() - pos, 1 + rng() % 64);
      parser.feed(std::span(stream).subspan(pos, chunk));
      pos += chunk;
      while (auto m = parser.next()) {
        got.push_back(std::move(*m));
      }
    }
    REQUIRE(got == msgs);
  }
}

TEST_CASE("control json is readable and strict") {
  CHECK(control_to_json(ctl::Subscribe{{1, 2}}) == R"({"camera_ids":[1,2],"type":"subscribe"})");
  CHECK(std::get<ctl::Error>(control_from_json(R"({"type":"error","code":1,"text":"viewer slot taken"})")).code == 1);
  CHECK_THROWS_AS(control_from_json(R"({"type":"teleport"})"), ProtocolError);
  CHECK_THROWS_AS(control_from_json(R"({"type":"clock_probe"})"), ProtocolError);
  CHECK_THROWS_AS(control_from_json("not json"), ProtocolError);
  CHECK_THROWS_AS(control_from_json(R"({"type":"hello","role":"spectator"})"), ProtocolError);

  ControlStreamParser parser;
  const std::vector<std::uint8_t> huge = {0xFF, 0xFF, 0xFF, 0x7F};
  parser.feed(huge);
  CHECK_THROWS_AS(parser.next(), ProtocolError);
}

TEST_CASE("viewpoint messages carry the camera exactly") {
  std::mt19937 rng(8);
  const auto rig = default_rig(640, 360);
  for (int i = 0; i < 100; ++i) {
    const auto cam = arc_viewpoint(rig, (rng() % 1000) / 999.0, kStageTarget);
    const auto vp = std::get<ctl::Viewpoint>(control_from_json(control_to_json(viewpoint_from_camera(cam, 7))));
    const auto back = camera_from_viewpoint(vp);
    REQUIRE(back.pose == cam.pose);
    REQUIRE(back.intrinsics == cam.intrinsics);
    REQUIRE(back.id == kVirtualCameraId);
  }
  auto bad = viewpoint_from_camera(rig[0], 0);
  bad.intrinsics[4] = 3;
  CHECK_THROWS_AS(camera_from_viewpoint(bad), ProtocolError);
}

TEST_CASE("liveness: silent peers expire after five seconds of fake time") {
  Timestamp now = 0;
  LivenessMonitor mon([&] { return now; });
  mon.touch(1);
  mon.touch(2);
  // Peer 1 heartbeats every second; peer 2 is killed at t = 0.
  for (int s = 1; s <= 5; ++s) {
    now = static_cast<Timestamp>(s) * kHeartbeatPeriodUs;
    mon.touch(1);
    CHECK(mon.expired().empty());
  }
  now = 5'000'001;
  CHECK(mon.expired() == std::vector<std::uint64_t>{2});
  CHECK(mon.expired().empty());
  CHECK(mon.tracking(1));
  CHECK_FALSE(mon.tracking(2));
  now = 11'000'000;
  CHECK(mon.expired() == std::vector<std::uint64_t>{1});
}
