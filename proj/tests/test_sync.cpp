#include "fvv/sync.hpp"

#include <doctest.h>

#include <random>

using namespace fvv;

namespace {

FramePtr frame(CameraId cam, Timestamp ts) {
  auto f = std::make_shared<TimedFrame>();
  f->camera_id = cam;
  f->capture_ts = ts;
  return f;
}

// Nominal capture at k * period plus uniform jitter, optional i.i.d. loss.
std::map<CameraId, std::vector<FramePtr>> simulate_streams(int cameras, int ticks, Timestamp period,
                                                           std::int64_t jitter, double loss, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<std::int64_t> j(-jitter, jitter);
  std::bernoulli_distribution drop(loss);
  std::map<CameraId, std::vector<FramePtr>> streams;
  const Timestamp start = 100 * period;
  for (int c = 0; c < cameras; ++c) {
    auto &q = streams[static_cast<CameraId>(c)];
    for (int k = 0; k < ticks; ++k) {
      const Timestamp ts = start + static_cast<Timestamp>(k) * period + static_cast<Timestamp>(j(rng));
      // The first and last frames are always delivered so every run spans all ticks.
      if (k != 0 && k != ticks - 1 && drop(rng)) {
        continue;
      }
      q.push_back(frame(static_cast<CameraId>(c), ts));
    }
  }
  return streams;
}

} // namespace

TEST_CASE("estimate_offset: worked example and zero exchange") {
  auto e = estimate_offset(100, 150, 160, 130);
  CHECK(e.offset_us == 40);
  CHECK(e.delay_us == 10);
  e = estimate_offset(5, 5, 5, 5);
  CHECK(e.offset_us == 0);
  CHECK(e.delay_us == 0);
}

TEST_CASE("estimate_offset rejects malformed exchanges") {
  CHECK_THROWS_AS(estimate_offset(100, 150, 160, 90), SyncError);
  // Remote turnaround longer than the round trip => negative delay.
  CHECK_THROWS_AS(estimate_offset(100, 100, 200, 110), SyncError);
}

TEST_CASE("closed-loop exchange recovers the injected offset") {
  const ClockModel clock{2500, 0.0};
  const auto ex = simulate_exchange(clock, 5'000'000, 300, 300);
  const auto e = estimate_offset(ex.t1, ex.t2, ex.t3, ex.t4);
  CHECK(e.offset_us == 2500);
  CHECK(e.delay_us == 300);
}

TEST_CASE("symmetric delays recover every offset exactly") {
  std::mt19937 rng(99);
  std::uniform_int_distribution<std::int64_t> offset(-1'000'000, 1'000'000);
  std::uniform_int_distribution<std::uint64_t> delay(0, 20'000);
  for (int i = 0; i < 20000; ++i) {
    const ClockModel clock{offset(rng), 0.0};
    const auto d = delay(rng);
    const auto ex = simulate_exchange(clock, 10'000'000, d, d, delay(rng) % 500);
    const auto e = estimate_offset(ex.t1, ex.t2, ex.t3, ex.t4);
    REQUIRE(e.offset_us == clock.offset_us);
    REQUIRE(e.delay_us == d);
  }
  for (std::int64_t off : {std::int64_t{-1'000'000}, std::int64_t{0}, std::int64_t{1'000'000}}) {
    const auto ex = simulate_exchange({off, 0.0}, 10'000'000, 123, 123);
    CHECK(estimate_offset(ex.t1, ex.t2, ex.t3, ex.t4).offset_us == off);
  }
}

TEST_CASE("drift below 200 ppm stays far inside the tolerance between re-estimations") {
  const ClockModel clock{0, 200.0};
  const auto err = static_cast<std::int64_t>(clock.local_from_shared(1'000'000)) - 1'000'000;
  CHECK(std::llabs(err) <= 200);
}

TEST_CASE("assembler: worked three-camera tick") {
  AssemblerConfig cfg;
  cfg.phase_ts = 1'000'000;
  std::map<CameraId, std::vector<FramePtr>> streams;
  streams[0] = {frame(0, 1'000'000)};
  streams[1] = {frame(1, 1'000'400)};
  streams[2] = {frame(2, 999'800)};
  const auto sets = assemble(streams, cfg);
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].tick_ts == 1'000'000);
  CHECK(sets[0].fully_fresh());
  CHECK(sets[0].frames.size() == 3);
  CHECK(sets[0].fresh_spread() == 600);
}

TEST_CASE("assembler: ticks locked to the earliest stream when no grid is given") {
  AssemblerConfig cfg;
  cfg.phase_ts.reset();
  std::map<CameraId, std::vector<FramePtr>> streams;
  streams[0] = {frame(0, 1'000'000)};
  streams[1] = {frame(1, 1'000'400)};
  streams[2] = {frame(2, 999'800)};
  const auto sets = assemble(streams, cfg);
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].tick_ts == 999'800);
  CHECK(sets[0].fully_fresh());
}

TEST_CASE("assembler: silent camera repeats its previous frame") {
  AssemblerConfig cfg;
  cfg.phase_ts = 0;
  const Timestamp p = cfg.period_us;
  std::map<CameraId, std::vector<FramePtr>> streams;
  streams[0] = {frame(0, 0), frame(0, p), frame(0, 2 * p)};
  streams[1] = {frame(1, 0), frame(1, p), frame(1, 2 * p)};
  streams[2] = {frame(2, 0), frame(2, 2 * p)};
  const auto sets = assemble(streams, cfg);
  REQUIRE(sets.size() == 3);
  CHECK(sets[1].frames.at(2).staleness == 1);
  CHECK(sets[1].frames.at(2).frame->capture_ts == 0);
  CHECK(sets[2].frames.at(2).staleness == 0);
}

TEST_CASE("assembler: equidistant frames resolve to the earlier one") {
  AssemblerConfig cfg;
  cfg.phase_ts = 10'000;
  std::map<CameraId, std::vector<FramePtr>> streams;
  streams[0] = {frame(0, 10'000)};
  streams[1] = {frame(1, 9'000), frame(1, 11'000)};
  FrameAssembler a(cfg, {0, 1});
  for (const auto &[id, q] : streams) {
    for (const auto &f : q) {
      a.push(f);
    }
  }
  const auto set = a.next(std::nullopt);
  REQUIRE(set);
  CHECK(set->frames.at(1).frame->capture_ts == 9'000);
}

TEST_CASE("assembler: exceeding max staleness raises stream lost") {
  AssemblerConfig cfg;
  const Timestamp p = cfg.period_us;
  std::map<CameraId, std::vector<FramePtr>> streams;
  for (int k = 0; k < 10; ++k) {
    streams[0].push_back(frame(0, k * p));
  }
  streams[1] = {frame(1, 0)};
  try {
    assemble(streams, cfg);
    FAIL("expected StreamLost");
  } catch (const StreamLost &e) {
    CHECK(e.camera() == 1);
  }
}

TEST_CASE("assembler: no set before every camera produced a frame") {
  AssemblerConfig cfg;
  FrameAssembler a(cfg, {0, 1});
  a.push(frame(0, 0));
  CHECK_FALSE(a.next(1'000'000'000).has_value());
  a.push(frame(1, 100));
  CHECK(a.next(1'000'000'000).has_value());
}

TEST_CASE("assembler: real-time path waits for late frames until the grace period") {
  AssemblerConfig cfg;
  const Timestamp p = cfg.period_us;
  FrameAssembler a(cfg, {0, 1});
  a.push(frame(0, 0));
  a.push(frame(1, 0));
  auto set = a.next(0);
  REQUIRE(set);
  CHECK(set->fully_fresh());

  a.push(frame(0, p));
  // Camera 1 has nothing newer than tick p yet: undecided until the deadline.
  CHECK_FALSE(a.next(p + cfg.tolerance_us).has_value());
  set = a.next(p + cfg.tolerance_us + cfg.grace_us);
  REQUIRE(set);
  CHECK(set->tick_ts == p);
  CHECK(set->frames.at(1).staleness == 1);
  CHECK(set->frames.at(0).staleness == 0);
}

TEST_CASE("assembler: cameras added mid-stream stay pending until they deliver") {
  AssemblerConfig cfg;
  const Timestamp p = cfg.period_us;
  FrameAssembler a(cfg, {0});
  a.push(frame(0, 0));
  REQUIRE(a.next(std::nullopt));
  a.set_cameras({0, 1});
  a.push(frame(0, p));
  auto set = a.next(std::nullopt);
  REQUIRE(set);
  CHECK(set->pending == std::vector<CameraId>{1});
  CHECK_FALSE(set->fully_fresh());
  a.push(frame(0, 2 * p));
  a.push(frame(1, 2 * p + 100));
  set = a.next(std::nullopt);
  REQUIRE(set);
  CHECK(set->pending.empty());
  CHECK(set->fully_fresh());

  CHECK_FALSE(a.push(frame(7, 3 * p))); // unsubscribed
  a.push(frame(0, 3 * p));
  CHECK_FALSE(a.push(frame(0, 2 * p))); // out of order
}

TEST_CASE("assembler: jitter below tolerance yields only fresh sets") {
  AssemblerConfig cfg;
  const auto streams = simulate_streams(3, 1000, cfg.period_us, 10'000, 0.0, 1);
  const auto sets = assemble(streams, cfg);
  REQUIRE(sets.size() == 1000);
  std::size_t fresh = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    fresh += sets[i].fully_fresh() ? 1 : 0;
    REQUIRE(sets[i].fresh_spread() <= 2 * cfg.tolerance_us);
    if (i > 0) {
      REQUIRE(sets[i].tick_ts == sets[i - 1].tick_ts + cfg.period_us);
    }
  }
  CHECK(fresh == sets.size());
}

TEST_CASE("assembler: property - any jitter under tolerance gives fresh sets") {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    AssemblerConfig cfg;
    cfg.period_us = 10'000 + rng() % 40'000;
    cfg.tolerance_us = cfg.period_us / 2;
    const auto jitter = static_cast<std::int64_t>(rng() % cfg.tolerance_us);
    const auto streams = simulate_streams(1 + static_cast<int>(rng() % 9), 200, cfg.period_us, jitter, 0.0, rng());
    for (const auto &set : assemble(streams, cfg)) {
      REQUIRE(set.fully_fresh());
      REQUIRE(set.fresh_spread() <= 2 * cfg.tolerance_us);
    }
  }
}

TEST_CASE("assembler: one percent loss keeps staleness at most one in 99% of sets") {
  AssemblerConfig cfg;
  const auto streams = simulate_streams(9, 1000, cfg.period_us, 10'000, 0.01, 5);
  const auto sets = assemble(streams, cfg);
  REQUIRE(sets.size() == 1000);
  std::size_t ok = 0;
  for (const auto &s : sets) {
    CHECK(s.frames.size() == 9);
    ok += s.max_staleness() <= 1 ? 1 : 0;
  }
  CHECK(static_cast<double>(ok) / static_cast<double>(sets.size()) >= 0.99);
}

TEST_CASE("assembler config validation") {
  AssemblerConfig cfg;
  cfg.tolerance_us = cfg.period_us;
  CHECK_THROWS_AS(cfg.validate(), SyncError);
  cfg.tolerance_us = 0;
  cfg.period_us = 0;
  CHECK_THROWS_AS(cfg.validate(), SyncError);
}
