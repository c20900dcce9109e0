#include "fvv/sync.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fvv {

StreamLost::StreamLost(CameraId camera)
    : std::runtime_error("stream lost: camera " + std::to_string(camera)), camera_(camera) {}

OffsetEstimate estimate_offset(Timestamp t1, Timestamp t2, Timestamp t3, Timestamp t4) {
  if (t4 < t1) {
    throw SyncError("clock exchange: reply received before probe was sent");
  }
  const auto s1 = static_cast<std::int64_t>(t1);
  const auto s2 = static_cast<std::int64_t>(t2);
  const auto s3 = static_cast<std::int64_t>(t3);
  const auto s4 = static_cast<std::int64_t>(t4);
  const std::int64_t twice_delay = (s4 - s1) - (s3 - s2);
  if (twice_delay < 0) {
    throw SyncError("clock exchange: negative path delay");
  }
  OffsetEstimate est;
  est.offset_us = ((s2 - s1) + (s3 - s4)) / 2;
  est.delay_us = static_cast<std::uint64_t>(twice_delay / 2);
  return est;
}

Timestamp ClockModel::local_from_shared(Timestamp shared) const {
  const double drift = drift_ppm * 1e-6 * static_cast<double>(shared);
  return static_cast<Timestamp>(static_cast<std::int64_t>(shared) - offset_us -
                                static_cast<std::int64_t>(std::llround(drift)));
}

ExchangeTimestamps simulate_exchange(const ClockModel &clock, Timestamp shared_start,
                                     std::uint64_t forward_delay_us, std::uint64_t reverse_delay_us,
                                     std::uint64_t server_turnaround_us) {
  ExchangeTimestamps ex{};
  ex.t1 = clock.local_from_shared(shared_start);
  ex.t2 = shared_start + forward_delay_us;
  ex.t3 = ex.t2 + server_turnaround_us;
  ex.t4 = clock.local_from_shared(ex.t3 + reverse_delay_us);
  return ex;
}

bool FrameSet::fully_fresh() const {
  return pending.empty() && lost.empty() &&
         std::all_of(frames.begin(), frames.end(), [](const auto &kv) { return kv.second.staleness == 0; });
}

int FrameSet::max_staleness() const {
  int m = 0;
  for (const auto &[id, e] : frames) {
    m = std::max(m, e.staleness);
  }
  return m;
}

Timestamp FrameSet::fresh_spread() const {
  Timestamp lo = ~Timestamp{0};
  Timestamp hi = 0;
  for (const auto &[id, e] : frames) {
    if (e.staleness == 0) {
      lo = std::min(lo, e.frame->capture_ts);
      hi = std::max(hi, e.frame->capture_ts);
    }
  }
  return hi >= lo ? hi - lo : 0;
}

void AssemblerConfig::validate() const {
  if (period_us == 0) {
    throw SyncError("period must be positive");
  }
  if (tolerance_us * 2 > period_us) {
    throw SyncError("tolerance must not exceed half the period");
  }
  if (max_staleness < 0) {
    throw SyncError("max_staleness must be non-negative");
  }
}

FrameAssembler::FrameAssembler(AssemblerConfig config, std::set<CameraId> cameras)
    : config_(std::move(config)) {
  config_.validate();
  set_cameras(cameras);
}

void FrameAssembler::set_cameras(const std::set<CameraId> &cameras) {
  for (auto it = streams_.begin(); it != streams_.end();) {
    it = cameras.contains(it->first) ? std::next(it) : streams_.erase(it);
  }
  for (auto id : cameras) {
    streams_.try_emplace(id);
  }
}

std::set<CameraId> FrameAssembler::cameras() const {
  std::set<CameraId> ids;
  for (const auto &[id, s] : streams_) {
    ids.insert(id);
  }
  return ids;
}

bool FrameAssembler::push(FramePtr frame) {
  if (!frame) {
    return false;
  }
  const auto it = streams_.find(frame->camera_id);
  if (it == streams_.end()) {
    return false;
  }
  auto &s = it->second;
  if (s.last_pushed_ts && frame->capture_ts < *s.last_pushed_ts) {
    return false;
  }
  if (next_tick_ && s.last_emitted && frame->capture_ts + config_.tolerance_us < *next_tick_) {
    return false;
  }
  s.last_pushed_ts = frame->capture_ts;
  s.queue.push_back(std::move(frame));
  return true;
}

std::size_t FrameAssembler::queued(CameraId camera) const {
  const auto it = streams_.find(camera);
  return it == streams_.end() ? 0 : it->second.queue.size();
}

bool FrameAssembler::has_queued_frames() const {
  return std::any_of(streams_.begin(), streams_.end(), [](const auto &kv) { return !kv.second.queue.empty(); });
}

std::optional<Timestamp> FrameAssembler::initial_tick() const {
  if (streams_.empty()) {
    return std::nullopt;
  }
  Timestamp earliest = ~Timestamp{0};
  Timestamp latest_first = 0;
  for (const auto &[id, s] : streams_) {
    if (s.queue.empty()) {
      return std::nullopt;
    }
    earliest = std::min(earliest, s.queue.front()->capture_ts);
    latest_first = std::max(latest_first, s.queue.front()->capture_ts);
  }
  const auto period = static_cast<std::int64_t>(config_.period_us);
  const auto base = static_cast<std::int64_t>(config_.phase_ts.value_or(earliest));
  // Smallest grid tick whose window reaches every stream's first frame.
  const auto need = static_cast<std::int64_t>(latest_first) - static_cast<std::int64_t>(config_.tolerance_us);
  std::int64_t k = 0;
  if (need > base) {
    k = (need - base + period - 1) / period;
  } else {
    k = -((base - need) / period);
  }
  std::int64_t tick = base + k * period;
  while (tick < 0) {
    tick += period;
  }
  return static_cast<Timestamp>(tick);
}

bool FrameAssembler::decidable(const Stream &s, Timestamp tick, std::optional<Timestamp> now) const {
  if (!now) {
    return true;
  }
  // Frames arrive in order, so nothing later can beat a queued frame at or past the tick.
  if (!s.queue.empty() && s.queue.back()->capture_ts >= tick) {
    return true;
  }
  return *now >= tick + config_.tolerance_us + config_.grace_us;
}

std::optional<FrameSet> FrameAssembler::next(std::optional<Timestamp> now) {
  if (!next_tick_) {
    next_tick_ = initial_tick();
    if (!next_tick_) {
      return std::nullopt;
    }
  }
  const Timestamp tick = *next_tick_;
  const Timestamp tol = config_.tolerance_us;

  bool any_active = false;
  for (const auto &[id, s] : streams_) {
    if (!s.last_emitted && s.queue.empty()) {
      continue; // pending cameras never hold up a tick
    }
    any_active = true;
    if (!decidable(s, tick, now)) {
      return std::nullopt;
    }
  }
  if (!any_active) {
    return std::nullopt;
  }

  FrameSet set;
  set.tick_ts = tick;
  std::vector<CameraId> dropped;
  for (auto &[id, s] : streams_) {
    FramePtr too_old;
    while (!s.queue.empty() && s.queue.front()->capture_ts + tol < tick) {
      too_old = s.queue.front();
      s.queue.pop_front();
    }
    std::size_t best = s.queue.size();
    Timestamp best_dist = 0;
    for (std::size_t i = 0; i < s.queue.size(); ++i) {
      const Timestamp ts = s.queue[i]->capture_ts;
      if (ts > tick + tol) {
        break;
      }
      const Timestamp dist = ts > tick ? ts - tick : tick - ts;
      if (best == s.queue.size() || dist < best_dist) {
        best = i;
        best_dist = dist;
      }
    }

    if (best < s.queue.size()) {
      s.last_emitted = s.queue[best];
      s.staleness = 0;
      s.queue.erase(s.queue.begin(), s.queue.begin() + static_cast<std::ptrdiff_t>(best) + 1);
      set.frames[id] = {s.last_emitted, 0};
    } else if (s.last_emitted) {
      ++s.staleness;
      if (s.staleness > config_.max_staleness) {
        set.lost.push_back(id);
        dropped.push_back(id);
      } else {
        set.frames[id] = {s.last_emitted, s.staleness};
      }
    } else if (too_old) {
      s.last_emitted = too_old;
      s.staleness = 1;
      set.frames[id] = {too_old, 1};
    } else {
      set.pending.push_back(id);
    }
  }
  for (auto id : dropped) {
    streams_.erase(id);
  }
  next_tick_ = tick + config_.period_us;
  return set;
}

std::vector<FrameSet> assemble(const std::map<CameraId, std::vector<FramePtr>> &streams,
                               const AssemblerConfig &config) {
  std::set<CameraId> ids;
  for (const auto &[id, q] : streams) {
    ids.insert(id);
  }
  FrameAssembler assembler(config, ids);
  for (const auto &[id, q] : streams) {
    for (Timestamp prev = 0; const auto &f : q) {
      if (f->capture_ts < prev) {
        throw SyncError("camera " + std::to_string(id) + ": queue not ordered by capture_ts");
      }
      prev = f->capture_ts;
      assembler.push(f);
    }
  }
  std::vector<FrameSet> out;
  while (assembler.has_queued_frames()) {
    auto set = assembler.next(std::nullopt);
    if (!set) {
      break;
    }
    if (!set->lost.empty()) {
      throw StreamLost(set->lost.front());
    }
    out.push_back(std::move(*set));
  }
  return out;
}

} // namespace fvv
