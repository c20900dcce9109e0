#pragma once

#include "fvv/depth_codec.hpp"
#include "fvv/geometry.hpp"
#include "fvv/image.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

namespace fvv {

// Microseconds since the shared epoch.
using Timestamp = std::uint64_t;

class SyncError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class StreamLost : public std::runtime_error {
public:
  explicit StreamLost(CameraId camera);
  CameraId camera() const { return camera_; }

private:
  CameraId camera_;
};

// ---------------------------------------------------------------------------
// Clock offset estimation

struct OffsetEstimate {
  std::int64_t offset_us = 0; // shared clock minus local clock
  std::uint64_t delay_us = 0; // one-way path delay
};

// Two-way exchange: t1 local send, t2 remote receive, t3 remote send, t4 local receive.
// Exact when forward and reverse path delays are equal.
OffsetEstimate estimate_offset(Timestamp t1, Timestamp t2, Timestamp t3, Timestamp t4);

// A node's free-running clock relative to the shared clock:
// local(shared) = shared - offset - drift_ppm * shared / 1e6.
struct ClockModel {
  std::int64_t offset_us = 0;
  double drift_ppm = 0.0;

  Timestamp local_from_shared(Timestamp shared) const;
};

struct ExchangeTimestamps {
  Timestamp t1, t2, t3, t4;
};

// Simulates one probe/reply between a node with `clock` and the shared-clock server.
ExchangeTimestamps simulate_exchange(const ClockModel &clock, Timestamp shared_start,
                                     std::uint64_t forward_delay_us, std::uint64_t reverse_delay_us,
                                     std::uint64_t server_turnaround_us = 50);

// ---------------------------------------------------------------------------
// Frame assembly

struct TimedFrame {
  CameraId camera_id = 0;
  Timestamp capture_ts = 0; // already on the shared clock
  I420Frame color;
  PackedDepthFrame foreground_depth;
  Bitmap foreground_mask;
};

using FramePtr = std::shared_ptr<const TimedFrame>;

struct FrameSet {
  struct Entry {
    FramePtr frame;
    int staleness = 0; // number of consecutive ticks this frame has been repeated
  };

  Timestamp tick_ts = 0;
  std::map<CameraId, Entry> frames;
  // Subscribed cameras with no frame yet (joined after assembly started).
  std::vector<CameraId> pending;
  // Cameras dropped this tick for exceeding max staleness.
  std::vector<CameraId> lost;

  bool fully_fresh() const;
  int max_staleness() const;
  // Largest capture_ts difference among fresh frames.
  Timestamp fresh_spread() const;
};

struct AssemblerConfig {
  Timestamp period_us = 33333;
  Timestamp tolerance_us = 16666;
  int max_staleness = 5;
  // How long past a tick's window the assembler waits for late frames before
  // declaring them missing. Only used by the real-time path.
  Timestamp grace_us = 33333;
  // Tick grid anchor: ticks fall on phase_ts + k * period. The default anchors
  // the grid to the shared-clock epoch; std::nullopt locks it to the first
  // frame of the earliest stream instead.
  std::optional<Timestamp> phase_ts = Timestamp{0};

  void validate() const;
};

// Groups per-camera frame queues into one FrameSet per tick. Each tick picks,
// per camera, the queued frame nearest the tick time within the tolerance
// (ties go to the earlier frame). A camera with no such frame repeats its last
// emitted frame with staleness incremented; past max_staleness it is dropped
// and reported in FrameSet::lost.
//
// Not thread-safe; the owner serializes push/next.
class FrameAssembler {
public:
  explicit FrameAssembler(AssemblerConfig config, std::set<CameraId> cameras = {});

  const AssemblerConfig &config() const { return config_; }

  // Changes the subscribed set. New cameras join as pending; removed cameras
  // are forgotten along with their queued frames.
  void set_cameras(const std::set<CameraId> &cameras);
  std::set<CameraId> cameras() const;

  // Returns false if the frame was dropped (unsubscribed camera, out-of-order
  // timestamp, or already past its tick window).
  bool push(FramePtr frame);

  // Emits the next tick if it can be decided. With `now` (shared clock),
  // a camera counts as missing once now passes tick + tolerance + grace;
  // with std::nullopt every queue is treated as complete (end of input).
  std::optional<FrameSet> next(std::optional<Timestamp> now);

  bool started() const { return next_tick_.has_value(); }
  std::optional<Timestamp> next_tick() const { return next_tick_; }
  std::size_t queued(CameraId camera) const;
  bool has_queued_frames() const;

private:
  struct Stream {
    std::deque<FramePtr> queue;
    FramePtr last_emitted;
    int staleness = 0;
    std::optional<Timestamp> last_pushed_ts;
  };

  std::optional<Timestamp> initial_tick() const;
  bool decidable(const Stream &s, Timestamp tick, std::optional<Timestamp> now) const;

  AssemblerConfig config_;
  std::map<CameraId, Stream> streams_;
  std::optional<Timestamp> next_tick_;
};

// Offline assembly over complete, timestamp-ordered queues. Throws StreamLost
// when a camera exceeds max staleness.
std::vector<FrameSet> assemble(const std::map<CameraId, std::vector<FramePtr>> &streams,
                               const AssemblerConfig &config);

} // namespace fvv
