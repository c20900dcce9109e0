#include "fvv/edge_server.hpp"

#include <algorithm>
#include <chrono>

namespace fvv {

Timestamp wall_clock_us() {
  return static_cast<Timestamp>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

void ServerConfig::validate() const {
  try {
    assembler.validate();
  } catch (const SyncError &e) {
    throw ServerError(e.what());
  }
  if (assembler.tolerance_us * 2 > assembler.period_us) {
    throw ServerError("tolerance must not exceed half the period");
  }
  if (selection.lambda < 0 || selection.hysteresis < 0) {
    throw ServerError("selection lambda and hysteresis must not be negative");
  }
  if (synthesis.depth_epsilon < 0 || synthesis.depth_epsilon_relative < 0) {
    throw ServerError("blend epsilon must not be negative");
  }
}

BackgroundModel simulated_background(int width, int height) {
  return build_background_model(default_calibration(width, height), make_scene("empty"));
}

EdgePipeline::EdgePipeline(BackgroundModel background, ServerConfig config, Clock clock)
    : bg_(std::move(background)), config_((config.validate(), std::move(config))), clock_(std::move(clock)),
      assembler_(config_.assembler) {
  try {
    bg_.validate();
  } catch (const SynthesisError &e) {
    throw ServerError(e.what());
  }
  for (const auto &cam : bg_.calibration.cameras) {
    connected_.insert(cam.id);
  }
}

void EdgePipeline::set_viewpoint(const CameraModel &virtual_cam) {
  viewpoint_ = virtual_cam;
  viewpoint_dirty_ = true;
}

void EdgePipeline::clear_viewpoint() {
  viewpoint_.reset();
  view_.reset();
  viewpoint_dirty_ = false;
  report_pending_ = false;
  assembler_.set_cameras({});
}

void EdgePipeline::set_available(const std::set<CameraId> &cameras) {
  connected_ = cameras;
  availability_dirty_ = true;
}

void EdgePipeline::mark_lost(CameraId camera, std::optional<Timestamp> retry_at) {
  lost_[camera] = retry_at;
  availability_dirty_ = true;
}

void EdgePipeline::mark_alive(CameraId camera) {
  lost_.erase(camera);
  connected_.insert(camera);
  availability_dirty_ = true;
}

std::set<CameraId> EdgePipeline::available() const {
  std::set<CameraId> out;
  for (auto id : connected_) {
    if (bg_.calibration.find(id) != nullptr && lost_.count(id) == 0) {
      out.insert(id);
    }
  }
  return out;
}

bool EdgePipeline::ingest(FramePtr frame) { return assembler_.push(std::move(frame)); }

std::vector<CameraId> EdgePipeline::subscriptions() const {
  return view_ ? view_->subscribed : std::vector<CameraId>{};
}

std::vector<CameraId> EdgePipeline::take_lost_events() { return std::exchange(lost_events_, {}); }

bool EdgePipeline::reselect(Timestamp now) {
  for (auto it = lost_.begin(); it != lost_.end();) {
    if (it->second && *it->second <= now) {
      it = lost_.erase(it);
      availability_dirty_ = true;
    } else {
      ++it;
    }
  }
  if (!viewpoint_ || (!viewpoint_dirty_ && !availability_dirty_)) {
    return false;
  }
  viewpoint_dirty_ = false;
  availability_dirty_ = false;

  std::vector<CameraModel> eligible;
  for (auto id : available()) {
    eligible.push_back(bg_.calibration.at(id));
  }
  if (eligible.empty()) {
    const bool had = view_.has_value();
    view_.reset();
    assembler_.set_cameras({});
    return had;
  }
  auto next = select_cameras(*viewpoint_, eligible, view_, config_.selection, now);
  const bool changed = !view_ || !view_->same_selection(next);
  view_ = std::move(next);
  assembler_.set_cameras(std::set<CameraId>(view_->subscribed.begin(), view_->subscribed.end()));
  return changed;
}

std::optional<TickOutput> EdgePipeline::tick(std::optional<Timestamp> now) {
  using Clock = std::chrono::steady_clock;
  auto us = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
  };
  const auto t0 = Clock::now();
  const Timestamp wall = now.value_or(clock_());

  if (reselect(wall)) {
    report_pending_ = true;
  }
  auto set = assembler_.next(now);
  if (!set) {
    return std::nullopt;
  }
  auto handle_lost = [&](const FrameSet &s) {
    for (auto id : s.lost) {
      mark_lost(id, wall + config_.lost_retry_us);
      lost_events_.push_back(id);
      ++stats_.lost_events;
    }
  };
  handle_lost(*set);
  if (now && config_.drop_late_ticks) {
    while (auto newer = assembler_.next(now)) {
      ++stats_.ticks;
      ++stats_.dropped_ticks;
      handle_lost(*newer);
      set = std::move(newer);
    }
  }
  ++stats_.ticks;
  if (!view_) {
    return std::nullopt;
  }

  int stale_active = 0;
  for (auto id : view_->active) {
    const auto it = set->frames.find(id);
    if (it == set->frames.end()) {
      // Active camera lost or still pending: nothing consistent to synthesize.
      if (output_started_) {
        ++stats_.incomplete_sets;
      }
      return std::nullopt;
    }
    stale_active += it->second.staleness > 0 ? 1 : 0;
  }
  for (const auto &[id, e] : set->frames) {
    stats_.stale_frames += e.staleness > 0 ? 1 : 0;
  }
  if (stale_active > 0) {
    ++stats_.incomplete_sets;
  }
  const auto t1 = Clock::now();

  SynthesisTimings st;
  auto layered = synthesize(*set, *view_, bg_, config_.synthesis, &st);

  TickOutput out;
  out.tick_ts = set->tick_ts;
  out.view = *view_;
  out.selection_changed = report_pending_;
  report_pending_ = false;
  out.stale_active = stale_active;
  const auto t2 = Clock::now();
  if (config_.output == OutputEncoding::png) {
    out.encoded = encode_png(layered.final);
    out.encoded_type = MediaType::png;
  } else {
    out.encoded = layered.final.data;
    out.encoded_type = MediaType::color;
  }
  const auto t3 = Clock::now();
  out.frame = std::move(layered.final);

  out.times.assembly_us = us(t0, t1);
  out.times.warp_us = st.warp_us;
  out.times.blend_us = st.blend_us;
  out.times.composite_us = st.composite_us;
  out.times.encode_us = us(t2, t3);

  Timestamp oldest = out.tick_ts;
  for (auto id : view_->active) {
    oldest = std::min(oldest, set->frames.at(id).frame->capture_ts);
  }
  const Timestamp emit = clock_();
  stats_.latency_us_last = emit > oldest ? static_cast<double>(emit - oldest) : 0.0;
  stats_.latency_us_total += stats_.latency_us_last;
  stats_.last = out.times;
  stats_.total += out.times;
  ++stats_.frames_synthesized;
  output_started_ = true;
  last_output_tick_ = out.tick_ts;
  return out;
}

} // namespace fvv
