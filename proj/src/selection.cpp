#include "fvv/selection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fvv {

double camera_distance(const CameraModel &virtual_cam, const CameraModel &ref, double lambda) {
  const double center_dist = (virtual_cam.pose.center() - ref.pose.center()).norm();
  const double cos_angle = std::clamp(virtual_cam.pose.optical_axis().dot(ref.pose.optical_axis()), -1.0, 1.0);
  return center_dist + lambda * std::acos(cos_angle);
}

namespace {

struct Ranked {
  CameraId id;
  double distance;
};

bool closer(const Ranked &a, const Ranked &b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

} // namespace

ViewState select_cameras(const CameraModel &virtual_cam, std::span<const CameraModel> rig,
                         const std::optional<ViewState> &prev, const SelectionParams &params, Timestamp now) {
  if (rig.empty()) {
    throw std::invalid_argument("select_cameras: empty rig");
  }
  std::vector<Ranked> ranked;
  ranked.reserve(rig.size());
  for (const auto &cam : rig) {
    ranked.push_back({cam.id, camera_distance(virtual_cam, cam, params.lambda)});
  }
  std::sort(ranked.begin(), ranked.end(), closer);

  const std::size_t n_active = std::min(kActiveCameras, ranked.size());
  const std::size_t n_sub = std::min(kSubscribedCameras, ranked.size());

  std::map<CameraId, double> dist;
  for (const auto &r : ranked) {
    dist[r.id] = r.distance;
  }

  // Incumbents that are still in the rig, then top up from the ranking.
  std::vector<Ranked> active;
  if (prev) {
    for (auto id : prev->active) {
      const auto it = dist.find(id);
      if (it != dist.end() && active.size() < n_active) {
        active.push_back({id, it->second});
      }
    }
  }
  auto is_active = [&](CameraId id) {
    return std::any_of(active.begin(), active.end(), [&](const Ranked &r) { return r.id == id; });
  };
  for (const auto &r : ranked) {
    if (active.size() >= n_active) {
      break;
    }
    if (!is_active(r.id)) {
      active.push_back(r);
    }
  }

  // Swap the worst incumbent for the best challenger while the challenger wins
  // by more than the hysteresis margin.
  const double h = std::max(0.0, params.hysteresis);
  for (;;) {
    auto worst = std::max_element(active.begin(), active.end(), closer);
    const auto challenger = std::find_if(ranked.begin(), ranked.end(), [&](const Ranked &r) { return !is_active(r.id); });
    if (worst == active.end() || challenger == ranked.end()) {
      break;
    }
    const double gain = worst->distance - challenger->distance;
    const bool swap = gain > h || (h == 0.0 && closer(*challenger, *worst));
    if (!swap) {
      break;
    }
    *worst = *challenger;
  }
  std::sort(active.begin(), active.end(), closer);

  // Five nearest, forced to include the active set by dropping the farthest
  // non-active entries.
  std::vector<Ranked> subscribed(active.begin(), active.end());
  for (const auto &r : ranked) {
    if (subscribed.size() >= n_sub) {
      break;
    }
    if (!is_active(r.id)) {
      subscribed.push_back(r);
    }
  }

  ViewState out;
  out.virtual_camera = virtual_cam;
  out.last_update_ts = now;
  for (const auto &r : active) {
    out.active.push_back(r.id);
    out.active_distances.push_back(r.distance);
  }
  for (const auto &r : subscribed) {
    out.subscribed.push_back(r.id);
  }
  std::sort(out.subscribed.begin(), out.subscribed.end());
  return out;
}

CameraModel arc_viewpoint(std::span<const CameraModel> rig, double s, const Vec3 &target) {
  if (rig.empty()) {
    throw std::invalid_argument("arc_viewpoint: empty rig");
  }
  std::vector<const CameraModel *> ordered;
  for (const auto &c : rig) {
    ordered.push_back(&c);
  }
  std::sort(ordered.begin(), ordered.end(), [](auto *a, auto *b) { return a->id < b->id; });

  s = std::clamp(s, 0.0, 1.0);
  CameraModel out = *ordered.front();
  out.id = 0xFFFF;
  if (ordered.size() == 1) {
    return out;
  }
  const double pos = s * static_cast<double>(ordered.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), ordered.size() - 2);
  const double t = pos - static_cast<double>(i);
  if (t == 0.0) {
    out.pose = ordered[i]->pose;
    out.intrinsics = ordered[i]->intrinsics;
    return out;
  }
  if (t == 1.0) {
    out.pose = ordered[i + 1]->pose;
    out.intrinsics = ordered[i + 1]->intrinsics;
    return out;
  }
  const Vec3 center = (1.0 - t) * ordered[i]->pose.center() + t * ordered[i + 1]->pose.center();
  out.pose = CameraPose::look_at(center, target);
  return out;
}

} // namespace fvv
