#pragma once

#include "fvv/geometry.hpp"
#include "fvv/sync.hpp"

#include <optional>
#include <span>
#include <vector>

namespace fvv {

inline constexpr std::size_t kActiveCameras = 3;
inline constexpr std::size_t kSubscribedCameras = 5;

struct SelectionParams {
  double lambda = 1.0;     // meters per radian of optical-axis angle
  double hysteresis = 0.1; // meters
};

struct ViewState {
  CameraModel virtual_camera;
  std::vector<CameraId> active;           // ascending distance, at most 3
  std::vector<double> active_distances;   // parallel to `active`
  std::vector<CameraId> subscribed;       // ascending id, at most 5, superset of active
  Timestamp last_update_ts = 0;

  bool same_selection(const ViewState &o) const {
    return active == o.active && subscribed == o.subscribed;
  }
};

// Center distance plus lambda times the angle between optical axes.
double camera_distance(const CameraModel &virtual_cam, const CameraModel &ref, double lambda = 1.0);

// Picks the three closest cameras (with hysteresis against `prev`) and the
// five to keep streaming. Throws std::invalid_argument on an empty rig.
ViewState select_cameras(const CameraModel &virtual_cam, std::span<const CameraModel> rig,
                         const std::optional<ViewState> &prev, const SelectionParams &params = {},
                         Timestamp now = 0);

// Virtual camera on the piecewise-linear path through the rig's centers
// (cameras ordered by id, camera i at s = i / (n - 1)), looking at `target`.
CameraModel arc_viewpoint(std::span<const CameraModel> rig, double s, const Vec3 &target);

} // namespace fvv
