#pragma once

#include "fvv/calibration.hpp"
#include "fvv/depth_codec.hpp"
#include "fvv/geometry.hpp"
#include "fvv/image.hpp"
#include "fvv/sync.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvv {

// Color in the YUV domain (full range, chroma centered on 128).
struct Yuv {
  double y = 0.0;
  double u = 128.0;
  double v = 128.0;
};

// Two-color checker with soft transitions so that sub-pixel resampling does not
// produce large intensity steps. Colors are derived deterministically from `seed`.
struct CheckerTexture {
  Yuv a;
  Yuv b;
  double cell = 0.5;      // meters
  double sharpness = 2.0; // higher = crisper squares

  static CheckerTexture from_seed(std::uint32_t seed, double cell = 0.5);
  Yuv sample(double s, double t) const;
};

// Sinusoidal motion: center(t) = base + amplitude * sin(2 pi frequency t + phase).
struct Trajectory {
  Vec3 base = Vec3::Zero();
  Vec3 amplitude = Vec3::Zero();
  double frequency_hz = 0.0;
  double phase = 0.0;

  Vec3 at(double seconds) const;
};

struct Sphere {
  Trajectory center;
  double radius = 0.3;
  CheckerTexture texture;
};

struct Box {
  Trajectory center;
  Vec3 half_extent = Vec3(0.2, 0.2, 0.2);
  CheckerTexture texture;
};

// Axis-aligned room (closed box) holding the static background; six inward
// facing textured planes.
struct Room {
  Vec3 min_corner = Vec3(-7.0, 0.0, -6.0);
  Vec3 max_corner = Vec3(7.0, 4.0, 8.0);
  std::array<CheckerTexture, 6> walls; // -x, +x, -y (floor), +y, -z, +z
};

struct Scene {
  std::string name;
  Room room;
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;

  Scene without_foreground() const;
  bool has_foreground() const { return !spheres.empty() || !boxes.empty(); }
};

struct Hit {
  double t = 0.0; // ray parameter; equals camera-space z for rays with unit z component
  bool foreground = false;
  Yuv color;
};

// Nearest intersection with the scene at time `seconds`. `dir` need not be unit length.
Hit trace(const Scene &scene, const Vec3 &origin, const Vec3 &dir, double seconds);

// Known scene names: "default" (moving foreground), "static" (foreground frozen
// at t = 0), "empty" (background only).
Scene make_scene(const std::string &name);
std::vector<std::string> scene_names();

inline const Vec3 kStageTarget(0.0, 0.5, 0.0);

// Nine cameras on a 120 degree horizontal arc of radius 4 m around the stage,
// 0.5 m above the floor, all aimed at the stage center. Ids 0..8 run along the arc.
std::vector<CameraModel> default_rig(int width = 640, int height = 360, int count = 9,
                                     double radius = 4.0, double arc_degrees = 120.0);
Calibration default_calibration(int width = 640, int height = 360);

struct RenderOutput {
  I420Frame color;
  DepthMap depth;
  Bitmap fg_mask;
};

// Ray-cast render at time t (microseconds on the shared clock).
RenderOutput render(const Scene &scene, const CameraModel &cam, const DepthQuantizer &quantizer, Timestamp t);

// Unquantized camera-space depth per pixel (meters).
std::vector<double> render_depth_meters(const Scene &scene, const CameraModel &cam, Timestamp t);

// Caches the static background of one camera and re-traces only the pixels
// covered by foreground bounds each frame. Produces output identical to render().
class CameraRenderer {
public:
  CameraRenderer(const Scene &scene, CameraModel cam, DepthQuantizer quantizer);

  RenderOutput render(Timestamp t) const;
  const CameraModel &camera() const { return cam_; }

private:
  const Scene *scene_;
  CameraModel cam_;
  DepthQuantizer quantizer_;
  std::vector<Yuv> bg_color_;
  std::vector<double> bg_t_;
  DepthMap bg_depth_;
};

// Splits a render into the on-wire frame: foreground depth codes only where the
// mask is set, zero elsewhere.
TimedFrame make_timed_frame(CameraId id, Timestamp ts, const RenderOutput &r);

// ---------------------------------------------------------------------------
// Datasets
//
//   <dir>/calibration.json
//   <dir>/cam<i>/color_<tick>.i420    color file (see serialize_color)
//   <dir>/cam<i>/depth_<tick>.fvvd    packed foreground depth
//   <dir>/cam<i>/mask_<tick>.pbm      foreground mask (P4)
//   <dir>/cam<i>/background.fvvd      optional static background depth
// <tick> is zero-padded to six digits. Frame capture time is tick * period_us.

class DatasetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Calibration calibration;
  std::map<CameraId, std::vector<TimedFrame>> frames; // indexed by tick
  std::map<CameraId, DepthMap> background;            // empty if not present

  std::size_t ticks() const { return frames.empty() ? 0 : frames.begin()->second.size(); }
};

inline constexpr Timestamp kDatasetPeriodUs = 33333;

std::string tick_name(std::size_t tick);

void export_dataset(const std::filesystem::path &dir, const Dataset &dataset);
Dataset load_dataset(const std::filesystem::path &dir);

// Renders `ticks` frames of `scene` for every rig camera plus the empty-scene
// background depth.
Dataset render_dataset(const Scene &scene, const Calibration &calib, std::size_t ticks,
                       Timestamp period_us = kDatasetPeriodUs);

} // namespace fvv
