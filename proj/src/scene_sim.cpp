#include "fvv/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <set>

namespace fvv {

namespace {

constexpr double kEpsilon = 1e-9;

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L));
}

} // namespace

CheckerTexture CheckerTexture::from_seed(std::uint32_t seed, double cell) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> luma(50.0, 110.0);
  std::uniform_real_distribution<double> contrast(45.0, 75.0);
  std::uniform_real_distribution<double> chroma(96.0, 160.0);
  CheckerTexture tex;
  tex.a = {luma(rng), chroma(rng), chroma(rng)};
  tex.b = {std::min(235.0, tex.a.y + contrast(rng)), chroma(rng), chroma(rng)};
  tex.cell = cell;
  return tex;
}

Yuv CheckerTexture::sample(double s, double t) const {
  const double k = std::numbers::pi / cell;
  const double w = 0.5 + 0.5 * std::tanh(sharpness * std::sin(k * s) * std::sin(k * t));
  return {a.y + (b.y - a.y) * w, a.u + (b.u - a.u) * w, a.v + (b.v - a.v) * w};
}

Vec3 Trajectory::at(double seconds) const {
  return base + amplitude * std::sin(2.0 * std::numbers::pi * frequency_hz * seconds + phase);
}

Scene Scene::without_foreground() const {
  Scene s = *this;
  s.spheres.clear();
  s.boxes.clear();
  return s;
}

namespace {

// Exit point of a ray starting inside the room.
bool hit_room(const Room &room, const Vec3 &o, const Vec3 &d, Hit &hit) {
  double best = std::numeric_limits<double>::infinity();
  int wall = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < kEpsilon) {
      continue;
    }
    const bool positive = d[a] > 0.0;
    const double plane = positive ? room.max_corner[a] : room.min_corner[a];
    const double t = (plane - o[a]) / d[a];
    if (t > kEpsilon && t < best) {
      best = t;
      wall = 2 * a + (positive ? 1 : 0);
    }
  }
  if (wall < 0) {
    return false;
  }
  const Vec3 p = o + best * d;
  const int axis = wall / 2;
  const int s_axis = (axis + 1) % 3;
  const int t_axis = (axis + 2) % 3;
  hit.t = best;
  hit.foreground = false;
  hit.color = room.walls[static_cast<std::size_t>(wall)].sample(p[s_axis], p[t_axis]);
  return true;
}

bool hit_sphere(const Sphere &sphere, const Vec3 &center, const Vec3 &o, const Vec3 &d, double t_max, Hit &hit) {
  const Vec3 oc = o - center;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) {
    return false;
  }
  const double t = (-b - std::sqrt(disc)) / a;
  if (t <= kEpsilon || t >= t_max) {
    return false;
  }
  const Vec3 p = o + t * d - center;
  const double lon = std::atan2(p.z(), p.x()) * sphere.radius;
  const double lat = std::asin(std::clamp(p.y() / sphere.radius, -1.0, 1.0)) * sphere.radius;
  hit.t = t;
  hit.foreground = true;
  hit.color = sphere.texture.sample(lon, lat);
  return true;
}

bool hit_box(const Box &box, const Vec3 &center, const Vec3 &o, const Vec3 &d, double t_max, Hit &hit) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double lo = center[a] - box.half_extent[a];
    const double hi = center[a] + box.half_extent[a];
    if (std::abs(d[a]) < kEpsilon) {
      if (o[a] < lo || o[a] > hi) {
        return false;
      }
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) {
      std::swap(t0, t1);
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || t_near <= kEpsilon || t_near >= t_max) {
    return false;
  }
  const Vec3 p = o + t_near * d - center;
  hit.t = t_near;
  hit.foreground = true;
  hit.color = box.texture.sample(p[(axis + 1) % 3], p[(axis + 2) % 3]);
  return true;
}

bool hit_foreground(const Scene &scene, const Vec3 &o, const Vec3 &d, double seconds, double t_max, Hit &hit) {
  bool any = false;
  for (const auto &s : scene.spheres) {
    if (hit_sphere(s, s.center.at(seconds), o, d, t_max, hit)) {
      t_max = hit.t;
      any = true;
    }
  }
  for (const auto &b : scene.boxes) {
    if (hit_box(b, b.center.at(seconds), o, d, t_max, hit)) {
      t_max = hit.t;
      any = true;
    }
  }
  return any;
}

Vec3 pixel_ray(const CameraModel &cam, int x, int y) {
  const auto &k = cam.intrinsics;
  const Vec3 d_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
  return cam.pose.rotation.transpose() * d_cam;
}

double to_seconds(Timestamp t) { return static_cast<double>(t) * 1e-6; }

// Y per pixel, chroma averaged over each 2x2 cell.
I420Frame to_i420(const std::vector<Yuv> &px, int w, int h) {
  I420Frame f(w, h);
  auto y = f.y();
  auto u = f.u();
  auto v = f.v();
  for (std::size_t i = 0; i < px.size(); ++i) {
    y[i] = to_byte(px[i].y);
  }
  const int cw = w / 2;
  for (int cy = 0; cy < h / 2; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      double su = 0.0;
      double sv = 0.0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const auto &p = px[static_cast<std::size_t>(2 * cy + dy) * w + 2 * cx + dx];
          su += p.u;
          sv += p.v;
        }
      }
      u[static_cast<std::size_t>(cy) * cw + cx] = to_byte(su / 4.0);
      v[static_cast<std::size_t>(cy) * cw + cx] = to_byte(sv / 4.0);
    }
  }
  return f;
}

} // namespace

Hit trace(const Scene &scene, const Vec3 &origin, const Vec3 &dir, double seconds) {
  Hit hit;
  if (!hit_room(scene.room, origin, dir, hit)) {
    hit.t = 0.0;
    return hit;
  }
  Hit fg;
  if (hit_foreground(scene, origin, dir, seconds, hit.t, fg)) {
    return fg;
  }
  return hit;
}

Scene make_scene(const std::string &name) {
  Scene scene;
  scene.name = name;
  for (std::size_t i = 0; i < scene.room.walls.size(); ++i) {
    scene.room.walls[i] = CheckerTexture::from_seed(static_cast<std::uint32_t>(101 + i), 0.5);
  }
  if (name == "empty") {
    return scene;
  }
  if (name != "default" && name != "static") {
    throw std::invalid_argument("unknown scene '" + name + "'");
  }
  const bool moving = name == "default";

  Sphere big;
  big.center = {Vec3(-0.4, 0.75, 0.3), Vec3(0.4, 0.0, 0.0), moving ? 0.25 : 0.0, 0.0};
  big.radius = 0.35;
  big.texture = CheckerTexture::from_seed(7, 0.15);
  scene.spheres.push_back(big);

  Sphere small;
  small.center = {Vec3(0.6, 1.0, -0.3), Vec3(0.0, 0.2, 0.3), moving ? 0.4 : 0.0, 0.5};
  small.radius = 0.25;
  small.texture = CheckerTexture::from_seed(8, 0.12);
  scene.spheres.push_back(small);

  Box box;
  box.center = {Vec3(0.2, 0.5, 0.8), Vec3(0.3, 0.0, 0.0), moving ? 0.2 : 0.0, 1.0};
  box.half_extent = Vec3(0.2, 0.35, 0.2);
  box.texture = CheckerTexture::from_seed(9, 0.15);
  scene.boxes.push_back(box);
  return scene;
}

std::vector<std::string> scene_names() { return {"default", "static", "empty"}; }

std::vector<CameraModel> default_rig(int width, int height, int count, double radius, double arc_degrees) {
  CameraIntrinsics k;
  k.fx = k.fy = 0.78125 * width;
  k.cx = (width - 1) / 2.0;
  k.cy = (height - 1) / 2.0;
  k.width = width;
  k.height = height;
  k.validate();

  std::vector<CameraModel> rig;
  const double arc = arc_degrees * std::numbers::pi / 180.0;
  for (int i = 0; i < count; ++i) {
    const double phi = count == 1 ? 0.0 : -arc / 2.0 + arc * i / (count - 1);
    const Vec3 center(radius * std::sin(phi), kStageTarget.y(), -radius * std::cos(phi));
    CameraModel cam;
    cam.id = static_cast<CameraId>(i);
    cam.intrinsics = k;
    cam.pose = CameraPose::look_at(center, kStageTarget);
    rig.push_back(cam);
  }
  return rig;
}

Calibration default_calibration(int width, int height) {
  Calibration calib;
  calib.cameras = default_rig(width, height);
  calib.quantizer = DepthQuantizer(0.5, 20.0);
  return calib;
}

RenderOutput render(const Scene &scene, const CameraModel &cam, const DepthQuantizer &quantizer, Timestamp t) {
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  const double seconds = to_seconds(t);
  const Vec3 origin = cam.pose.center();

  std::vector<Yuv> px(static_cast<std::size_t>(w) * h);
  RenderOutput out;
  out.depth = DepthMap(w, h);
  out.fg_mask = Bitmap(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Hit hit = trace(scene, origin, pixel_ray(cam, x, y), seconds);
      const auto i = static_cast<std::size_t>(y) * w + x;
      px[i] = hit.color;
      out.depth.codes[i] = quantizer.quantize(hit.t);
      out.fg_mask.bits[i] = hit.foreground ? 1 : 0;
    }
  }
  out.color = to_i420(px, w, h);
  return out;
}

std::vector<double> render_depth_meters(const Scene &scene, const CameraModel &cam, Timestamp t) {
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  const Vec3 origin = cam.pose.center();
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] = trace(scene, origin, pixel_ray(cam, x, y), to_seconds(t)).t;
    }
  }
  return out;
}

CameraRenderer::CameraRenderer(const Scene &scene, CameraModel cam, DepthQuantizer quantizer)
    : scene_(&scene), cam_(std::move(cam)), quantizer_(quantizer) {
  const int w = cam_.intrinsics.width;
  const int h = cam_.intrinsics.height;
  const Vec3 origin = cam_.pose.center();
  bg_color_.resize(static_cast<std::size_t>(w) * h);
  bg_t_.resize(bg_color_.size());
  bg_depth_ = DepthMap(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Hit hit;
      const auto i = static_cast<std::size_t>(y) * w + x;
      if (hit_room(scene.room, origin, pixel_ray(cam_, x, y), hit)) {
        bg_color_[i] = hit.color;
        bg_t_[i] = hit.t;
      } else {
        bg_t_[i] = 0.0;
      }
      bg_depth_.codes[i] = quantizer_.quantize(bg_t_[i]);
    }
  }
}

RenderOutput CameraRenderer::render(Timestamp t) const {
  const int w = cam_.intrinsics.width;
  const int h = cam_.intrinsics.height;
  const double seconds = to_seconds(t);
  const auto &k = cam_.intrinsics;

  // Screen-space bounds of every foreground primitive's bounding sphere.
  int x0 = w;
  int y0 = h;
  int x1 = -1;
  int y1 = -1;
  auto include = [&](const Vec3 &world_center, double r) {
    const Vec3 c = cam_.pose.to_camera(world_center);
    if (c.z() - r <= 0.05) {
      x0 = 0;
      y0 = 0;
      x1 = w - 1;
      y1 = h - 1;
      return;
    }
    const double zs[2] = {c.z() - r, c.z() + r};
    double umin = std::numeric_limits<double>::infinity();
    double umax = -umin;
    double vmin = umin;
    double vmax = -umin;
    for (double z : zs) {
      for (double sx : {-r, r}) {
        umin = std::min(umin, k.fx * (c.x() + sx) / z + k.cx);
        umax = std::max(umax, k.fx * (c.x() + sx) / z + k.cx);
      }
      for (double sy : {-r, r}) {
        vmin = std::min(vmin, k.fy * (c.y() + sy) / z + k.cy);
        vmax = std::max(vmax, k.fy * (c.y() + sy) / z + k.cy);
      }
    }
    x0 = std::min(x0, static_cast<int>(std::max(0.0, std::floor(umin) - 2)));
    y0 = std::min(y0, static_cast<int>(std::max(0.0, std::floor(vmin) - 2)));
    x1 = std::max(x1, static_cast<int>(std::min(w - 1.0, std::ceil(umax) + 2)));
    y1 = std::max(y1, static_cast<int>(std::min(h - 1.0, std::ceil(vmax) + 2)));
  };
  for (const auto &s : scene_->spheres) {
    include(s.center.at(seconds), s.radius);
  }
  for (const auto &b : scene_->boxes) {
    include(b.center.at(seconds), b.half_extent.norm());
  }

  std::vector<Yuv> px = bg_color_;
  RenderOutput out;
  out.depth = bg_depth_;
  out.fg_mask = Bitmap(w, h);
  const Vec3 origin = cam_.pose.center();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      if (bg_t_[i] <= 0.0) {
        continue;
      }
      Hit fg;
      if (hit_foreground(*scene_, origin, pixel_ray(cam_, x, y), seconds, bg_t_[i], fg)) {
        px[i] = fg.color;
        out.depth.codes[i] = quantizer_.quantize(fg.t);
        out.fg_mask.bits[i] = 1;
      }
    }
  }
  out.color = to_i420(px, w, h);
  return out;
}

TimedFrame make_timed_frame(CameraId id, Timestamp ts, const RenderOutput &r) {
  TimedFrame f;
  f.camera_id = id;
  f.capture_ts = ts;
  f.color = r.color;
  f.foreground_mask = r.fg_mask;
  DepthMap fg(r.depth.width, r.depth.height);
  for (std::size_t i = 0; i < fg.codes.size(); ++i) {
    fg.codes[i] = r.fg_mask.bits[i] != 0 ? r.depth.codes[i] : 0;
  }
  f.foreground_depth = pack_depth(fg);
  return f;
}

// ---------------------------------------------------------------------------
// Datasets

std::string tick_name(std::size_t tick) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", tick);
  return buf;
}

namespace {

std::filesystem::path camera_dir(const std::filesystem::path &dir, CameraId id) {
  return dir / ("cam" + std::to_string(id));
}

std::string where(CameraId cam, std::size_t tick) {
  return "camera " + std::to_string(cam) + ", tick " + std::to_string(tick);
}

} // namespace

void export_dataset(const std::filesystem::path &dir, const Dataset &dataset) {
  std::filesystem::create_directories(dir);
  save_calibration(dataset.calibration, dir / "calibration.json");
  for (const auto &cam : dataset.calibration.cameras) {
    const auto cdir = camera_dir(dir, cam.id);
    std::filesystem::create_directories(cdir);
    const auto it = dataset.frames.find(cam.id);
    if (it != dataset.frames.end()) {
      for (std::size_t tick = 0; tick < it->second.size(); ++tick) {
        const auto &f = it->second[tick];
        const auto name = tick_name(tick);
        const auto idx = static_cast<std::uint32_t>(tick);
        write_file(cdir / ("color_" + name + ".i420"), serialize_color(f.color, idx));
        write_file(cdir / ("depth_" + name + ".fvvd"), serialize_packed_depth(f.foreground_depth, idx));
        write_file(cdir / ("mask_" + name + ".pbm"), serialize_pbm(f.foreground_mask));
      }
    }
    const auto bg = dataset.background.find(cam.id);
    if (bg != dataset.background.end()) {
      write_file(cdir / "background.fvvd", serialize_packed_depth(pack_depth(bg->second), 0));
    }
  }
}

Dataset load_dataset(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DatasetError("dataset directory " + dir.string() + " does not exist");
  }
  const auto calib_path = dir / "calibration.json";
  if (!std::filesystem::exists(calib_path)) {
    throw DatasetError("no calibration file in " + dir.string());
  }
  Dataset ds;
  try {
    ds.calibration = load_calibration(calib_path);
  } catch (const CalibrationError &e) {
    throw DatasetError(e.what());
  }

  std::optional<std::size_t> ticks;
  for (const auto &cam : ds.calibration.cameras) {
    const auto cdir = camera_dir(dir, cam.id);
    if (!std::filesystem::is_directory(cdir)) {
      throw DatasetError("missing frame folder for camera " + std::to_string(cam.id));
    }
    std::size_t n = 0;
    while (std::filesystem::exists(cdir / ("color_" + tick_name(n) + ".i420"))) {
      ++n;
    }
    if (!ticks) {
      ticks = n;
    }
    const int w = cam.intrinsics.width;
    const int h = cam.intrinsics.height;
    auto &frames = ds.frames[cam.id];
    for (std::size_t tick = 0; tick < *ticks; ++tick) {
      const auto name = tick_name(tick);
      const auto color_path = cdir / ("color_" + name + ".i420");
      const auto depth_path = cdir / ("depth_" + name + ".fvvd");
      const auto mask_path = cdir / ("mask_" + name + ".pbm");
      for (const auto &p : {color_path, depth_path, mask_path}) {
        if (!std::filesystem::exists(p)) {
          throw DatasetError(where(cam.id, tick) + ": missing " + p.filename().string());
        }
      }
      TimedFrame f;
      f.camera_id = cam.id;
      f.capture_ts = tick * kDatasetPeriodUs;
      try {
        f.color = parse_color(read_file(color_path));
        f.foreground_depth = parse_packed_depth(read_file(depth_path));
        f.foreground_mask = parse_pbm(read_file(mask_path));
      } catch (const std::exception &e) {
        throw DatasetError(where(cam.id, tick) + ": " + e.what());
      }
      if (f.color.width != w || f.color.height != h || f.foreground_depth.width != w ||
          f.foreground_depth.height != h || f.foreground_mask.width != w || f.foreground_mask.height != h) {
        throw DatasetError(where(cam.id, tick) + ": frame dimensions do not match calibration " +
                           std::to_string(w) + "x" + std::to_string(h));
      }
      frames.push_back(std::move(f));
    }
    if (std::filesystem::exists(cdir / ("color_" + tick_name(*ticks) + ".i420"))) {
      throw DatasetError("camera " + std::to_string(cam.id) + ": more ticks than camera " +
                         std::to_string(ds.calibration.cameras.front().id));
    }
    const auto bg_path = cdir / "background.fvvd";
    if (std::filesystem::exists(bg_path)) {
      try {
        auto bg = unpack_depth(parse_packed_depth(read_file(bg_path)));
        if (bg.width != w || bg.height != h) {
          throw DatasetError("dimension mismatch");
        }
        ds.background[cam.id] = std::move(bg);
      } catch (const std::exception &e) {
        throw DatasetError("camera " + std::to_string(cam.id) + ", background: " + e.what());
      }
    }
  }
  return ds;
}

Dataset render_dataset(const Scene &scene, const Calibration &calib, std::size_t ticks, Timestamp period_us) {
  Dataset ds;
  ds.calibration = calib;
  const Scene empty = scene.without_foreground();
  for (const auto &cam : calib.cameras) {
    CameraRenderer renderer(scene, cam, calib.quantizer);
    auto &frames = ds.frames[cam.id];
    for (std::size_t tick = 0; tick < ticks; ++tick) {
      const Timestamp ts = tick * period_us;
      frames.push_back(make_timed_frame(cam.id, ts, renderer.render(ts)));
    }
    ds.background[cam.id] = render(empty, cam, calib.quantizer, 0).depth;
  }
  return ds;
}

} // namespace fvv
