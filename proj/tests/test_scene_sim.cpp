#include "fvv/scene_sim.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace fvv;

namespace {

Scene wall_scene(double wall_z) {
  Scene s = make_scene("empty");
  s.room.min_corner = Vec3(-100, -100, -1);
  s.room.max_corner = Vec3(100, 100, wall_z);
  return s;
}

CameraModel forward_camera(int w = 100, int h = 60) {
  CameraModel cam;
  cam.id = 0;
  cam.intrinsics = {80.0, 80.0, w / 2.0, h / 2.0, w, h};
  return cam;
}

std::filesystem::path temp_dir(const std::string &name) {
  auto p = std::filesystem::temp_directory_path() / ("fvv_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

bool frames_equal(const TimedFrame &a, const TimedFrame &b) {
  return a.camera_id == b.camera_id && a.capture_ts == b.capture_ts && a.color == b.color &&
         a.foreground_depth == b.foreground_depth && a.foreground_mask == b.foreground_mask;
}

} // namespace

TEST_CASE("fronto-parallel wall renders a constant depth code") {
  const DepthQuantizer q(0.5, 20.0);
  const auto out = render(wall_scene(3.0), forward_camera(), q, 0);
  const auto expected = q.quantize(3.0);
  CHECK(std::all_of(out.depth.codes.begin(), out.depth.codes.end(), [&](auto c) { return c == expected; }));
  CHECK(out.fg_mask.count() == 0);
}

TEST_CASE("sphere on the optical axis: depth at the principal pixel is distance minus radius") {
  const DepthQuantizer q(0.5, 20.0);
  Scene s = wall_scene(8.0);
  Sphere sphere;
  sphere.center.base = Vec3(0, 0, 2.5);
  sphere.radius = 0.6;
  sphere.texture = CheckerTexture::from_seed(1);
  s.spheres.push_back(sphere);
  const auto cam = forward_camera();
  const auto out = render(s, cam, q, 0);
  const int px = static_cast<int>(cam.intrinsics.cx);
  const int py = static_cast<int>(cam.intrinsics.cy);
  CHECK(out.depth.at(px, py) == q.quantize(2.5 - 0.6));
  CHECK(out.fg_mask.at(px, py));
  CHECK_FALSE(out.fg_mask.at(0, 0));
}

TEST_CASE("rendering is deterministic and the cached renderer matches the direct one") {
  const auto scene = make_scene("default");
  const auto calib = default_calibration(160, 90);
  for (const auto &cam : calib.cameras) {
    CameraRenderer cached(scene, cam, calib.quantizer);
    for (Timestamp t : {Timestamp{0}, Timestamp{1'234'567}, Timestamp{4'000'000}}) {
      const auto a = render(scene, cam, calib.quantizer, t);
      const auto b = render(scene, cam, calib.quantizer, t);
      const auto c = cached.render(t);
      REQUIRE(a.color == b.color);
      REQUIRE(a.depth == b.depth);
      REQUIRE(a.color == c.color);
      REQUIRE(a.depth == c.depth);
      REQUIRE(a.fg_mask == c.fg_mask);
    }
  }
}

TEST_CASE("default rig sees the room everywhere and the foreground somewhere") {
  const auto scene = make_scene("default");
  const auto calib = default_calibration(160, 90);
  REQUIRE(calib.cameras.size() == 9);
  for (std::size_t i = 0; i < calib.cameras.size(); ++i) {
    CHECK(calib.cameras[i].id == i);
    const auto out = render(scene, calib.cameras[i], calib.quantizer, 0);
    CHECK(std::none_of(out.depth.codes.begin(), out.depth.codes.end(), [](auto c) { return c == 0; }));
    CHECK(out.fg_mask.count() > 0);
  }
}

TEST_CASE("foreground mask is exactly where depth differs from the empty scene") {
  const auto scene = make_scene("default");
  const auto empty = scene.without_foreground();
  const auto calib = default_calibration(160, 90);
  for (const auto &cam : calib.cameras) {
    for (Timestamp t : {Timestamp{0}, Timestamp{2'500'000}}) {
      const auto full = render(scene, cam, calib.quantizer, t);
      const auto bg = render(empty, cam, calib.quantizer, t);
      for (std::size_t i = 0; i < full.depth.codes.size(); ++i) {
        REQUIRE((full.fg_mask.bits[i] != 0) == (full.depth.codes[i] != bg.depth.codes[i]));
      }
    }
  }
}

TEST_CASE("oracle consistency: a surface point seen by A projects onto the same surface in B") {
  const auto scene = make_scene("default");
  const auto calib = default_calibration(320, 180);
  const auto &a = calib.cameras[3];
  const auto &b = calib.cameras[4];
  const auto depth_a = render_depth_meters(scene, a, 0);
  const auto depth_b = render_depth_meters(scene, b, 0);
  std::mt19937 rng(3);
  int checked = 0;
  int matched = 0;
  for (int i = 0; i < 5000; ++i) {
    const int x = static_cast<int>(rng() % 320);
    const int y = static_cast<int>(rng() % 180);
    const Vec3 p = unproject(x, y, depth_a[static_cast<std::size_t>(y) * 320 + x], a);
    const auto pr = project(p, b);
    const int bx = static_cast<int>(std::lround(pr.u));
    const int by = static_cast<int>(std::lround(pr.v));
    if (pr.z <= 0 || bx < 1 || by < 1 || bx >= 319 || by >= 179) {
      continue;
    }
    // Unoccluded in B when B's own depth there agrees with the point's depth.
    const double zb = depth_b[static_cast<std::size_t>(by) * 320 + bx];
    if (std::abs(zb - pr.z) > 0.02 * pr.z) {
      continue;
    }
    ++checked;
    // B's surface point at that pixel reprojects within one pixel of the projection.
    const Vec3 q = unproject(bx, by, zb, b);
    const auto back = project(q, b);
    if (std::hypot(back.u - pr.u, back.v - pr.v) <= 1.0 && (q - p).norm() < 0.05 * pr.z) {
      ++matched;
    }
  }
  CHECK(checked > 3000);
  CHECK(matched == checked);
}

TEST_CASE("timed frames carry foreground depth only") {
  const auto scene = make_scene("default");
  const auto calib = default_calibration(160, 90);
  const auto out = render(scene, calib.cameras[4], calib.quantizer, 0);
  const auto f = make_timed_frame(4, 77, out);
  const auto fg = unpack_depth(f.foreground_depth);
  for (std::size_t i = 0; i < fg.codes.size(); ++i) {
    REQUIRE(fg.codes[i] == (out.fg_mask.bits[i] != 0 ? out.depth.codes[i] : 0));
  }
  CHECK(f.capture_ts == 77);
}

TEST_CASE("dataset export then load is bit-identical") {
  const auto dir = temp_dir("dataset");
  const auto ds = render_dataset(make_scene("default"), default_calibration(64, 36), 3);
  export_dataset(dir, ds);
  const auto back = load_dataset(dir);
  CHECK(back.calibration == ds.calibration);
  REQUIRE(back.ticks() == 3);
  for (const auto &[id, frames] : ds.frames) {
    for (std::size_t t = 0; t < frames.size(); ++t) {
      REQUIRE(frames_equal(frames[t], back.frames.at(id)[t]));
    }
    CHECK(back.background.at(id) == ds.background.at(id));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset loading errors name the cause") {
  const auto dir = temp_dir("dataset_err");
  std::filesystem::create_directories(dir);
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("no calibration file"), DatasetError);

  const auto ds = render_dataset(make_scene("static"), default_calibration(64, 36), 1);
  export_dataset(dir, ds);
  std::filesystem::remove_all(dir / "cam8");
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("camera 8"), DatasetError);

  export_dataset(dir, ds);
  std::filesystem::remove(dir / "cam2" / ("mask_" + tick_name(0) + ".pbm"));
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("camera 2, tick 0"), DatasetError);

  export_dataset(dir, ds);
  auto calib = ds.calibration;
  calib.cameras[5].intrinsics.width = 32;
  calib.cameras[5].intrinsics.cx = 15.5;
  save_calibration(calib, dir / "calibration.json");
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("camera 5, tick 0"), DatasetError);
  std::filesystem::remove_all(dir);
}
