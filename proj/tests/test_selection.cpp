#include "fvv/scene_sim.hpp"
#include "fvv/selection.hpp"

#include <doctest.h>
#include <Eigen/Geometry>

#include <algorithm>
#include <numbers>
#include <random>

using namespace fvv;

namespace {

CameraModel camera_at(CameraId id, const Vec3 &center, const Mat3 &rotation = Mat3::Identity()) {
  CameraModel cam;
  cam.id = id;
  cam.intrinsics = {100, 100, 50, 50, 100, 100};
  cam.pose.rotation = rotation;
  cam.pose.translation = -rotation * center;
  return cam;
}

std::vector<CameraModel> line_rig() {
  std::vector<CameraModel> rig;
  for (CameraId i = 0; i < 9; ++i) {
    rig.push_back(camera_at(i, Vec3(i, 0, 0)));
  }
  return rig;
}

Mat3 random_rotation(std::mt19937 &rng) {
  std::normal_distribution<double> n;
  const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  std::uniform_real_distribution<double> a(-std::numbers::pi, std::numbers::pi);
  return Eigen::AngleAxisd(a(rng), axis).toRotationMatrix();
}

// Exhaustive oracle: full sort by (distance, id).
std::vector<CameraId> brute_force_order(const CameraModel &virt, const std::vector<CameraModel> &rig, double lambda) {
  std::vector<std::pair<double, CameraId>> all;
  for (const auto &c : rig) {
    const double center = (virt.pose.center() - c.pose.center()).norm();
    const double cosine = std::clamp(virt.pose.optical_axis().dot(c.pose.optical_axis()), -1.0, 1.0);
    all.emplace_back(center + lambda * std::acos(cosine), c.id);
  }
  std::sort(all.begin(), all.end());
  std::vector<CameraId> ids;
  for (const auto &[d, id] : all) {
    ids.push_back(id);
  }
  return ids;
}

} // namespace

TEST_CASE("camera_distance examples") {
  const auto a = camera_at(0, Vec3(0, 0, 0));
  CHECK(camera_distance(a, a) == 0.0);
  CHECK(camera_distance(a, camera_at(1, Vec3(2, 0, 0))) == doctest::Approx(2.0).epsilon(1e-12));
  const Mat3 yaw90 = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY()).toRotationMatrix();
  const auto b = camera_at(2, Vec3(1, 0, 0), yaw90);
  CHECK(camera_distance(a, b) == doctest::Approx(1.0 + std::numbers::pi / 2).epsilon(1e-12));
  CHECK(camera_distance(a, b) == doctest::Approx(2.5708).epsilon(1e-4));
  CHECK(camera_distance(a, b, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("nine cameras on a line, viewpoint at x = 3.4") {
  const auto rig = line_rig();
  const auto view = select_cameras(camera_at(0xFFFF, Vec3(3.4, 0, 0)), rig, std::nullopt);
  CHECK(view.active == std::vector<CameraId>{3, 4, 2});
  CHECK(view.subscribed == std::vector<CameraId>{1, 2, 3, 4, 5});
  CHECK(view.active_distances[0] == doctest::Approx(0.4));
}

TEST_CASE("viewpoint on a camera puts it first at distance zero") {
  const auto rig = line_rig();
  auto virt = rig[4];
  virt.id = 0xFFFF;
  const auto view = select_cameras(virt, rig, std::nullopt);
  CHECK(view.active.front() == 4);
  CHECK(view.active_distances.front() == 0.0);
}

TEST_CASE("hysteresis keeps incumbents within the margin") {
  const auto rig = line_rig();
  const auto first = select_cameras(camera_at(0xFFFF, Vec3(3.4, 0, 0)), rig, std::nullopt);

  auto view = select_cameras(camera_at(0xFFFF, Vec3(3.449, 0, 0)), rig, first);
  CHECK(view.active == std::vector<CameraId>{3, 4, 2});

  // Challenger 5 closer than incumbent 2 by 0.04 < h.
  view = select_cameras(camera_at(0xFFFF, Vec3(3.52, 0, 0)), rig, first);
  CHECK(view.active == std::vector<CameraId>{4, 3, 2});
  // Closer by 0.12 > h: swap.
  view = select_cameras(camera_at(0xFFFF, Vec3(3.56, 0, 0)), rig, first);
  CHECK(view.active == std::vector<CameraId>{4, 3, 5});
  // Without hysteresis the swap happens as soon as 5 wins.
  view = select_cameras(camera_at(0xFFFF, Vec3(3.52, 0, 0)), rig, first, {1.0, 0.0});
  CHECK(view.active == std::vector<CameraId>{4, 3, 5});
}

TEST_CASE("oscillation below h/2 around a boundary never changes the active set") {
  const auto rig = line_rig();
  const SelectionParams params;
  std::mt19937 rng(8);
  for (double boundary : {3.5, 4.5, 2.5}) {
    for (double amp : {0.01, 0.03, 0.049}) {
      auto view = select_cameras(camera_at(0xFFFF, Vec3(boundary - amp, 0, 0)), rig, std::nullopt, params);
      const auto initial = view.active;
      std::vector<CameraId> sorted_initial = initial;
      std::sort(sorted_initial.begin(), sorted_initial.end());
      for (int k = 0; k < 200; ++k) {
        const double x = boundary + (k % 2 == 0 ? amp : -amp);
        view = select_cameras(camera_at(0xFFFF, Vec3(x, 0, 0)), rig, view, params);
        auto sorted_now = view.active;
        std::sort(sorted_now.begin(), sorted_now.end());
        REQUIRE(sorted_now == sorted_initial);
      }
    }
  }
}

TEST_CASE("with h = 0 and no history, selection equals a brute-force sort") {
  std::mt19937 rng(1234);
  std::uniform_real_distribution<double> pos(-5.0, 5.0);
  std::uniform_real_distribution<double> lambda(0.0, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::vector<CameraModel> rig;
    for (int i = 0; i < n; ++i) {
      rig.push_back(camera_at(static_cast<CameraId>(i), Vec3(pos(rng), pos(rng), pos(rng)), random_rotation(rng)));
    }
    const auto virt = camera_at(0xFFFF, Vec3(pos(rng), pos(rng), pos(rng)), random_rotation(rng));
    const SelectionParams params{lambda(rng), 0.0};
    const auto view = select_cameras(virt, rig, std::nullopt, params);
    const auto order = brute_force_order(virt, rig, params.lambda);

    const std::vector<CameraId> expect_active(order.begin(), order.begin() + std::min<std::size_t>(3, order.size()));
    std::vector<CameraId> expect_sub(order.begin(), order.begin() + std::min<std::size_t>(5, order.size()));
    std::sort(expect_sub.begin(), expect_sub.end());
    REQUIRE(view.active == expect_active);
    REQUIRE(view.subscribed == expect_sub);
  }
}

TEST_CASE("selection is invariant under a rigid transform of the whole setup") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> pos(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CameraModel> rig;
    for (int i = 0; i < 10; ++i) {
      rig.push_back(camera_at(static_cast<CameraId>(i), Vec3(pos(rng), pos(rng), pos(rng)), random_rotation(rng)));
    }
    const auto virt = camera_at(0xFFFF, Vec3(pos(rng), pos(rng), pos(rng)), random_rotation(rng));

    CameraPose g;
    g.rotation = random_rotation(rng);
    g.translation = Vec3(pos(rng), pos(rng), pos(rng));
    const CameraPose g_inv = g.inverse();
    auto moved = rig;
    for (auto &c : moved) {
      c.pose = c.pose.compose(g_inv);
    }
    auto moved_virt = virt;
    moved_virt.pose = virt.pose.compose(g_inv);

    const auto a = select_cameras(virt, rig, std::nullopt);
    const auto b = select_cameras(moved_virt, moved, std::nullopt);
    REQUIRE(a.active == b.active);
    REQUIRE(a.subscribed == b.subscribed);
  }
}

TEST_CASE("handover readiness: new active cameras were already subscribed") {
  const auto rig = line_rig();
  std::optional<ViewState> prev;
  for (double x = -0.5; x <= 8.5; x += 0.07) {
    const auto view = select_cameras(camera_at(0xFFFF, Vec3(x, 0, 0)), rig, prev);
    if (prev) {
      for (auto id : view.active) {
        REQUIRE(std::find(prev->subscribed.begin(), prev->subscribed.end(), id) != prev->subscribed.end());
      }
    }
    for (auto id : view.active) {
      REQUIRE(std::find(view.subscribed.begin(), view.subscribed.end(), id) != view.subscribed.end());
    }
    prev = view;
  }
}

TEST_CASE("small rigs select every camera") {
  const std::vector<CameraModel> rig = {camera_at(3, Vec3(0, 0, 0)), camera_at(9, Vec3(1, 0, 0))};
  const auto view = select_cameras(camera_at(0xFFFF, Vec3(0.9, 0, 0)), rig, std::nullopt);
  CHECK(view.active == std::vector<CameraId>{9, 3});
  CHECK(view.subscribed == std::vector<CameraId>{3, 9});
  CHECK_THROWS(select_cameras(rig[0], std::vector<CameraModel>{}, std::nullopt));
}

TEST_CASE("arc viewpoint hits camera poses and midpoints") {
  const auto rig = default_rig(64, 36);
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const auto v = arc_viewpoint(rig, static_cast<double>(i) / 8.0, kStageTarget);
    CHECK((v.pose.rotation - rig[i].pose.rotation).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((v.pose.translation - rig[i].pose.translation).norm() < 1e-12);
  }
  const auto mid = arc_viewpoint(rig, 0.5 / 8.0, kStageTarget);
  CHECK((mid.pose.center() - 0.5 * (rig[0].pose.center() + rig[1].pose.center())).norm() < 1e-12);
}

TEST_CASE("sweeping the default arc visits every camera in order") {
  const auto rig = default_rig(64, 36);
  std::optional<ViewState> prev;
  std::vector<CameraId> visited;
  for (int k = 0; k <= 300; ++k) {
    const auto v = arc_viewpoint(rig, k / 300.0, kStageTarget);
    prev = select_cameras(v, rig, prev);
    if (visited.empty() || visited.back() != prev->active.front()) {
      visited.push_back(prev->active.front());
    }
  }
  CHECK(visited == std::vector<CameraId>{0, 1, 2, 3, 4, 5, 6, 7, 8});
}
