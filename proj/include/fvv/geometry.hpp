#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fvv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using CameraId = std::uint16_t;

class GeometryError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Pinhole intrinsics. Pixel centers sit on integer coordinates, origin top-left,
// row-major. Both dimensions must be even so depth maps tile into 2x2 cells.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
  bool operator==(const CameraIntrinsics &) const = default;
};

// World -> camera rigid transform: p_cam = rotation * p_world + translation.
// Camera axes follow the usual x right, y down, z forward convention.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose look_at(const Vec3 &center, const Vec3 &target,
                            const Vec3 &world_up = Vec3(0.0, 1.0, 0.0));

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 optical_axis() const { return rotation.row(2).transpose(); }

  Vec3 to_camera(const Vec3 &world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3 &cam) const { return rotation.transpose() * (cam - translation); }

  CameraPose inverse() const;
  // (*this) after `first`: x -> this(first(x)).
  CameraPose compose(const CameraPose &first) const;

  void validate() const;
  bool operator==(const CameraPose &o) const {
    return rotation == o.rotation && translation == o.translation;
  }
};

struct CameraModel {
  CameraId id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;

  bool operator==(const CameraModel &) const = default;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0; // camera-space depth, may be <= 0 for points behind the camera
};

Projection project(const Vec3 &world, const CameraModel &cam);

// Throws GeometryError when z <= 0.
Vec3 unproject(double u, double v, double z, const CameraModel &cam);

// Unchecked variant for inner loops where z > 0 is already known.
inline Vec3 unproject_unchecked(double u, double v, double z, const CameraModel &cam) {
  const auto &k = cam.intrinsics;
  const Vec3 p_cam((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
  return cam.pose.to_world(p_cam);
}

// 12-bit depth codes, linear in disparity (1/z). Code 0 marks an invalid pixel;
// z_near maps to 4095 and z_far to 1.
class DepthQuantizer {
public:
  static constexpr int kLevels = 4096;
  static constexpr std::uint16_t kInvalid = 0;
  static constexpr std::uint16_t kMaxCode = 4095;

  DepthQuantizer() : DepthQuantizer(0.5, 20.0) {}
  DepthQuantizer(double z_near, double z_far);

  double z_near() const { return z_near_; }
  double z_far() const { return z_far_; }

  std::uint16_t quantize(double z) const;
  // Returns 0.0 for the invalid code.
  double dequantize(std::uint16_t code) const;

  // Depth spacing between adjacent codes around z.
  double step_at(double z) const;

  bool operator==(const DepthQuantizer &o) const {
    return z_near_ == o.z_near_ && z_far_ == o.z_far_;
  }

private:
  double z_near_;
  double z_far_;
  double inv_far_;
  double inv_range_;
};

} // namespace fvv
