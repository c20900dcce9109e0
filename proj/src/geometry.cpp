#include "fvv/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace fvv {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw GeometryError("focal lengths must be positive");
  }
  if (width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0) {
    throw GeometryError("image size must be even and at least 2x2, got " +
                        std::to_string(width) + "x" + std::to_string(height));
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw GeometryError("principal point outside the image");
  }
}

CameraPose CameraPose::look_at(const Vec3 &center, const Vec3 &target, const Vec3 &world_up) {
  const Vec3 forward = (target - center).normalized();
  // Image y points down, so "down" in the world is -world_up; right x down = forward.
  Vec3 right = (-world_up).cross(forward);
  if (right.norm() < 1e-12) {
    throw GeometryError("look_at: view direction parallel to up vector");
  }
  right.normalize();
  const Vec3 down = forward.cross(right);

  CameraPose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = down.transpose();
  pose.rotation.row(2) = forward.transpose();
  pose.translation = -pose.rotation * center;
  return pose;
}

CameraPose CameraPose::inverse() const {
  CameraPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.rotation * translation;
  return inv;
}

CameraPose CameraPose::compose(const CameraPose &first) const {
  CameraPose out;
  out.rotation = rotation * first.rotation;
  out.translation = rotation * first.translation + translation;
  return out;
}

void CameraPose::validate() const {
  const double ortho_err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho_err <= 1e-6) || std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw GeometryError("rotation is not a proper orthonormal matrix");
  }
  if (!translation.allFinite()) {
    throw GeometryError("translation is not finite");
  }
}

Projection project(const Vec3 &world, const CameraModel &cam) {
  const Vec3 p = cam.pose.to_camera(world);
  const auto &k = cam.intrinsics;
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
}

Vec3 unproject(double u, double v, double z, const CameraModel &cam) {
  if (!(z > 0.0)) {
    throw GeometryError("unproject: depth must be positive");
  }
  return unproject_unchecked(u, v, z, cam);
}

DepthQuantizer::DepthQuantizer(double z_near, double z_far) : z_near_(z_near), z_far_(z_far) {
  if (!(z_near > 0.0) || !(z_far > z_near) || !std::isfinite(z_far)) {
    throw GeometryError("depth range requires 0 < z_near < z_far");
  }
  inv_far_ = 1.0 / z_far_;
  inv_range_ = 1.0 / z_near_ - inv_far_;
}

std::uint16_t DepthQuantizer::quantize(double z) const {
  if (!(z >= z_near_ && z <= z_far_)) {
    return kInvalid;
  }
  const double code = std::round(kMaxCode * (1.0 / z - inv_far_) / inv_range_);
  return static_cast<std::uint16_t>(std::clamp(code, 1.0, static_cast<double>(kMaxCode)));
}

double DepthQuantizer::dequantize(std::uint16_t code) const {
  if (code == kInvalid) {
    return 0.0;
  }
  const double c = std::min<double>(code, kMaxCode);
  return 1.0 / (inv_far_ + c / kMaxCode * inv_range_);
}

double DepthQuantizer::step_at(double z) const {
  // d(1/z) per code is inv_range/4095; dz = z^2 * d(1/z).
  return z * z * inv_range_ / kMaxCode;
}

} // namespace fvv
