#pragma once

#include "fvv/geometry.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvv {

class CalibrationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Rig-wide calibration: every physical camera plus the shared depth quantizer.
//
// JSON layout:
//   {
//     "depth":   {"z_near": 0.5, "z_far": 20.0},
//     "cameras": [
//       {"id": 0,
//        "intrinsics": {"fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..},
//        "pose": {"rotation": [r00, r01, r02, r10, .., r22], "translation": [tx, ty, tz]}}
//     ]
//   }
// Rotation and translation map world points into the camera frame.
struct Calibration {
  std::vector<CameraModel> cameras;
  DepthQuantizer quantizer;

  const CameraModel *find(CameraId id) const;
  const CameraModel &at(CameraId id) const;

  bool operator==(const Calibration &) const = default;
};

Calibration parse_calibration(const std::string &json_text);
std::string calibration_to_json(const Calibration &calib);

Calibration load_calibration(const std::filesystem::path &path);
void save_calibration(const Calibration &calib, const std::filesystem::path &path);

} // namespace fvv
