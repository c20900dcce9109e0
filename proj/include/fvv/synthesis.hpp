#pragma once

#include "fvv/calibration.hpp"
#include "fvv/depth_codec.hpp"
#include "fvv/geometry.hpp"
#include "fvv/image.hpp"
#include "fvv/selection.hpp"
#include "fvv/sync.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace fvv {

struct Scene;

class SynthesisError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SynthesisConfig {
  // Blend drops contributions farther than min + max(epsilon, relative * min).
  double depth_epsilon = 0.05; // meters
  double depth_epsilon_relative = 0.05;
  bool splat_2x2 = true;       // fill cracks from the 2x2 neighborhood of each warped sample
};

// Offline static-scene depth for every rig camera; online streams only carry
// foreground depth.
struct BackgroundModel {
  Calibration calibration;
  std::map<CameraId, DepthMap> depth;

  const DepthMap &at(CameraId id) const;
  // Throws SynthesisError if a camera is missing, has the wrong size, or holds holes.
  void validate() const;

  // Directory layout: calibration.json plus cam<i>/background.fvvd.
  void save(const std::filesystem::path &dir) const;
  static BackgroundModel load(const std::filesystem::path &dir);
};

BackgroundModel build_background_model(const Calibration &calib, const Scene &empty_scene);

// A reference view reprojected into the virtual camera. `depth` is the
// virtual-camera z in meters (0 where invalid).
struct WarpedView {
  I420Frame color;
  std::vector<float> depth;
  Bitmap validity;
  CameraId source_camera = 0;

  int width() const { return color.width; }
  int height() const { return color.height; }
};

struct LayeredFrame {
  WarpedView background_layer;
  WarpedView foreground_layer;
  I420Frame final;
  std::vector<float> final_depth; // hole-filled
  Bitmap covered;                 // pixels valid before hole filling
};

struct SynthesisTimings {
  double warp_us = 0.0;
  double blend_us = 0.0;
  double composite_us = 0.0;
};

// Foreground codes where the mask is set, background model codes elsewhere.
DepthMap full_depth(const TimedFrame &frame, const BackgroundModel &bg);

enum class WarpSource { All, MaskedOnly, UnmaskedOnly };

// Forward-warps every valid source pixel into dst_cam with a z-buffer (nearest
// wins). Pixels no sample reaches stay invalid. When `mask` is given, `which`
// restricts the warp to masked or unmasked source pixels.
WarpedView forward_warp(const I420Frame &src_color, const DepthMap &src_depth, const CameraModel &src_cam,
                        const CameraModel &dst_cam, const DepthQuantizer &quantizer,
                        const SynthesisConfig &config = {}, const Bitmap *mask = nullptr,
                        WarpSource which = WarpSource::All);

// Normalized weights 1 / (d + 0.01).
std::vector<double> blend_weights(std::span<const double> distances);

// Per-pixel depth-guarded weighted average of up to three warped views.
WarpedView blend(std::span<const WarpedView> warps, std::span<const double> distances, double depth_epsilon,
                 double relative_epsilon = 0.0);

// Background-biased scanline fill: each hole run copies the neighbor pixel
// with the farther depth. Fills color and depth in place; chroma is filled per
// 2x2 cell using the cell's nearest valid depth.
void fill_holes(I420Frame &color, std::vector<float> &depth, const Bitmap &valid);

LayeredFrame synthesize(const FrameSet &set, const ViewState &view, const BackgroundModel &bg,
                        const SynthesisConfig &config = {}, SynthesisTimings *timings = nullptr);

} // namespace fvv
