#include "fvv/synthesis.hpp"

#include "fvv/scene_sim.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>

namespace fvv {

// ---------------------------------------------------------------------------
// Background model

const DepthMap &BackgroundModel::at(CameraId id) const {
  const auto it = depth.find(id);
  if (it == depth.end()) {
    throw SynthesisError("no background model for camera " + std::to_string(id));
  }
  return it->second;
}

void BackgroundModel::validate() const {
  for (const auto &cam : calibration.cameras) {
    const auto &d = at(cam.id);
    if (d.width != cam.intrinsics.width || d.height != cam.intrinsics.height) {
      throw SynthesisError("background model for camera " + std::to_string(cam.id) +
                           " does not match the calibrated image size");
    }
    if (std::find(d.codes.begin(), d.codes.end(), DepthQuantizer::kInvalid) != d.codes.end()) {
      throw SynthesisError("background model for camera " + std::to_string(cam.id) + " has holes");
    }
  }
}

void BackgroundModel::save(const std::filesystem::path &dir) const {
  std::filesystem::create_directories(dir);
  save_calibration(calibration, dir / "calibration.json");
  for (const auto &[id, d] : depth) {
    const auto cdir = dir / ("cam" + std::to_string(id));
    std::filesystem::create_directories(cdir);
    write_file(cdir / "background.fvvd", serialize_packed_depth(pack_depth(d), 0));
  }
}

BackgroundModel BackgroundModel::load(const std::filesystem::path &dir) {
  BackgroundModel model;
  try {
    model.calibration = load_calibration(dir / "calibration.json");
  } catch (const CalibrationError &e) {
    throw SynthesisError(e.what());
  }
  for (const auto &cam : model.calibration.cameras) {
    const auto path = dir / ("cam" + std::to_string(cam.id)) / "background.fvvd";
    if (!std::filesystem::exists(path)) {
      throw SynthesisError("missing background depth for camera " + std::to_string(cam.id));
    }
    try {
      model.depth[cam.id] = unpack_depth(parse_packed_depth(read_file(path)));
    } catch (const std::exception &e) {
      throw SynthesisError("camera " + std::to_string(cam.id) + " background: " + e.what());
    }
  }
  model.validate();
  return model;
}

BackgroundModel build_background_model(const Calibration &calib, const Scene &empty_scene) {
  if (empty_scene.has_foreground()) {
    throw SynthesisError("background model requires a scene without foreground objects");
  }
  BackgroundModel model;
  model.calibration = calib;
  for (const auto &cam : calib.cameras) {
    model.depth[cam.id] = render(empty_scene, cam, calib.quantizer, 0).depth;
  }
  model.validate();
  return model;
}

DepthMap full_depth(const TimedFrame &frame, const BackgroundModel &bg) {
  const auto &bg_depth = bg.at(frame.camera_id);
  const auto &mask = frame.foreground_mask;
  if (mask.width != bg_depth.width || mask.height != bg_depth.height) {
    throw SynthesisError("camera " + std::to_string(frame.camera_id) + ": mask size does not match camera");
  }
  const DepthMap fg = unpack_depth(frame.foreground_depth);
  if (fg.width != bg_depth.width || fg.height != bg_depth.height) {
    throw SynthesisError("camera " + std::to_string(frame.camera_id) + ": depth size does not match camera");
  }
  DepthMap out = bg_depth;
  for (std::size_t i = 0; i < out.codes.size(); ++i) {
    if (mask.bits[i] != 0) {
      out.codes[i] = fg.codes[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Warping

namespace {

constexpr float kNoDepth = std::numeric_limits<float>::infinity();

struct Sample {
  float u;
  float v;
  float z;
};

} // namespace

WarpedView forward_warp(const I420Frame &src_color, const DepthMap &src_depth, const CameraModel &src_cam,
                        const CameraModel &dst_cam, const DepthQuantizer &quantizer, const SynthesisConfig &config,
                        const Bitmap *mask, WarpSource which) {
  const int sw = src_cam.intrinsics.width;
  const int sh = src_cam.intrinsics.height;
  if (src_color.width != sw || src_color.height != sh || src_depth.width != sw || src_depth.height != sh) {
    throw SynthesisError("camera " + std::to_string(src_cam.id) + ": source size does not match intrinsics");
  }
  if (mask != nullptr && (mask->width != sw || mask->height != sh)) {
    throw SynthesisError("camera " + std::to_string(src_cam.id) + ": mask size does not match intrinsics");
  }
  const int dw = dst_cam.intrinsics.width;
  const int dh = dst_cam.intrinsics.height;
  const std::size_t dn = static_cast<std::size_t>(dw) * dh;

  // Source camera frame -> destination camera frame.
  const Mat3 rot = dst_cam.pose.rotation * src_cam.pose.rotation.transpose();
  const Vec3 trans = dst_cam.pose.translation - rot * src_cam.pose.translation;
  const auto &ks = src_cam.intrinsics;
  const auto &kd = dst_cam.intrinsics;

  std::vector<float> zbuf(dn, kNoDepth);
  std::vector<std::int32_t> src_of(dn, -1);
  std::vector<Sample> samples;
  std::vector<std::int32_t> sample_src;
  samples.reserve(static_cast<std::size_t>(sw) * sh);
  sample_src.reserve(samples.capacity());

  auto wanted = [&](std::size_t i) {
    if (mask == nullptr || which == WarpSource::All) {
      return true;
    }
    const bool set = mask->bits[i] != 0;
    return which == WarpSource::MaskedOnly ? set : !set;
  };

  // rot * K_src^-1 * (x, y, 1) is affine in x and y.
  const Vec3 ax = rot.col(0) / ks.fx;
  const Vec3 ay = rot.col(1) / ks.fy;
  const Vec3 a0 = rot.col(2) - ax * ks.cx - ay * ks.cy;
  std::array<double, 4096> meters{};
  for (std::uint16_t c = 1; c < meters.size(); ++c) {
    meters[c] = quantizer.dequantize(c);
  }
  const double tx = trans.x(), ty = trans.y(), tz = trans.z();

  for (int y = 0; y < sh; ++y) {
    const Vec3 row = a0 + ay * y;
    for (int x = 0; x < sw; ++x) {
      const std::size_t si = static_cast<std::size_t>(y) * sw + x;
      const std::uint16_t code = src_depth.codes[si];
      if (code == DepthQuantizer::kInvalid || code >= meters.size() || !wanted(si)) {
        continue;
      }
      const double z = meters[code];
      const double pz = z * (row.z() + ax.z() * x) + tz;
      if (pz <= 1e-6) {
        continue;
      }
      const double px = z * (row.x() + ax.x() * x) + tx;
      const double py = z * (row.y() + ax.y() * x) + ty;
      const double u = kd.fx * px / pz + kd.cx;
      const double v = kd.fy * py / pz + kd.cy;
      if (!(u > -1.5 && u < dw + 0.5 && v > -1.5 && v < dh + 0.5)) {
        continue;
      }
      const auto zf = static_cast<float>(pz);
      samples.push_back({static_cast<float>(u), static_cast<float>(v), zf});
      sample_src.push_back(static_cast<std::int32_t>(si));

      const int ix = static_cast<int>(std::floor(u + 0.5));
      const int iy = static_cast<int>(std::floor(v + 0.5));
      if (ix < 0 || iy < 0 || ix >= dw || iy >= dh) {
        continue;
      }
      const std::size_t di = static_cast<std::size_t>(iy) * dw + ix;
      if (zf < zbuf[di]) {
        zbuf[di] = zf;
        src_of[di] = static_cast<std::int32_t>(si);
      }
    }
  }

  if (config.splat_2x2) {
    // Second pass only fills pixels no sample hit directly.
    std::vector<float> zbuf2(dn, kNoDepth);
    std::vector<std::int32_t> src2(dn, -1);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto &s = samples[k];
      const int x0 = static_cast<int>(std::floor(s.u));
      const int y0 = static_cast<int>(std::floor(s.v));
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int ix = x0 + dx;
          const int iy = y0 + dy;
          if (ix < 0 || iy < 0 || ix >= dw || iy >= dh) {
            continue;
          }
          const std::size_t di = static_cast<std::size_t>(iy) * dw + ix;
          if (src_of[di] < 0 && s.z < zbuf2[di]) {
            zbuf2[di] = s.z;
            src2[di] = sample_src[k];
          }
        }
      }
    }
    for (std::size_t di = 0; di < dn; ++di) {
      if (src_of[di] < 0 && src2[di] >= 0) {
        src_of[di] = src2[di];
        zbuf[di] = zbuf2[di];
      }
    }
  }

  WarpedView out;
  out.source_camera = src_cam.id;
  out.color = I420Frame(dw, dh, 0, 128);
  out.depth.assign(dn, 0.0F);
  out.validity = Bitmap(dw, dh);
  auto y_out = out.color.y();
  const auto y_src = src_color.y();
  for (std::size_t di = 0; di < dn; ++di) {
    if (src_of[di] >= 0) {
      y_out[di] = y_src[static_cast<std::size_t>(src_of[di])];
      out.depth[di] = zbuf[di];
      out.validity.bits[di] = 1;
    }
  }

  // Chroma: per destination cell, take the source chroma of the nearest valid pixel.
  const int dcw = dw / 2;
  const int scw = sw / 2;
  auto u_out = out.color.u();
  auto v_out = out.color.v();
  const auto u_src = src_color.u();
  const auto v_src = src_color.v();
  for (int cy = 0; cy < dh / 2; ++cy) {
    for (int cx = 0; cx < dcw; ++cx) {
      std::int32_t best = -1;
      float best_z = kNoDepth;
      for (int d = 0; d < 4; ++d) {
        const std::size_t di = static_cast<std::size_t>(2 * cy + d / 2) * dw + 2 * cx + d % 2;
        if (src_of[di] >= 0 && zbuf[di] < best_z) {
          best_z = zbuf[di];
          best = src_of[di];
        }
      }
      if (best >= 0) {
        const int sx = best % sw;
        const int sy = best / sw;
        const std::size_t sci = static_cast<std::size_t>(sy / 2) * scw + sx / 2;
        const std::size_t dci = static_cast<std::size_t>(cy) * dcw + cx;
        u_out[dci] = u_src[sci];
        v_out[dci] = v_src[sci];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Blending

std::vector<double> blend_weights(std::span<const double> distances) {
  std::vector<double> w;
  double sum = 0.0;
  for (double d : distances) {
    w.push_back(1.0 / (d + 0.01));
    sum += w.back();
  }
  for (auto &x : w) {
    x /= sum;
  }
  return w;
}

namespace {

// Min valid depth of a 2x2 cell, 0 if the cell has no valid pixel.
float cell_depth(const WarpedView &view, int cx, int cy) {
  float best = kNoDepth;
  const int w = view.width();
  for (int d = 0; d < 4; ++d) {
    const std::size_t i = static_cast<std::size_t>(2 * cy + d / 2) * w + 2 * cx + d % 2;
    if (view.validity.bits[i] != 0) {
      best = std::min(best, view.depth[i]);
    }
  }
  return best == kNoDepth ? 0.0F : best;
}

} // namespace

WarpedView blend(std::span<const WarpedView> warps, std::span<const double> distances, double depth_epsilon,
                 double relative_epsilon) {
  if (warps.empty() || warps.size() != distances.size()) {
    throw SynthesisError("blend: need one distance per warped view");
  }
  const int w = warps.front().width();
  const int h = warps.front().height();
  for (const auto &v : warps) {
    if (v.width() != w || v.height() != h) {
      throw SynthesisError("blend: warped views differ in size");
    }
  }
  const auto weights = blend_weights(distances);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const std::size_t k = warps.size();

  WarpedView out;
  out.source_camera = 0xFFFF;
  out.color = I420Frame(w, h, 0, 128);
  out.depth.assign(n, 0.0F);
  out.validity = Bitmap(w, h);

  auto y_out = out.color.y();
  for (std::size_t i = 0; i < n; ++i) {
    float zmin = kNoDepth;
    for (std::size_t j = 0; j < k; ++j) {
      if (warps[j].validity.bits[i] != 0) {
        zmin = std::min(zmin, warps[j].depth[i]);
      }
    }
    if (zmin == kNoDepth) {
      continue;
    }
    const double limit = zmin + std::max(depth_epsilon, relative_epsilon * zmin);
    double wsum = 0.0;
    double ysum = 0.0;
    double zsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (warps[j].validity.bits[i] != 0 && warps[j].depth[i] <= limit) {
        wsum += weights[j];
        ysum += weights[j] * warps[j].color.y()[i];
        zsum += weights[j] * warps[j].depth[i];
      }
    }
    y_out[i] = static_cast<std::uint8_t>(std::lround(ysum / wsum));
    out.depth[i] = static_cast<float>(zsum / wsum);
    out.validity.bits[i] = 1;
  }

  const int cw = w / 2;
  auto u_out = out.color.u();
  auto v_out = out.color.v();
  std::vector<float> cz(k);
  for (int cy = 0; cy < h / 2; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      float zmin = kNoDepth;
      for (std::size_t j = 0; j < k; ++j) {
        cz[j] = cell_depth(warps[j], cx, cy);
        if (cz[j] > 0.0F) {
          zmin = std::min(zmin, cz[j]);
        }
      }
      if (zmin == kNoDepth) {
        continue;
      }
      const std::size_t ci = static_cast<std::size_t>(cy) * cw + cx;
      const double limit = zmin + std::max(depth_epsilon, relative_epsilon * zmin);
      double wsum = 0.0;
      double usum = 0.0;
      double vsum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (cz[j] > 0.0F && cz[j] <= limit) {
          wsum += weights[j];
          usum += weights[j] * warps[j].color.u()[ci];
          vsum += weights[j] * warps[j].color.v()[ci];
        }
      }
      u_out[ci] = static_cast<std::uint8_t>(std::lround(usum / wsum));
      v_out[ci] = static_cast<std::uint8_t>(std::lround(vsum / wsum));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hole filling

namespace {

// Fills invalid runs of one line from the valid neighbor with the farther depth.
// Returns false if the line holds no valid sample at all.
template <typename Assign>
bool fill_line(int len, const std::function<bool(int)> &valid, const std::function<float(int)> &depth,
               Assign assign) {
  int x = 0;
  bool any = false;
  while (x < len) {
    if (valid(x)) {
      any = true;
      ++x;
      continue;
    }
    const int start = x;
    while (x < len && !valid(x)) {
      ++x;
    }
    const int left = start - 1;
    const int right = x < len ? x : -1;
    int from = -1;
    if (left >= 0 && right >= 0) {
      from = depth(left) >= depth(right) ? left : right;
    } else {
      from = left >= 0 ? left : right;
    }
    if (from >= 0) {
      for (int i = start; i < x; ++i) {
        assign(i, from);
      }
    }
  }
  return any;
}

// Copies whole empty rows from the nearest row that had data (above wins ties).
template <typename CopyRow>
void fill_empty_rows(const std::vector<bool> &row_ok, CopyRow copy_row) {
  const int h = static_cast<int>(row_ok.size());
  for (int y = 0; y < h; ++y) {
    if (row_ok[static_cast<std::size_t>(y)]) {
      continue;
    }
    for (int d = 1; d < h; ++d) {
      if (y - d >= 0 && row_ok[static_cast<std::size_t>(y - d)]) {
        copy_row(y, y - d);
        break;
      }
      if (y + d < h && row_ok[static_cast<std::size_t>(y + d)]) {
        copy_row(y, y + d);
        break;
      }
    }
  }
}

} // namespace

void fill_holes(I420Frame &color, std::vector<float> &depth, const Bitmap &valid) {
  const int w = color.width;
  const int h = color.height;
  auto y_plane = color.y();
  std::vector<bool> row_ok(static_cast<std::size_t>(h));
  const std::vector<float> depth_in = depth;

  for (int y = 0; y < h; ++y) {
    const std::size_t base = static_cast<std::size_t>(y) * w;
    row_ok[static_cast<std::size_t>(y)] = fill_line(
        w, [&](int x) { return valid.bits[base + x] != 0; }, [&](int x) { return depth_in[base + x]; },
        [&](int x, int from) {
          y_plane[base + x] = y_plane[base + from];
          depth[base + x] = depth_in[base + from];
        });
  }
  const bool any_luma = std::find(row_ok.begin(), row_ok.end(), true) != row_ok.end();
  if (any_luma) {
    fill_empty_rows(row_ok, [&](int dst, int src) {
      std::copy_n(y_plane.begin() + static_cast<std::ptrdiff_t>(src) * w, w,
                  y_plane.begin() + static_cast<std::ptrdiff_t>(dst) * w);
      std::copy_n(depth.begin() + static_cast<std::ptrdiff_t>(src) * w, w,
                  depth.begin() + static_cast<std::ptrdiff_t>(dst) * w);
    });
  } else {
    std::fill(y_plane.begin(), y_plane.end(), 0);
    std::fill(depth.begin(), depth.end(), 0.0F);
  }

  const int cw = w / 2;
  const int ch = h / 2;
  std::vector<float> cdepth(static_cast<std::size_t>(cw) * ch, 0.0F);
  std::vector<std::uint8_t> cvalid(cdepth.size(), 0);
  for (int cy = 0; cy < ch; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      float best = kNoDepth;
      for (int d = 0; d < 4; ++d) {
        const std::size_t i = static_cast<std::size_t>(2 * cy + d / 2) * w + 2 * cx + d % 2;
        if (valid.bits[i] != 0) {
          best = std::min(best, depth_in[i]);
        }
      }
      if (best != kNoDepth) {
        const std::size_t ci = static_cast<std::size_t>(cy) * cw + cx;
        cdepth[ci] = best;
        cvalid[ci] = 1;
      }
    }
  }
  auto u = color.u();
  auto v = color.v();
  std::vector<bool> crow_ok(static_cast<std::size_t>(ch));
  for (int cy = 0; cy < ch; ++cy) {
    const std::size_t base = static_cast<std::size_t>(cy) * cw;
    crow_ok[static_cast<std::size_t>(cy)] = fill_line(
        cw, [&](int x) { return cvalid[base + x] != 0; }, [&](int x) { return cdepth[base + x]; },
        [&](int x, int from) {
          u[base + x] = u[base + from];
          v[base + x] = v[base + from];
        });
  }
  if (std::find(crow_ok.begin(), crow_ok.end(), true) != crow_ok.end()) {
    fill_empty_rows(crow_ok, [&](int dst, int src) {
      std::copy_n(u.begin() + static_cast<std::ptrdiff_t>(src) * cw, cw, u.begin() + static_cast<std::ptrdiff_t>(dst) * cw);
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(src) * cw, cw, v.begin() + static_cast<std::ptrdiff_t>(dst) * cw);
    });
  } else {
    std::fill(u.begin(), u.end(), 128);
    std::fill(v.begin(), v.end(), 128);
  }
}

// ---------------------------------------------------------------------------
// Full pipeline

LayeredFrame synthesize(const FrameSet &set, const ViewState &view, const BackgroundModel &bg,
                        const SynthesisConfig &config, SynthesisTimings *timings) {
  using Clock = std::chrono::steady_clock;
  auto elapsed_us = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
  };

  if (view.active.empty()) {
    throw SynthesisError("synthesize: no active reference cameras");
  }
  std::vector<double> distances = view.active_distances;
  if (distances.size() != view.active.size()) {
    distances.clear();
    for (auto id : view.active) {
      distances.push_back(camera_distance(view.virtual_camera, bg.calibration.at(id)));
    }
  }

  const auto t0 = Clock::now();
  std::vector<WarpedView> bg_warps;
  std::vector<WarpedView> fg_warps;
  for (auto id : view.active) {
    const auto it = set.frames.find(id);
    if (it == set.frames.end()) {
      throw SynthesisError("camera " + std::to_string(id) + " missing from frame set");
    }
    const TimedFrame &frame = *it->second.frame;
    const CameraModel *cam = bg.calibration.find(id);
    if (cam == nullptr) {
      throw SynthesisError("camera " + std::to_string(id) + " not in calibration");
    }
    const DepthMap &bg_depth = bg.at(id);
    const DepthMap fg_depth = unpack_depth(frame.foreground_depth);
    const auto &q = bg.calibration.quantizer;
    bg_warps.push_back(forward_warp(frame.color, bg_depth, *cam, view.virtual_camera, q, config,
                                    &frame.foreground_mask, WarpSource::UnmaskedOnly));
    fg_warps.push_back(forward_warp(frame.color, fg_depth, *cam, view.virtual_camera, q, config,
                                    &frame.foreground_mask, WarpSource::MaskedOnly));
  }
  const auto t1 = Clock::now();

  LayeredFrame out;
  out.background_layer = blend(bg_warps, distances, config.depth_epsilon, config.depth_epsilon_relative);
  out.foreground_layer = blend(fg_warps, distances, config.depth_epsilon, config.depth_epsilon_relative);
  const auto t2 = Clock::now();

  // Foreground painted over background wherever it is valid.
  const auto &bgl = out.background_layer;
  const auto &fgl = out.foreground_layer;
  out.final = bgl.color;
  out.final_depth = bgl.depth;
  out.covered = bgl.validity;
  const int w = out.final.width;
  auto y = out.final.y();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (fgl.validity.bits[i] != 0) {
      y[i] = fgl.color.y()[i];
      out.final_depth[i] = fgl.depth[i];
      out.covered.bits[i] = 1;
    }
  }
  const int cw = w / 2;
  auto u = out.final.u();
  auto v = out.final.v();
  for (int cy = 0; cy < out.final.height / 2; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      if (cell_depth(fgl, cx, cy) > 0.0F) {
        const std::size_t ci = static_cast<std::size_t>(cy) * cw + cx;
        u[ci] = fgl.color.u()[ci];
        v[ci] = fgl.color.v()[ci];
      }
    }
  }
  fill_holes(out.final, out.final_depth, out.covered);
  const auto t3 = Clock::now();

  if (timings != nullptr) {
    timings->warp_us = elapsed_us(t0, t1);
    timings->blend_us = elapsed_us(t1, t2);
    timings->composite_us = elapsed_us(t2, t3);
  }
  return out;
}

} // namespace fvv
