#include "fvv/depth_codec.hpp"

#include "fvv/bytes.hpp"

#include <algorithm>
#include <string>

namespace fvv {

void DepthMap::validate() const {
  if (width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0) {
    throw DepthCodecError("depth map dimensions must be even, got " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
  if (codes.size() != static_cast<std::size_t>(width) * height) {
    throw DepthCodecError("depth map buffer does not match its dimensions");
  }
  const auto it = std::find_if(codes.begin(), codes.end(), [](std::uint16_t c) { return c > 0x0FFF; });
  if (it != codes.end()) {
    const auto i = static_cast<std::size_t>(it - codes.begin());
    throw DepthCodecError("depth code " + std::to_string(*it) + " exceeds 12 bits at pixel (" +
                          std::to_string(i % width) + ", " + std::to_string(i / width) + ")");
  }
}

std::vector<std::uint8_t> PackedDepthFrame::to_i420() const {
  std::vector<std::uint8_t> out;
  out.reserve(byte_size());
  out.insert(out.end(), y_plane.begin(), y_plane.end());
  out.insert(out.end(), u_plane.begin(), u_plane.end());
  out.insert(out.end(), v_plane.begin(), v_plane.end());
  return out;
}

PackedDepthFrame PackedDepthFrame::from_i420(std::span<const std::uint8_t> bytes, int width, int height) {
  if (width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0) {
    throw DepthCodecError("packed depth dimensions must be even");
  }
  const std::size_t luma = static_cast<std::size_t>(width) * height;
  const std::size_t chroma = luma / 4;
  if (bytes.size() != luma + 2 * chroma) {
    throw DepthCodecError("packed depth buffer has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(luma + 2 * chroma));
  }
  PackedDepthFrame f;
  f.width = width;
  f.height = height;
  f.y_plane.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(luma));
  f.u_plane.assign(bytes.begin() + static_cast<std::ptrdiff_t>(luma),
                   bytes.begin() + static_cast<std::ptrdiff_t>(luma + chroma));
  f.v_plane.assign(bytes.begin() + static_cast<std::ptrdiff_t>(luma + chroma), bytes.end());
  return f;
}

PackedDepthFrame pack_depth(const DepthMap &depth) {
  depth.validate();
  const int w = depth.width;
  const int cw = w / 2;
  const int ch = depth.height / 2;

  PackedDepthFrame out;
  out.width = w;
  out.height = depth.height;
  out.y_plane.resize(depth.codes.size());
  out.u_plane.resize(static_cast<std::size_t>(cw) * ch);
  out.v_plane.resize(static_cast<std::size_t>(cw) * ch);

  for (std::size_t i = 0; i < depth.codes.size(); ++i) {
    out.y_plane[i] = static_cast<std::uint8_t>(depth.codes[i] >> 4);
  }
  for (int cy = 0; cy < ch; ++cy) {
    const std::uint16_t *top = &depth.codes[static_cast<std::size_t>(2 * cy) * w];
    const std::uint16_t *bottom = top + w;
    for (int cx = 0; cx < cw; ++cx) {
      const std::size_t ci = static_cast<std::size_t>(cy) * cw + cx;
      out.u_plane[ci] = static_cast<std::uint8_t>(((top[2 * cx] & 0xF) << 4) | (top[2 * cx + 1] & 0xF));
      out.v_plane[ci] =
          static_cast<std::uint8_t>(((bottom[2 * cx] & 0xF) << 4) | (bottom[2 * cx + 1] & 0xF));
    }
  }
  return out;
}

DepthMap unpack_depth(const PackedDepthFrame &frame) {
  const int w = frame.width;
  const int h = frame.height;
  if (w < 2 || h < 2 || w % 2 != 0 || h % 2 != 0) {
    throw DepthCodecError("packed depth dimensions must be even");
  }
  const std::size_t luma = static_cast<std::size_t>(w) * h;
  if (frame.y_plane.size() != luma || frame.u_plane.size() != luma / 4 || frame.v_plane.size() != luma / 4) {
    throw DepthCodecError("packed depth plane sizes do not match " + std::to_string(w) + "x" +
                          std::to_string(h) + " 4:2:0");
  }
  const int cw = w / 2;
  DepthMap out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto &chroma = (y % 2 == 0) ? frame.u_plane : frame.v_plane;
    for (int x = 0; x < w; ++x) {
      const std::uint8_t c = chroma[static_cast<std::size_t>(y / 2) * cw + x / 2];
      const std::uint8_t lo = (x % 2 == 0) ? (c >> 4) : (c & 0xF);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      out.codes[i] = static_cast<std::uint16_t>((frame.y_plane[i] << 4) | lo);
    }
  }
  return out;
}

std::vector<std::uint8_t> serialize_packed_depth(const PackedDepthFrame &frame, std::uint32_t frame_index) {
  std::vector<std::uint8_t> out;
  out.reserve(kDepthFileHeaderSize + frame.byte_size());
  ByteWriter w(out);
  w.tag("FVVD");
  w.u16(static_cast<std::uint16_t>(frame.width));
  w.u16(static_cast<std::uint16_t>(frame.height));
  w.u32(frame_index);
  w.u32(0);
  w.bytes(frame.y_plane);
  w.bytes(frame.u_plane);
  w.bytes(frame.v_plane);
  return out;
}

PackedDepthFrame parse_packed_depth(std::span<const std::uint8_t> bytes, std::uint32_t *frame_index) {
  if (bytes.size() < kDepthFileHeaderSize) {
    throw DepthCodecError("depth file truncated header");
  }
  ByteReader r(bytes);
  if (r.tag() != "FVVD") {
    throw DepthCodecError("depth file: bad magic");
  }
  const int w = r.u16();
  const int h = r.u16();
  const auto idx = r.u32();
  r.u32();
  auto frame = PackedDepthFrame::from_i420(bytes.subspan(kDepthFileHeaderSize), w, h);
  if (frame_index != nullptr) {
    *frame_index = idx;
  }
  return frame;
}

} // namespace fvv
