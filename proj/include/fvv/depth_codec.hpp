#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace fvv {

class DepthCodecError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Per-pixel 12-bit depth codes (see DepthQuantizer). Code 0 is a hole.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> codes;

  DepthMap() = default;
  DepthMap(int w, int h, std::uint16_t fill = 0)
      : width(w), height(h), codes(static_cast<std::size_t>(w) * h, fill) {}

  std::uint16_t at(int x, int y) const { return codes[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t &at(int x, int y) { return codes[static_cast<std::size_t>(y) * width + x]; }

  // Throws DepthCodecError on odd dimensions, wrong buffer size or codes > 4095.
  void validate() const;

  bool operator==(const DepthMap &) const = default;
};

// A depth map laid out as an 8-bit 4:2:0 picture so that a lossless 4:2:0 video
// codec can carry it. Each 2x2 cell of codes
//
//     d00 d01
//     d10 d11
//
// becomes four luma bytes holding the 8 MSBs of each code, plus
//     U = lo4(d00) << 4 | lo4(d01)
//     V = lo4(d10) << 4 | lo4(d11)
// which uses all 48 bits of the cell.
struct PackedDepthFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> y_plane;
  std::vector<std::uint8_t> u_plane;
  std::vector<std::uint8_t> v_plane;

  std::size_t byte_size() const { return y_plane.size() + u_plane.size() + v_plane.size(); }

  // Planes concatenated in I420 order.
  std::vector<std::uint8_t> to_i420() const;
  static PackedDepthFrame from_i420(std::span<const std::uint8_t> bytes, int width, int height);

  bool operator==(const PackedDepthFrame &) const = default;
};

PackedDepthFrame pack_depth(const DepthMap &depth);
DepthMap unpack_depth(const PackedDepthFrame &frame);

// Depth dump file: "FVVD", u16 width, u16 height, u32 frame index, u32 reserved (0),
// little-endian, then Y, U, V planes.
inline constexpr std::size_t kDepthFileHeaderSize = 16;

std::vector<std::uint8_t> serialize_packed_depth(const PackedDepthFrame &frame,
                                                 std::uint32_t frame_index);
PackedDepthFrame parse_packed_depth(std::span<const std::uint8_t> bytes,
                                    std::uint32_t *frame_index = nullptr);

} // namespace fvv
