#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fvv {

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// 8-bit planar 4:2:0 frame in I420 order: Y (w*h), then U, then V (w/2*h/2 each).
struct I420Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  I420Frame() = default;
  I420Frame(int w, int h, std::uint8_t y_fill = 0, std::uint8_t c_fill = 128);

  static std::size_t byte_size(int w, int h) {
    return static_cast<std::size_t>(w) * h * 3 / 2;
  }

  int chroma_width() const { return width / 2; }
  int chroma_height() const { return height / 2; }
  std::size_t luma_size() const { return static_cast<std::size_t>(width) * height; }
  std::size_t chroma_size() const { return luma_size() / 4; }

  std::span<std::uint8_t> y() { return {data.data(), luma_size()}; }
  std::span<std::uint8_t> u() { return {data.data() + luma_size(), chroma_size()}; }
  std::span<std::uint8_t> v() { return {data.data() + luma_size() + chroma_size(), chroma_size()}; }
  std::span<const std::uint8_t> y() const { return {data.data(), luma_size()}; }
  std::span<const std::uint8_t> u() const { return {data.data() + luma_size(), chroma_size()}; }
  std::span<const std::uint8_t> v() const {
    return {data.data() + luma_size() + chroma_size(), chroma_size()};
  }

  bool operator==(const I420Frame &) const = default;
};

// One flag per pixel in memory; serialized at 1 bpp (rows padded to whole bytes, MSB first).
struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Bitmap() = default;
  Bitmap(int w, int h, bool fill = false)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool on) { bits[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0; }
  std::size_t count() const;

  static std::size_t packed_size(int w, int h) {
    return static_cast<std::size_t>((w + 7) / 8) * h;
  }
  std::vector<std::uint8_t> pack() const;
  static Bitmap unpack(std::span<const std::uint8_t> packed, int w, int h);

  bool operator==(const Bitmap &) const = default;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

// PNG (8-bit RGB) from an I420 frame, full-range BT.601 conversion.
std::vector<std::uint8_t> encode_png(const I420Frame &frame);
std::vector<std::uint8_t> i420_to_rgb(const I420Frame &frame);

// Color frame file: 16-byte header ("FVVI", u16 w, u16 h, u32 frame index, u32 reserved)
// followed by the I420 planes.
std::vector<std::uint8_t> serialize_color(const I420Frame &frame, std::uint32_t frame_index);
I420Frame parse_color(std::span<const std::uint8_t> bytes, std::uint32_t *frame_index = nullptr);

// Binary PBM (P4). Set bits are foreground.
std::vector<std::uint8_t> serialize_pbm(const Bitmap &mask);
Bitmap parse_pbm(std::span<const std::uint8_t> bytes);

// 16-bit binary PGM (P5, maxval 4095) used to exchange raw depth codes.
std::vector<std::uint8_t> serialize_pgm16(int w, int h, std::span<const std::uint16_t> values);
std::vector<std::uint16_t> parse_pgm16(std::span<const std::uint8_t> bytes, int &w, int &h);

} // namespace fvv
