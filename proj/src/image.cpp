#include "fvv/image.hpp"

#include "fvv/bytes.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace fvv {

I420Frame::I420Frame(int w, int h, std::uint8_t y_fill, std::uint8_t c_fill)
    : width(w), height(h), data(byte_size(w, h), c_fill) {
  std::fill_n(data.begin(), luma_size(), y_fill);
}

std::size_t Bitmap::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
}

std::vector<std::uint8_t> Bitmap::pack() const {
  const int stride = (width + 7) / 8;
  std::vector<std::uint8_t> out(packed_size(width, height), 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (at(x, y)) {
        out[static_cast<std::size_t>(y) * stride + x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
      }
    }
  }
  return out;
}

Bitmap Bitmap::unpack(std::span<const std::uint8_t> packed, int w, int h) {
  if (packed.size() != packed_size(w, h)) {
    throw FormatError("bitmap payload has wrong size");
  }
  const int stride = (w + 7) / 8;
  Bitmap out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.set(x, y, (packed[static_cast<std::size_t>(y) * stride + x / 8] & (0x80 >> (x % 8))) != 0);
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError("write failed for " + path.string());
  }
}

std::vector<std::uint8_t> i420_to_rgb(const I420Frame &frame) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(frame.width) * frame.height * 3);
  const auto y = frame.y();
  const auto u = frame.u();
  const auto v = frame.v();
  const int cw = frame.chroma_width();
  auto clamp8 = [](double x) {
    return static_cast<std::uint8_t>(std::clamp(static_cast<int>(x + 0.5), 0, 255));
  };
  for (int r = 0; r < frame.height; ++r) {
    for (int c = 0; c < frame.width; ++c) {
      const std::size_t ci = static_cast<std::size_t>(r / 2) * cw + c / 2;
      const double yy = y[static_cast<std::size_t>(r) * frame.width + c];
      const double cb = u[ci] - 128.0;
      const double cr = v[ci] - 128.0;
      auto *px = &rgb[(static_cast<std::size_t>(r) * frame.width + c) * 3];
      px[0] = clamp8(yy + 1.402 * cr);
      px[1] = clamp8(yy - 0.344136 * cb - 0.714136 * cr);
      px[2] = clamp8(yy + 1.772 * cb);
    }
  }
  return rgb;
}

std::vector<std::uint8_t> encode_png(const I420Frame &frame) {
  const auto rgb = i420_to_rgb(frame);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("png encode failed: out of memory");
  }
  std::vector<std::uint8_t> out;
  out.reserve(rgb.size() / 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png encode failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto *v = static_cast<std::vector<std::uint8_t> *>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      nullptr);
  // Per-frame output for a live viewer: speed over size.
  png_set_compression_level(png, 1);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_SUB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(frame.width), static_cast<png_uint_32>(frame.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(frame.width) * 3;
  for (int y = 0; y < frame.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> serialize_color(const I420Frame &frame, std::uint32_t frame_index) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + frame.data.size());
  ByteWriter w(out);
  w.tag("FVVI");
  w.u16(static_cast<std::uint16_t>(frame.width));
  w.u16(static_cast<std::uint16_t>(frame.height));
  w.u32(frame_index);
  w.u32(0);
  w.bytes(frame.data);
  return out;
}

I420Frame parse_color(std::span<const std::uint8_t> bytes, std::uint32_t *frame_index) {
  try {
    ByteReader r(bytes);
    if (r.tag() != "FVVI") {
      throw FormatError("color file: bad magic");
    }
    I420Frame f;
    f.width = r.u16();
    f.height = r.u16();
    const auto idx = r.u32();
    r.u32();
    if (f.width % 2 != 0 || f.height % 2 != 0) {
      throw FormatError("color file: odd dimensions");
    }
    const auto plane = r.bytes(I420Frame::byte_size(f.width, f.height));
    if (r.remaining() != 0) {
      throw FormatError("color file: trailing bytes");
    }
    f.data.assign(plane.begin(), plane.end());
    if (frame_index != nullptr) {
      *frame_index = idx;
    }
    return f;
  } catch (const std::out_of_range &) {
    throw FormatError("color file: truncated");
  }
}

namespace {

// Reads the whitespace/comment separated header tokens of a netpbm file.
struct PnmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, int tokens) {
  PnmHeader h;
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') {
          ++pos;
        }
      } else if (std::isspace(bytes[pos]) != 0) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && std::isspace(bytes[pos]) == 0) {
      tok.push_back(static_cast<char>(bytes[pos++]));
    }
    if (tok.empty()) {
      throw FormatError("netpbm: truncated header");
    }
    return tok;
  };
  h.magic = next_token();
  try {
    h.width = std::stoi(next_token());
    h.height = std::stoi(next_token());
    if (tokens == 4) {
      h.maxval = std::stoi(next_token());
    }
  } catch (const std::logic_error &) {
    throw FormatError("netpbm: malformed header");
  }
  if (pos >= bytes.size()) {
    throw FormatError("netpbm: missing raster");
  }
  h.data_offset = pos + 1; // single whitespace byte after the last token
  return h;
}

} // namespace

std::vector<std::uint8_t> serialize_pbm(const Bitmap &mask) {
  const std::string header = "P4\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto packed = mask.pack();
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

Bitmap parse_pbm(std::span<const std::uint8_t> bytes) {
  const auto h = parse_pnm_header(bytes, 3);
  if (h.magic != "P4") {
    throw FormatError("pbm: expected P4");
  }
  if (h.width <= 0 || h.height <= 0) {
    throw FormatError("pbm: bad dimensions");
  }
  const auto raster = bytes.subspan(h.data_offset);
  if (raster.size() != Bitmap::packed_size(h.width, h.height)) {
    throw FormatError("pbm: raster size mismatch");
  }
  return Bitmap::unpack(raster, h.width, h.height);
}

std::vector<std::uint8_t> serialize_pgm16(int w, int h, std::span<const std::uint16_t> values) {
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n4095\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + values.size() * 2);
  for (auto v : values) {
    out.push_back(static_cast<std::uint8_t>(v >> 8)); // netpbm is big-endian
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  return out;
}

std::vector<std::uint16_t> parse_pgm16(std::span<const std::uint8_t> bytes, int &w, int &h) {
  const auto hdr = parse_pnm_header(bytes, 4);
  if (hdr.magic != "P5" || hdr.maxval < 256 || hdr.maxval > 65535) {
    throw FormatError("pgm: expected 16-bit P5");
  }
  w = hdr.width;
  h = hdr.height;
  const auto raster = bytes.subspan(hdr.data_offset);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (raster.size() != n * 2) {
    throw FormatError("pgm: raster size mismatch");
  }
  std::vector<std::uint16_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1]);
  }
  return out;
}

} // namespace fvv
