#include "fvv/depth_codec.hpp"

#include <doctest.h>

#include <random>

using namespace fvv;

namespace {

DepthMap cell(std::uint16_t d00, std::uint16_t d01, std::uint16_t d10, std::uint16_t d11) {
  DepthMap d(2, 2);
  d.at(0, 0) = d00;
  d.at(1, 0) = d01;
  d.at(0, 1) = d10;
  d.at(1, 1) = d11;
  return d;
}

DepthMap random_map(std::mt19937 &rng, int w, int h) {
  std::uniform_int_distribution<int> code(0, 4095);
  DepthMap d(w, h);
  for (auto &c : d.codes) {
    c = static_cast<std::uint16_t>(code(rng));
  }
  return d;
}

} // namespace

TEST_CASE("zero cell packs to zero bytes") {
  const auto f = pack_depth(cell(0, 0, 0, 0));
  CHECK(f.y_plane == std::vector<std::uint8_t>{0, 0, 0, 0});
  CHECK(f.u_plane == std::vector<std::uint8_t>{0});
  CHECK(f.v_plane == std::vector<std::uint8_t>{0});
}

TEST_CASE("cell layout: MSBs in luma, LSB nibbles paired in chroma") {
  const auto f = pack_depth(cell(0xABC, 0x123, 0xFFF, 0x000));
  CHECK(f.y_plane == std::vector<std::uint8_t>{0xAB, 0x12, 0xFF, 0x00});
  CHECK(f.u_plane == std::vector<std::uint8_t>{0xC3});
  CHECK(f.v_plane == std::vector<std::uint8_t>{0xF0});
}

TEST_CASE("unpack inverts the layout") {
  PackedDepthFrame f;
  f.width = 2;
  f.height = 2;
  f.y_plane = {0xAB, 0x12, 0xFF, 0x00};
  f.u_plane = {0xC3};
  f.v_plane = {0xF0};
  CHECK(unpack_depth(f) == cell(0xABC, 0x123, 0xFFF, 0x000));

  PackedDepthFrame ones;
  ones.width = 8;
  ones.height = 4;
  ones.y_plane.assign(32, 0xFF);
  ones.u_plane.assign(8, 0xFF);
  ones.v_plane.assign(8, 0xFF);
  const auto d = unpack_depth(ones);
  CHECK(std::all_of(d.codes.begin(), d.codes.end(), [](auto c) { return c == 0xFFF; }));
}

TEST_CASE("exhaustive single-cell sweep round-trips") {
  for (int pos = 0; pos < 4; ++pos) {
    for (int v = 0; v < 4096; ++v) {
      DepthMap d(2, 2, 0x5A5);
      d.codes[static_cast<std::size_t>(pos)] = static_cast<std::uint16_t>(v);
      REQUIRE(unpack_depth(pack_depth(d)) == d);
    }
  }
}

TEST_CASE("random maps round-trip and packed size is 1.5 bytes per pixel") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto d = random_map(rng, 64, 64);
    const auto f = pack_depth(d);
    REQUIRE(f.byte_size() == 64 * 64 * 3 / 2);
    REQUIRE(unpack_depth(f) == d);
  }
}

TEST_CASE("changing one code touches its luma byte and exactly one chroma byte") {
  std::mt19937 rng(12);
  std::uniform_int_distribution<int> x(0, 15);
  std::uniform_int_distribution<int> code(0, 4095);
  for (int trial = 0; trial < 500; ++trial) {
    auto d = random_map(rng, 16, 16);
    const auto before = pack_depth(d).to_i420();
    const int px = x(rng);
    const int py = x(rng);
    d.at(px, py) = static_cast<std::uint16_t>(code(rng));
    const auto after = pack_depth(d).to_i420();

    const std::size_t luma_index = static_cast<std::size_t>(py) * 16 + px;
    const std::size_t chroma_index = 256 + (py % 2 == 0 ? 0 : 64) + static_cast<std::size_t>(py / 2) * 8 + px / 2;
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (i != luma_index && i != chroma_index) {
        REQUIRE(before[i] == after[i]);
      }
    }
  }
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(pack_depth(DepthMap(3, 2)), DepthCodecError);
  CHECK_THROWS_AS(pack_depth(DepthMap(2, 5)), DepthCodecError);
  CHECK_THROWS_AS(pack_depth(cell(0, 4096, 0, 0)), DepthCodecError);

  PackedDepthFrame f;
  f.width = 4;
  f.height = 4;
  f.y_plane.assign(16, 0);
  f.u_plane.assign(4, 0);
  f.v_plane.assign(3, 0);
  CHECK_THROWS_AS(unpack_depth(f), DepthCodecError);
}

TEST_CASE("depth dump file is byte-exact") {
  const auto f = pack_depth(cell(0xABC, 0x123, 0xFFF, 0x000));
  const auto bytes = serialize_packed_depth(f, 0x01020304);
  const std::vector<std::uint8_t> expected = {'F', 'V', 'V', 'D', 2, 0, 2, 0, 4, 3, 2, 1, 0, 0, 0, 0,
                                              0xAB, 0x12, 0xFF, 0x00, 0xC3, 0xF0};
  CHECK(bytes == expected);

  std::uint32_t index = 0;
  CHECK(parse_packed_depth(bytes, &index) == f);
  CHECK(index == 0x01020304);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_packed_depth(bad), DepthCodecError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_packed_depth(bad), DepthCodecError);
}
