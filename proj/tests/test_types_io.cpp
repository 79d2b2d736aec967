#include <cmath>
#include <fstream>

#include "doctest.h"
#include "pathsyn/io.hpp"
#include "pathsyn/types.hpp"
#include "support.hpp"

using namespace pathsyn;

TEST_CASE("pathology names round-trip and accept the NIH misspelling") {
  for (auto p : kAllPathologies) {
    const auto back = pathology_from_string(to_string(p));
    REQUIRE(back.has_value());
    CHECK(*back == p);
  }
  CHECK(pathology_from_string("Effustion") == Pathology::Effusion);
  CHECK_FALSE(pathology_from_string("Mass").has_value());
}

TEST_CASE("box scaling and outward rounding") {
  const BBox b{100, 200, 300, 150};
  const auto s = scale_box(b, 0.25);
  CHECK(s.x == 25);
  CHECK(s.y == 50);
  CHECK(s.w == 75);
  CHECK(s.h == 37.5);

  const auto r = outward_pixel_rect({1.5, 2.2, 3.0, 1.1}, 10, 10);
  CHECK(r == PixelRect{1, 2, 5, 4});
  // clipping
  CHECK(outward_pixel_rect({-3, -3, 5, 20}, 8, 8) == PixelRect{0, 0, 2, 8});
  CHECK(outward_pixel_rect({20, 20, 5, 5}, 8, 8).empty());
}

TEST_CASE("annotation box at another resolution") {
  Annotation a{"a.png", Pathology::Cardiomegaly, {100, 200, 300, 150}, 1024};
  const auto b = a.box_at(256);
  CHECK(b == BBox{25, 50, 75, 37.5});
}

TEST_CASE("quantize8 rounds to nearest and clamps") {
  CHECK(quantize8(0.0) == 0);
  CHECK(quantize8(1.0) == 255);
  CHECK(quantize8(-0.5) == 0);
  CHECK(quantize8(2.0) == 255);
  CHECK(quantize8(0.5) == 128);
  for (int k = 0; k < 256; ++k) CHECK(quantize8(k / 255.0) == k);
}

TEST_CASE("8-bit png round-trip is exact for representable values") {
  testing::TempDir dir("png8");
  std::mt19937_64 rng(5);
  const auto img = testing::random_image(rng, 17, 23);
  io::write_png8(dir / "a.png", img);
  const auto back = io::read_gray_png(dir / "a.png");
  REQUIRE(back.height() == 17);
  REQUIRE(back.width() == 23);
  CHECK(back.pixels() == img.pixels());
  CHECK(back.id() == "a.png");
}

TEST_CASE("16-bit png keeps depth") {
  testing::TempDir dir("png16");
  GrayImage img("x", 3, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = static_cast<double>(i * 4099) / 65535.0;
  io::write_png16(dir / "b.png", img);
  const auto raw = io::read_png(dir / "b.png");
  CHECK(raw.bit_depth == 16);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(raw.samples[i] == i * 4099);
}

TEST_CASE("1-bit png stores a mask") {
  testing::TempDir dir("png1");
  std::vector<std::uint8_t> bits = {0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0};
  io::write_png1(dir / "m.png", 3, 4, bits);
  const auto raw = io::read_png(dir / "m.png");
  REQUIRE(raw.samples.size() == bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) CHECK((raw.samples[i] != 0) == (bits[i] != 0));
}

TEST_CASE("in-memory png encoding decodes to the same pixels") {
  testing::TempDir dir("pngmem");
  std::mt19937_64 rng(9);
  const auto img = testing::random_image(rng, 8, 8);
  const auto bytes = io::encode_png8(img);
  CHECK(bytes.substr(1, 3) == "PNG");
  io::write_text_file(dir / "c.png", bytes);
  CHECK(io::read_gray_png(dir / "c.png").pixels() == img.pixels());
}

TEST_CASE("reading a missing or corrupt png fails with IoError") {
  testing::TempDir dir("pngbad");
  CHECK_THROWS_AS(io::read_png(dir / "nope.png"), IoError);
  io::write_text_file(dir / "bad.png", "not a png at all");
  CHECK_THROWS_AS(io::read_png(dir / "bad.png"), IoError);
}

TEST_CASE("key value parsing") {
  const auto kv = io::parse_key_values("# comment\n a = 1 \nb=two words\n\nc = x # trailing\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two words");
  CHECK(kv.size() == 3);
  CHECK_THROWS_AS(io::parse_key_values("a = 1\nno equals here\n"), ParseError);
}

TEST_CASE("key value files round-trip") {
  testing::TempDir dir("kv");
  io::KeyValues kv{{"alpha", "0.5"}, {"beta", "hello"}};
  io::write_key_values(dir / "k.txt", kv);
  CHECK(io::read_key_values(dir / "k.txt") == kv);
}

TEST_CASE("csv split and trim") {
  const auto f = io::split_csv_line("a, b,,c\r");
  REQUIRE(f.size() == 4);
  CHECK(f[0] == "a");
  CHECK(io::trim(f[1]) == "b");
  CHECK(f[2].empty());
  CHECK(io::trim(f[3]) == "c");
}

TEST_CASE("format_number is shortest round-trip") {
  CHECK(io::format_number(100.0) == "100");
  CHECK(io::format_number(37.5) == "37.5");
  CHECK(io::format_number(0.1) == "0.1");
  const double v = 1.0 / 3.0;
  CHECK(std::stod(io::format_number(v)) == v);
}
