#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pathsyn/types.hpp"

namespace pathsyn::io {

// Decoded grayscale PNG at its stored bit depth (8 or 16).
struct RawGray {
  int height = 0;
  int width = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

// Reads any PNG, reducing colour to luminance and dropping alpha. Sub-byte
// depths are expanded to 8 bits.
RawGray read_png(const std::filesystem::path& path);

// Linear map from the declared bit depth to [0,1].
GrayImage to_unit_image(const RawGray& raw, std::string id);

// Convenience: read_png followed by to_unit_image; id is the file name.
GrayImage read_gray_png(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, const GrayImage& image);
void write_png16(const std::filesystem::path& path, const GrayImage& image);
// 1-bit PNG; nonzero samples become 1.
void write_png1(const std::filesystem::path& path, int height, int width,
                const std::vector<std::uint8_t>& bits);

std::string encode_png8(const GrayImage& image);

// CSV helpers. Fields never contain commas in any format this project emits.
std::vector<std::string> split_csv_line(std::string_view line);
std::string_view trim(std::string_view s);

// Formats a double with the shortest representation that round-trips.
std::string format_number(double v);

// Flat `key = value` text with `#` comments.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& path);
KeyValues parse_key_values(std::string_view text);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

void ensure_directory(const std::filesystem::path& dir);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace pathsyn::io
