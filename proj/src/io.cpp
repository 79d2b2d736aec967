#include "pathsyn/io.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace pathsyn::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Owns a libpng write struct and the rows handed to it.
class PngWriter {
 public:
  PngWriter() {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error_, png_error_fn, png_warning_fn);
    if (!png_) throw IoError("png: cannot allocate write struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_write_struct(&png_, nullptr);
      throw IoError("png: cannot allocate info struct");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  // Rows are packed per `bit_depth`; `sink` is either a FILE* or a custom
  // write function installed by the caller.
  template <typename Setup>
  void write(int height, int width, int bit_depth, std::vector<std::vector<png_byte>>& rows,
             Setup&& setup) {
    std::vector<png_bytep> row_ptrs(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) row_ptrs[i] = rows[i].data();
    if (setjmp(png_jmpbuf(png_))) throw IoError("png write failed: " + error_);
    setup(png_);
    png_set_IHDR(png_, info_, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_, info_);
    png_write_image(png_, row_ptrs.data());
    png_write_end(png_, nullptr);
  }

 private:
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
  std::string error_;
};

std::vector<std::vector<png_byte>> pack_rows8(const GrayImage& image) {
  std::vector<std::vector<png_byte>> rows(image.height(), std::vector<png_byte>(image.width()));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) rows[y][x] = quantize8(image.at(y, x));
  }
  return rows;
}

void write_rows_to_file(const std::filesystem::path& path, int height, int width, int depth,
                        std::vector<std::vector<png_byte>>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  PngWriter writer;
  writer.write(height, width, depth, rows, [&](png_structp png) { png_init_io(png, fp.get()); });
  if (std::fflush(fp.get()) != 0) throw IoError("write failed: " + path.string());
}

void append_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void no_flush(png_structp) {}

}  // namespace

RawGray read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }

  std::string error;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: cannot allocate info struct");
  }
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  RawGray out;
  std::vector<std::vector<png_byte>> rows;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    throw IoError("cannot decode " + path.string() + ": " + error);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host little-endian rows
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  if (png_get_channels(png, info) != 1) throw IoError("unsupported channel layout: " + path.string());

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  rows.assign(out.height, std::vector<png_byte>(rowbytes));
  row_ptrs.resize(out.height);
  for (int y = 0; y < out.height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);

  out.samples.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      std::uint16_t v;
      if (out.bit_depth == 16) {
        v = static_cast<std::uint16_t>(rows[y][2 * x] | (rows[y][2 * x + 1] << 8));
      } else {
        v = rows[y][x];
      }
      out.samples[static_cast<std::size_t>(y) * out.width + x] = v;
    }
  }
  return out;
}

GrayImage to_unit_image(const RawGray& raw, std::string id) {
  const double maxval = raw.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<double> pixels(raw.samples.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = raw.samples[i] / maxval;
  return GrayImage(std::move(id), raw.height, raw.width, std::move(pixels));
}

GrayImage read_gray_png(const std::filesystem::path& path) {
  return to_unit_image(read_png(path), path.filename().string());
}

void write_png8(const std::filesystem::path& path, const GrayImage& image) {
  auto rows = pack_rows8(image);
  write_rows_to_file(path, image.height(), image.width(), 8, rows);
}

void write_png16(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::vector<png_byte>> rows(image.height(),
                                          std::vector<png_byte>(2 * image.width()));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const auto v = static_cast<std::uint16_t>(
          std::lround(std::clamp(image.at(y, x), 0.0, 1.0) * 65535.0));
      rows[y][2 * x] = static_cast<png_byte>(v >> 8);
      rows[y][2 * x + 1] = static_cast<png_byte>(v & 0xff);
    }
  }
  write_rows_to_file(path, image.height(), image.width(), 16, rows);
}

void write_png1(const std::filesystem::path& path, int height, int width,
                const std::vector<std::uint8_t>& bits) {
  if (bits.size() != static_cast<std::size_t>(height) * width) {
    throw Error("mask buffer does not match dimensions");
  }
  std::vector<std::vector<png_byte>> rows(height, std::vector<png_byte>((width + 7) / 8, 0));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (bits[static_cast<std::size_t>(y) * width + x]) {
        rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
      }
    }
  }
  write_rows_to_file(path, height, width, 1, rows);
}

std::string encode_png8(const GrayImage& image) {
  auto rows = pack_rows8(image);
  std::string out;
  PngWriter writer;
  writer.write(image.height(), image.width(), 8, rows, [&](png_structp png) {
    png_set_write_fn(png, &out, append_to_string, no_flush);
  });
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    const auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    fields.emplace_back(trim(field));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected key = value", lineno);
    }
    auto key = std::string(trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key", lineno);
    kv[key] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_text_file(path));
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
  write_text_file(path, os.str());
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace pathsyn::io
