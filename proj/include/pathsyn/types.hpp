#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pathsyn {

// Error categories surfaced by the library. The CLI maps all of them to a
// runtime failure exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

enum class Pathology {
  Atelectasis,
  Cardiomegaly,
  Effusion,
  Infiltration,
  Pneumonia,
  Pneumothorax,
};

inline constexpr std::array<Pathology, 6> kAllPathologies = {
    Pathology::Atelectasis, Pathology::Cardiomegaly, Pathology::Effusion,
    Pathology::Infiltration, Pathology::Pneumonia,   Pathology::Pneumothorax,
};
inline constexpr std::size_t kNumPathologies = kAllPathologies.size();

std::string_view to_string(Pathology p);
std::optional<Pathology> pathology_from_string(std::string_view name);
inline std::size_t index_of(Pathology p) { return static_cast<std::size_t>(p); }

// Axis-aligned box in pixel coordinates; x/y is the top-left corner.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  bool operator==(const BBox&) const = default;
};

// Integer pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const PixelRect&) const = default;
};

// Scales a box by `factor`.
BBox scale_box(const BBox& box, double factor);

// Rounds a continuous box outward (floor on origin, ceil on far edge) and
// clips it to an H x W grid. May return an empty rect.
PixelRect outward_pixel_rect(const BBox& box, int height, int width);

inline BBox to_bbox(const PixelRect& r) {
  return {static_cast<double>(r.x0), static_cast<double>(r.y0),
          static_cast<double>(r.width()), static_cast<double>(r.height())};
}

struct Annotation {
  std::string image_id;
  Pathology pathology = Pathology::Atelectasis;
  BBox box;
  int native_resolution = 1024;

  // Box expressed at `resolution` pixels per side.
  BBox box_at(int resolution) const {
    return scale_box(box, static_cast<double>(resolution) / native_resolution);
  }
};

// Single-channel image with intensities in [0,1], row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(std::string id, int height, int width, double fill = 0.0);
  GrayImage(std::string id, int height, int width, std::vector<double> pixels);

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }

  double& at(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<double>& pixels() { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  bool same_shape(const GrayImage& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

 private:
  std::string id_;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// Quantizes a [0,1] intensity to 8 bits, as written to PNG.
std::uint8_t quantize8(double v);

}  // namespace pathsyn
