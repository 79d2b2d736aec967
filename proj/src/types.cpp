#include "pathsyn/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace pathsyn {

namespace {
constexpr std::array<std::string_view, kNumPathologies> kNames = {
    "Atelectasis", "Cardiomegaly", "Effusion", "Infiltration", "Pneumonia", "Pneumothorax",
};
}  // namespace

std::string_view to_string(Pathology p) { return kNames[index_of(p)]; }

std::optional<Pathology> pathology_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return kAllPathologies[i];
  }
  // The NIH release spells it this way in some exports.
  if (name == "Effustion") return Pathology::Effusion;
  return std::nullopt;
}

BBox scale_box(const BBox& box, double factor) {
  return {box.x * factor, box.y * factor, box.w * factor, box.h * factor};
}

PixelRect outward_pixel_rect(const BBox& box, int height, int width) {
  // Tolerate representation noise from scaling so exact integers stay put.
  constexpr double kSlack = 1e-9;
  PixelRect r;
  r.x0 = static_cast<int>(std::floor(box.x + kSlack));
  r.y0 = static_cast<int>(std::floor(box.y + kSlack));
  r.x1 = static_cast<int>(std::ceil(box.right() - kSlack));
  r.y1 = static_cast<int>(std::ceil(box.bottom() - kSlack));
  r.x0 = std::clamp(r.x0, 0, width);
  r.x1 = std::clamp(r.x1, 0, width);
  r.y0 = std::clamp(r.y0, 0, height);
  r.y1 = std::clamp(r.y1, 0, height);
  return r;
}

GrayImage::GrayImage(std::string id, int height, int width, double fill)
    : id_(std::move(id)),
      height_(height),
      width_(width),
      pixels_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 1 || width < 1) throw Error("image dimensions must be positive");
}

GrayImage::GrayImage(std::string id, int height, int width, std::vector<double> pixels)
    : id_(std::move(id)), height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) throw Error("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(height) * width) {
    throw Error("pixel buffer does not match image dimensions");
  }
}

std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace pathsyn
