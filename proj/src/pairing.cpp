#include "pathsyn/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "pathsyn/io.hpp"

namespace pathsyn::pairing {

namespace fs = std::filesystem;

BinaryMask::BinaryMask(int height, int width, PixelRect rect)
    : height_(height), width_(width), rect_(rect) {
  if (height < 1 || width < 1) throw Error("mask dimensions must be positive");
  if (rect.empty() || rect.x0 < 0 || rect.y0 < 0 || rect.x1 > width || rect.y1 > height) {
    throw Error("mask region must be a non-empty rectangle inside the image");
  }
}

std::vector<std::uint8_t> BinaryMask::bits() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(height_) * width_, 0);
  for (int y = rect_.y0; y < rect_.y1; ++y) {
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(y) * width_ + rect_.x0, rect_.width(), 1);
  }
  return out;
}

std::string_view to_string(Source s) { return s == Source::Disease ? "disease" : "healthy"; }

BinaryMask mask_from_bbox(const BBox& box, int height, int width) {
  const auto rect = outward_pixel_rect(box, height, width);
  if (rect.empty()) throw Error("degenerate annotation: box has zero area inside the image");
  return BinaryMask(height, width, rect);
}

GrayImage apply_mask(const GrayImage& y, const BinaryMask& m) {
  if (y.height() != m.height() || y.width() != m.width()) {
    throw Error("apply_mask: image and mask dimensions differ");
  }
  GrayImage out(y.id(), y.height(), y.width(), 0.0);
  const auto& r = m.rect();
  for (int row = r.y0; row < r.y1; ++row) {
    for (int col = r.x0; col < r.x1; ++col) out.at(row, col) = y.at(row, col);
  }
  return out;
}

BinaryMask random_mask(int height, int width, std::uint64_t seed) {
  if (height < 32 || width < 32) throw Error("random_mask needs an image of at least 32x32");
  std::mt19937_64 rng(seed);
  auto side_range = [](int side) {
    const int lo = static_cast<int>(std::ceil(0.15 * side));
    const int hi = static_cast<int>(std::floor(0.40 * side));
    return std::pair{lo, hi};
  };
  const auto [hlo, hhi] = side_range(height);
  const auto [wlo, whi] = side_range(width);
  const int h = std::uniform_int_distribution<int>(hlo, hhi)(rng);
  const int w = std::uniform_int_distribution<int>(wlo, whi)(rng);
  // Central 80%: [ceil(0.1 side), floor(0.9 side)).
  const int y_min = static_cast<int>(std::ceil(0.1 * height));
  const int y_max = static_cast<int>(std::floor(0.9 * height)) - h;
  const int x_min = static_cast<int>(std::ceil(0.1 * width));
  const int x_max = static_cast<int>(std::floor(0.9 * width)) - w;
  const int y0 = std::uniform_int_distribution<int>(y_min, y_max)(rng);
  const int x0 = std::uniform_int_distribution<int>(x_min, x_max)(rng);
  return BinaryMask(height, width, {x0, y0, x0 + w, y0 + h});
}

TrainingPair make_disease_pair(const Annotation& annotation, const GrayImage& image,
                               std::string id) {
  if (image.height() != image.width()) throw Error("working images must be square");
  const auto box = annotation.box_at(image.height());
  auto m = mask_from_bbox(box, image.height(), image.width());
  auto x = apply_mask(image, m);
  return TrainingPair{std::move(id), std::move(x), image, std::move(m), Source::Disease,
                      annotation};
}

TrainingPair make_healthy_pair(const GrayImage& image, std::uint64_t mask_seed, std::string id) {
  auto m = random_mask(image.height(), image.width(), mask_seed);
  auto x = apply_mask(image, m);
  return TrainingPair{std::move(id), std::move(x), image, std::move(m), Source::Healthy,
                      std::nullopt};
}

std::vector<TrainingPair> make_pairs(const std::vector<Annotation>& annotations,
                                     const corpus::ImageStore& images,
                                     const std::vector<GrayImage>& healthy, std::uint64_t seed) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(annotations.size() + healthy.size());
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const GrayImage* image = nullptr;
    try {
      image = &images.get(a.image_id);
    } catch (const Error& e) {
      throw IoError("annotation " + std::to_string(i) + " (" + a.image_id + ", " +
                    std::string(to_string(a.pathology)) + "): " + e.what());
    }
    pairs.push_back(make_disease_pair(a, *image, "d" + std::to_string(i)));
  }
  std::mt19937_64 mask_rng(seed ^ 0x5bd1e995ULL);
  for (std::size_t i = 0; i < healthy.size(); ++i) {
    pairs.push_back(make_healthy_pair(healthy[i], mask_rng(), "h" + std::to_string(i)));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

namespace {

constexpr int kMaxRedraws = 10;

struct Point {
  double x, y;
};

Point rotate_about(Point p, Point c, double radians) {
  const double cs = std::cos(radians), sn = std::sin(radians);
  const double dx = p.x - c.x, dy = p.y - c.y;
  return {c.x + cs * dx - sn * dy, c.y + sn * dx + cs * dy};
}

// Continuous bounds of the rotated mask rectangle, or nullopt if it leaves
// the frame.
std::optional<BBox> rotated_bounds(const PixelRect& r, int height, int width, double degrees) {
  const Point c{width / 2.0, height / 2.0};
  const double rad = degrees * std::numbers::pi / 180.0;
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const Point p : {Point{double(r.x0), double(r.y0)}, Point{double(r.x1), double(r.y0)},
                        Point{double(r.x0), double(r.y1)}, Point{double(r.x1), double(r.y1)}}) {
    const auto q = rotate_about(p, c, rad);
    x0 = std::min(x0, q.x);
    y0 = std::min(y0, q.y);
    x1 = std::max(x1, q.x);
    y1 = std::max(y1, q.y);
  }
  if (x0 < 0 || y0 < 0 || x1 > width || y1 > height) return std::nullopt;
  return BBox{x0, y0, x1 - x0, y1 - y0};
}

double sample_bilinear_clamped(const GrayImage& img, double fx, double fy) {
  fx = std::clamp(fx, 0.0, static_cast<double>(img.width() - 1));
  fy = std::clamp(fy, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double tx = fx - x0, ty = fy - y0;
  const double top = img.at(y0, x0) + tx * (img.at(y0, x1) - img.at(y0, x0));
  const double bot = img.at(y1, x0) + tx * (img.at(y1, x1) - img.at(y1, x0));
  return top + ty * (bot - top);
}

GrayImage rotate_image(const GrayImage& img, double degrees) {
  GrayImage out(img.id(), img.height(), img.width());
  const Point c{img.width() / 2.0, img.height() / 2.0};
  const double rad = -degrees * std::numbers::pi / 180.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto src = rotate_about({x + 0.5, y + 0.5}, c, rad);
      out.at(y, x) = sample_bilinear_clamped(img, src.x - 0.5, src.y - 0.5);
    }
  }
  return out;
}

GrayImage reflect_image(const GrayImage& img) {
  GrayImage out(img.id(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.at(y, x) = img.at(y, img.width() - 1 - x);
  }
  return out;
}

GrayImage crop_image(const GrayImage& img, const PixelRect& window) {
  GrayImage out(img.id(), window.height(), window.width());
  for (int y = 0; y < window.height(); ++y) {
    for (int x = 0; x < window.width(); ++x) out.at(y, x) = img.at(window.y0 + y, window.x0 + x);
  }
  return out;
}

}  // namespace

AugmentParams draw_augment(const TrainingPair& p, const std::set<AugmentOp>& ops,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams params;
  PixelRect rect = p.m.rect();
  const int height = p.y.height(), width = p.y.width();

  if (ops.count(AugmentOp::Rotate)) {
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const double deg = -10.0 + 20.0 * unit(rng);
      if (auto bounds = rotated_bounds(rect, height, width, deg)) {
        params.rotate_degrees = deg;
        rect = outward_pixel_rect(*bounds, height, width);
        break;
      }
    }
  }
  if (ops.count(AugmentOp::Reflect)) {
    params.reflect = true;
    rect = {width - rect.x1, rect.y0, width - rect.x0, rect.y1};
  }
  if (ops.count(AugmentOp::Crop)) {
    const int side = std::min(height, width);
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const double scale = 0.9 + 0.1 * unit(rng);
      const int cs = static_cast<int>(std::lround(scale * side));
      const int x_lo = std::max(0, rect.x1 - cs), x_hi = std::min(rect.x0, width - cs);
      const int y_lo = std::max(0, rect.y1 - cs), y_hi = std::min(rect.y0, height - cs);
      if (x_lo > x_hi || y_lo > y_hi) continue;
      const int x0 = std::uniform_int_distribution<int>(x_lo, x_hi)(rng);
      const int y0 = std::uniform_int_distribution<int>(y_lo, y_hi)(rng);
      params.crop = PixelRect{x0, y0, x0 + cs, y0 + cs};
      break;
    }
  }
  return params;
}

TrainingPair apply_augment(const TrainingPair& p, const AugmentParams& params) {
  GrayImage y = p.y;
  PixelRect rect = p.m.rect();
  const int height = y.height(), width = y.width();

  if (params.rotate_degrees) {
    const auto bounds = rotated_bounds(rect, height, width, *params.rotate_degrees);
    if (!bounds) throw Error("rotation moves the mask region out of frame");
    y = rotate_image(y, *params.rotate_degrees);
    rect = outward_pixel_rect(*bounds, height, width);
  }
  if (params.reflect) {
    y = reflect_image(y);
    rect = {width - rect.x1, rect.y0, width - rect.x0, rect.y1};
  }
  if (params.crop) {
    const auto& w = *params.crop;
    if (w.x0 > rect.x0 || w.y0 > rect.y0 || w.x1 < rect.x1 || w.y1 < rect.y1) {
      throw Error("crop window cuts the mask region");
    }
    y = corpus::resize_bilinear(crop_image(y, w), height, width);
    const double fx = static_cast<double>(width) / w.width();
    const double fy = static_cast<double>(height) / w.height();
    const BBox moved{(rect.x0 - w.x0) * fx, (rect.y0 - w.y0) * fy, rect.width() * fx,
                     rect.height() * fy};
    rect = outward_pixel_rect(moved, height, width);
  }

  TrainingPair out{p.id, GrayImage{}, std::move(y), BinaryMask(height, width, rect), p.source,
                   p.annotation};
  out.y.set_id(p.y.id());
  out.x = apply_mask(out.y, out.m);
  if (out.annotation && (params.rotate_degrees || params.reflect || params.crop)) {
    out.annotation->box = to_bbox(rect);
    out.annotation->native_resolution = height;
  }
  return out;
}

TrainingPair augment_pair(const TrainingPair& p, const std::set<AugmentOp>& ops,
                          std::uint64_t seed) {
  if (ops.empty()) return p;
  return apply_augment(p, draw_augment(p, ops, seed));
}

std::set<AugmentOp> parse_augment_ops(const std::string& csv) {
  std::set<AugmentOp> ops;
  if (io::trim(csv).empty() || io::trim(csv) == "none") return ops;
  for (const auto& name : io::split_csv_line(csv)) {
    if (name == "rotate") {
      ops.insert(AugmentOp::Rotate);
    } else if (name == "reflect") {
      ops.insert(AugmentOp::Reflect);
    } else if (name == "crop") {
      ops.insert(AugmentOp::Crop);
    } else {
      throw Error("unknown augmentation op '" + name + "' (expected rotate, reflect, crop)");
    }
  }
  return ops;
}

void write_pair_cache(const fs::path& dir, const std::vector<TrainingPair>& pairs,
                      std::uint64_t seed) {
  io::ensure_directory(dir);
  std::ostringstream manifest;
  manifest << "pair_id,source,image_id,label,x,y,w,h,seed\n";
  for (const auto& p : pairs) {
    io::write_png8(dir / (p.id + "_x.png"), p.x);
    io::write_png8(dir / (p.id + "_y.png"), p.y);
    io::write_png1(dir / (p.id + "_m.png"), p.m.height(), p.m.width(), p.m.bits());
    const auto& r = p.m.rect();
    manifest << p.id << ',' << to_string(p.source) << ',' << p.y.id() << ','
             << (p.annotation ? std::string(pathsyn::to_string(p.annotation->pathology)) : "")
             << ',' << r.x0 << ',' << r.y0 << ',' << r.width() << ',' << r.height() << ',' << seed
             << '\n';
  }
  io::write_text_file(dir / "manifest.csv", manifest.str());
}

std::vector<TrainingPair> read_pair_cache(const fs::path& dir) {
  std::istringstream in(io::read_text_file(dir / "manifest.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<TrainingPair> pairs;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() < 9) throw ParseError("pair manifest row " + std::to_string(row) + " is short", row);
    const auto& id = f[0];
    auto y = io::read_gray_png(dir / (id + "_y.png"));
    y.set_id(f[2]);
    const auto raw_mask = io::read_png(dir / (id + "_m.png"));
    PixelRect rect{std::stoi(f[4]), std::stoi(f[5]), std::stoi(f[4]) + std::stoi(f[6]),
                   std::stoi(f[5]) + std::stoi(f[7])};
    BinaryMask m(y.height(), y.width(), rect);
    // The 1-bit image must agree with the manifest rectangle.
    const auto bits = m.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if ((raw_mask.samples[i] != 0) != (bits[i] != 0)) {
        throw ParseError("mask image disagrees with manifest for pair " + id, row);
      }
    }
    TrainingPair p{id, apply_mask(y, m), std::move(y), std::move(m),
                   f[1] == "healthy" ? Source::Healthy : Source::Disease, std::nullopt};
    if (p.source == Source::Disease) {
      const auto label = pathology_from_string(f[3]);
      if (!label) throw ParseError("unknown label in pair manifest row " + std::to_string(row), row);
      p.annotation = Annotation{f[2], *label, to_bbox(rect), p.y.height()};
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace pathsyn::pairing
