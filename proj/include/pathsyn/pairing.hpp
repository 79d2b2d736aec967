#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pathsyn/corpus.hpp"
#include "pathsyn/types.hpp"

namespace pathsyn::pairing {

// Binary mask whose 1-region is a single non-empty axis-aligned rectangle.
class BinaryMask {
 public:
  BinaryMask(int height, int width, PixelRect rect);

  int height() const { return height_; }
  int width() const { return width_; }
  const PixelRect& rect() const { return rect_; }
  std::uint8_t at(int y, int x) const { return rect_.contains(x, y) ? 1 : 0; }
  long sum() const { return rect_.area(); }
  // Row-major 0/1 buffer.
  std::vector<std::uint8_t> bits() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_;
  int width_;
  PixelRect rect_;
};

enum class Source { Disease, Healthy };
std::string_view to_string(Source s);

struct TrainingPair {
  std::string id;
  GrayImage x;  // y with everything outside the mask zeroed
  GrayImage y;
  BinaryMask m;
  Source source = Source::Disease;
  std::optional<Annotation> annotation;  // present iff source == Disease
};

// Mask that is 1 inside `box` (rounded outward, clipped to H x W).
BinaryMask mask_from_bbox(const BBox& box, int height, int width);

GrayImage apply_mask(const GrayImage& y, const BinaryMask& m);

// Rectangle sides uniform over [ceil(0.15 side), floor(0.40 side)], placed
// uniformly inside the central 80% of the image.
BinaryMask random_mask(int height, int width, std::uint64_t seed);

TrainingPair make_disease_pair(const Annotation& annotation, const GrayImage& image,
                               std::string id);
TrainingPair make_healthy_pair(const GrayImage& image, std::uint64_t mask_seed, std::string id);

// One disease pair per annotation plus one healthy pair per healthy image,
// shuffled with `seed`.
std::vector<TrainingPair> make_pairs(const std::vector<Annotation>& annotations,
                                     const corpus::ImageStore& images,
                                     const std::vector<GrayImage>& healthy, std::uint64_t seed);

enum class AugmentOp { Rotate, Reflect, Crop };

struct AugmentParams {
  std::optional<double> rotate_degrees;
  bool reflect = false;
  // Crop window in pre-crop coordinates (square).
  std::optional<PixelRect> crop;
};

// Draws transform parameters; a crop that cannot hold the mask region after
// 10 draws is dropped.
AugmentParams draw_augment(const TrainingPair& p, const std::set<AugmentOp>& ops,
                           std::uint64_t seed);

// Applies the transform to y and m jointly and recomputes x = y * m.
TrainingPair apply_augment(const TrainingPair& p, const AugmentParams& params);

TrainingPair augment_pair(const TrainingPair& p, const std::set<AugmentOp>& ops,
                          std::uint64_t seed);

std::set<AugmentOp> parse_augment_ops(const std::string& csv);

// Pair cache: x.png / y.png (8-bit) and m.png (1-bit) per pair plus
// manifest.csv `pair_id,source,image_id,label,x,y,w,h,seed`.
void write_pair_cache(const std::filesystem::path& dir, const std::vector<TrainingPair>& pairs,
                      std::uint64_t seed);
// Reloads y and m and rebuilds x from them.
std::vector<TrainingPair> read_pair_cache(const std::filesystem::path& dir);

}  // namespace pathsyn::pairing
