#pragma once

// Randomized property checks shared by the unit tests and the acceptance run.

#include <cmath>
#include <random>
#include <string>

#include "pathsyn/pairing.hpp"
#include "support.hpp"

namespace testing {

struct PropertyResult {
  int cases = 0;
  int failures = 0;
  std::string first_failure;

  void fail(const std::string& what) {
    if (failures++ == 0) first_failure = what;
  }
};

// x == y * m elementwise, bit-exact.
inline bool masked_product_holds(const pathsyn::pairing::TrainingPair& p) {
  if (!p.x.same_shape(p.y) || p.x.height() != p.m.height() || p.x.width() != p.m.width()) return false;
  for (int y = 0; y < p.y.height(); ++y) {
    for (int x = 0; x < p.y.width(); ++x) {
      if (p.x.at(y, x) != p.y.at(y, x) * p.m.at(y, x)) return false;
    }
  }
  return true;
}

// The 1-region is exactly one axis-aligned rectangle: every row that touches
// it covers the same column span.
inline bool mask_is_rectangle(const pathsyn::pairing::BinaryMask& m) {
  int top = -1, bottom = -1, left = -1, right = -1;
  long ones = 0;
  for (int y = 0; y < m.height(); ++y) {
    int first = -1, last = -1;
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(y, x)) {
        if (first < 0) first = x;
        last = x;
        ++ones;
      }
    }
    if (first < 0) continue;
    if (top < 0) {
      top = y;
      left = first;
      right = last;
    } else if (first != left || last != right || y != bottom + 1) {
      return false;
    }
    bottom = y;
  }
  if (top < 0) return false;
  return ones == static_cast<long>(bottom - top + 1) * (right - left + 1) && ones == m.sum();
}

// Clipped-box pixel count: a pixel cell belongs to the mask when it overlaps
// the box with positive extent in both directions.
inline long clipped_area_oracle(const pathsyn::BBox& b, int h, int w) {
  auto overlaps = [](int cell, double lo, double hi) {
    return std::min(cell + 1.0, hi) - std::max(static_cast<double>(cell), lo) > 1e-9;
  };
  long n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (overlaps(x, b.x, b.right()) && overlaps(y, b.y, b.bottom())) ++n;
    }
  }
  return n;
}

// Random (image, box) cases through disease pairs, healthy pairs and every
// augmentation combination.
inline PropertyResult check_pair_identity(int cases, std::uint64_t seed) {
  using namespace pathsyn;
  PropertyResult r;
  std::mt19937_64 rng(seed);
  const std::vector<std::set<pairing::AugmentOp>> op_sets = {
      {},
      {pairing::AugmentOp::Rotate},
      {pairing::AugmentOp::Reflect},
      {pairing::AugmentOp::Crop},
      {pairing::AugmentOp::Rotate, pairing::AugmentOp::Reflect, pairing::AugmentOp::Crop}};
  for (int i = 0; i < cases; ++i) {
    ++r.cases;
    const int side = std::uniform_int_distribution<int>(32, 72)(rng);
    const auto img = random_image(rng, side, side, "case" + std::to_string(i));
    std::uniform_real_distribution<double> pos(-4.0, side - 1.0);
    const double bx = pos(rng), by = pos(rng);
    const double bw = std::uniform_real_distribution<double>(0.5, side / 2.0)(rng);
    const double bh = std::uniform_real_distribution<double>(0.5, side / 2.0)(rng);
    const BBox box{bx, by, bw, bh};
    const long expect_area = clipped_area_oracle(box, side, side);
    const std::string tag = "case " + std::to_string(i);

    if (expect_area == 0) {
      try {
        pairing::mask_from_bbox(box, side, side);
        r.fail(tag + ": box outside the image was accepted");
      } catch (const Error&) {
      }
      continue;
    }
    const auto m = pairing::mask_from_bbox(box, side, side);
    if (m.sum() != expect_area) r.fail(tag + ": mask area " + std::to_string(m.sum()) + " != " + std::to_string(expect_area));
    if (!mask_is_rectangle(m)) r.fail(tag + ": mask is not a rectangle");

    const Annotation a{img.id(), kAllPathologies[i % 6], box, side};
    const auto p = pairing::make_disease_pair(a, img, "d" + std::to_string(i));
    if (!masked_product_holds(p)) r.fail(tag + ": x != y*m for the disease pair");
    if (pairing::apply_mask(pairing::apply_mask(img, m), m).pixels() != pairing::apply_mask(img, m).pixels()) {
      r.fail(tag + ": apply_mask not idempotent");
    }

    const auto hp = pairing::make_healthy_pair(img, rng(), "h" + std::to_string(i));
    if (!masked_product_holds(hp) || !mask_is_rectangle(hp.m)) r.fail(tag + ": healthy pair broken");
    const double frac = static_cast<double>(hp.m.sum()) / (side * side);
    if (frac < 0.15 * 0.15 - 1e-12 || frac > 0.40 * 0.40 + 1e-12) r.fail(tag + ": random mask area fraction out of range");

    const auto& ops = op_sets[static_cast<std::size_t>(i) % op_sets.size()];
    const auto aug = pairing::augment_pair(p, ops, rng());
    if (!masked_product_holds(aug)) r.fail(tag + ": x != y*m after augmentation");
    if (!mask_is_rectangle(aug.m)) r.fail(tag + ": augmented mask is not a rectangle");
    if (ops == std::set<pairing::AugmentOp>{pairing::AugmentOp::Reflect} && aug.m.sum() != m.sum()) {
      r.fail(tag + ": reflection changed the mask area");
    }
    if (ops.contains(pairing::AugmentOp::Rotate) && !ops.contains(pairing::AugmentOp::Crop) && aug.m.sum() < m.sum()) {
      r.fail(tag + ": rotation shrank the mask");
    }
  }
  return r;
}

}  // namespace testing
