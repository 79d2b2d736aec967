#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pathsyn/io.hpp"
#include "pathsyn/pairing.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace pathsyn;
using pairing::AugmentOp;

namespace {

long ones(const pairing::BinaryMask& m) {
  long n = 0;
  for (auto b : m.bits()) n += b;
  return n;
}

}  // namespace

TEST_CASE("mask from a full-extent box is all ones") {
  const auto m = pairing::mask_from_bbox({0, 0, 5, 4}, 4, 5);
  CHECK(ones(m) == 20);
}

TEST_CASE("single-pixel box selects the centre") {
  const auto m = pairing::mask_from_bbox({1, 1, 1, 1}, 3, 3);
  CHECK(m.sum() == 1);
  CHECK(m.at(1, 1) == 1);
  CHECK(m.at(0, 0) == 0);
}

TEST_CASE("box (0,0,2,1) on a 2x3 grid covers the first two top pixels") {
  const auto m = pairing::mask_from_bbox({0, 0, 2, 1}, 2, 3);
  CHECK(ones(m) == 2);
  CHECK(m.bits() == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0});
}

TEST_CASE("degenerate or out-of-frame boxes are rejected") {
  CHECK_THROWS_AS(pairing::mask_from_bbox({10, 10, 2, 2}, 4, 4), Error);
  CHECK_THROWS_AS(pairing::mask_from_bbox({1, 1, 0, 2}, 4, 4), Error);
  CHECK_THROWS_AS(pairing::BinaryMask(4, 4, PixelRect{1, 1, 1, 3}), Error);
}

TEST_CASE("apply_mask examples") {
  GrayImage y("y", 2, 2, std::vector<double>{0.2, 0.4, 0.6, 0.8});
  // m = [[1,0],[0,1]] is not a rectangle; check each diagonal pixel separately.
  const auto a = pairing::apply_mask(y, pairing::BinaryMask(2, 2, {0, 0, 1, 1}));
  CHECK(a.pixels() == std::vector<double>{0.2, 0, 0, 0});
  const auto b = pairing::apply_mask(y, pairing::BinaryMask(2, 2, {1, 1, 2, 2}));
  CHECK(b.pixels() == std::vector<double>{0, 0, 0, 0.8});

  const auto full = pairing::apply_mask(y, pairing::BinaryMask(2, 2, {0, 0, 2, 2}));
  CHECK(full.pixels() == y.pixels());

  GrayImage c("c", 3, 3, 0.8);
  const auto one = pairing::apply_mask(c, pairing::BinaryMask(3, 3, {2, 0, 3, 1}));
  CHECK(one.at(0, 2) == 0.8);
  double sum = 0;
  for (double v : one.pixels()) sum += v;
  CHECK(sum == 0.8);

  CHECK_THROWS_AS(pairing::apply_mask(c, pairing::BinaryMask(2, 2, {0, 0, 1, 1})), Error);
}

TEST_CASE("random mask sides at 256 lie in [39, 102]") {
  int lo = 1000, hi = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto m = pairing::random_mask(256, 256, s);
    lo = std::min({lo, m.rect().width(), m.rect().height()});
    hi = std::max({hi, m.rect().width(), m.rect().height()});
  }
  CHECK(lo >= 38);
  CHECK(hi <= 102);
}

TEST_CASE("random mask is deterministic and its area stays in bounds over 10k draws") {
  CHECK(pairing::random_mask(256, 256, 9) == pairing::random_mask(256, 256, 9));
  double lo = 1, hi = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto m = pairing::random_mask(256, 256, s * 7919 + 1);
    const double f = static_cast<double>(m.sum()) / (256.0 * 256.0);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
    REQUIRE(m.rect().x0 >= 0);
    REQUIRE(m.rect().x1 <= 256);
  }
  CHECK(lo >= 0.0225);
  CHECK(hi <= 0.16);
  CHECK_THROWS_AS(pairing::random_mask(16, 16, 1), Error);
}

TEST_CASE("pair identity and mask properties over random cases") {
  const auto r = testing::check_pair_identity(300, 1234);
  INFO(r.first_failure);
  CHECK(r.failures == 0);
}

TEST_CASE("make_pairs counts and missing images") {
  corpus::ImageStore store;
  std::mt19937_64 rng(1);
  std::vector<Annotation> as;
  for (int i = 0; i < 5; ++i) {
    store.insert(testing::random_image(rng, 64, 64, "d" + std::to_string(i) + ".png"));
    as.push_back({"d" + std::to_string(i) + ".png", kAllPathologies[i], {10, 12, 20, 18}, 64});
  }
  std::vector<GrayImage> healthy;
  for (int i = 0; i < 3; ++i) healthy.push_back(testing::random_image(rng, 64, 64, "h" + std::to_string(i) + ".png"));

  const auto only_disease = pairing::make_pairs(as, store, {}, 3);
  CHECK(only_disease.size() == 5);
  for (const auto& p : only_disease) CHECK(p.source == pairing::Source::Disease);

  const auto both = pairing::make_pairs(as, store, healthy, 3);
  CHECK(both.size() == 8);
  for (const auto& p : both) {
    CHECK(testing::masked_product_holds(p));
    CHECK(p.annotation.has_value() == (p.source == pairing::Source::Disease));
  }
  const auto again = pairing::make_pairs(as, store, healthy, 3);
  for (std::size_t i = 0; i < both.size(); ++i) {
    CHECK(both[i].id == again[i].id);
    CHECK(both[i].m == again[i].m);
  }

  auto missing = as;
  missing.push_back({"gone.png", Pathology::Effusion, {1, 1, 5, 5}, 64});
  try {
    pairing::make_pairs(missing, store, {}, 3);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("gone.png") != std::string::npos);
  }
}

TEST_CASE("augmentation with no ops leaves the pair unchanged") {
  std::mt19937_64 rng(4);
  const auto img = testing::random_image(rng, 64, 64, "a.png");
  const auto p = pairing::make_disease_pair({"a.png", Pathology::Effusion, {10, 20, 15, 12}, 64}, img, "p");
  const auto q = pairing::augment_pair(p, {}, 99);
  CHECK(q.y.pixels() == p.y.pixels());
  CHECK(q.m == p.m);
}

TEST_CASE("reflecting twice restores the pair") {
  std::mt19937_64 rng(5);
  const auto img = testing::random_image(rng, 48, 48, "a.png");
  const auto p = pairing::make_disease_pair({"a.png", Pathology::Effusion, {3, 7, 11, 5}, 48}, img, "p");
  pairing::AugmentParams flip;
  flip.reflect = true;
  const auto once = pairing::apply_augment(p, flip);
  CHECK(once.m.sum() == p.m.sum());
  CHECK(once.m.rect().x0 == 48 - p.m.rect().x1);
  const auto twice = pairing::apply_augment(once, flip);
  CHECK(twice.y.pixels() == p.y.pixels());
  CHECK(twice.m == p.m);
  CHECK(twice.x.pixels() == p.x.pixels());
}

TEST_CASE("crop keeps the mask region inside the frame") {
  std::mt19937_64 rng(6);
  const auto img = testing::random_image(rng, 64, 64, "a.png");
  const auto p = pairing::make_disease_pair({"a.png", Pathology::Effusion, {20, 20, 10, 10}, 64}, img, "p");
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto params = pairing::draw_augment(p, {AugmentOp::Crop}, s);
    if (params.crop) {
      const auto& c = *params.crop;
      CHECK(c.x0 <= p.m.rect().x0);
      CHECK(c.y0 <= p.m.rect().y0);
      CHECK(c.x1 >= p.m.rect().x1);
      CHECK(c.y1 >= p.m.rect().y1);
    }
    const auto q = pairing::apply_augment(p, params);
    CHECK(q.y.height() == 64);
    CHECK(testing::masked_product_holds(q));
    CHECK(q.annotation->box == to_bbox(q.m.rect()));
  }
}

TEST_CASE("augment op parsing") {
  CHECK(pairing::parse_augment_ops("rotate, crop") == std::set<AugmentOp>{AugmentOp::Rotate, AugmentOp::Crop});
  CHECK(pairing::parse_augment_ops("none").empty());
  CHECK_THROWS_AS(pairing::parse_augment_ops("shear"), Error);
}

TEST_CASE("pair cache round-trip") {
  testing::TempDir dir("pairs");
  corpus::ImageStore store;
  std::mt19937_64 rng(7);
  std::vector<Annotation> as;
  for (int i = 0; i < 3; ++i) {
    store.insert(testing::random_image(rng, 32, 32, "d" + std::to_string(i) + ".png"));
    as.push_back({"d" + std::to_string(i) + ".png", kAllPathologies[i], {4.5, 6, 9, 7.25}, 32});
  }
  const std::vector<GrayImage> healthy = {testing::random_image(rng, 32, 32, "h.png")};
  const auto pairs = pairing::make_pairs(as, store, healthy, 1);
  pairing::write_pair_cache(dir.path(), pairs, 1);
  const auto back = pairing::read_pair_cache(dir.path());
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].id == pairs[i].id);
    CHECK(back[i].y.pixels() == pairs[i].y.pixels());
    CHECK(back[i].m == pairs[i].m);
    CHECK(back[i].x.pixels() == pairs[i].x.pixels());
    CHECK(back[i].source == pairs[i].source);
  }
  CHECK(std::filesystem::exists(dir / "manifest.csv"));
}
