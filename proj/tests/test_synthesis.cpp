#include <map>
#include <random>

#include "doctest.h"
#include "pathsyn/synthesis.hpp"
#include "support.hpp"

using namespace pathsyn;

namespace {

struct Fixture {
  corpus::ImageStore store;
  std::vector<Annotation> annotations;
};

Fixture make_fixture(int n, int side, std::uint64_t seed) {
  Fixture f;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0, side / 2.0);
  for (int i = 0; i < n; ++i) {
    const std::string id = "img_" + std::to_string(i) + ".png";
    f.store.insert(testing::random_image(rng, side, side, id));
    f.annotations.push_back({id, kAllPathologies[i % 6], {pos(rng), pos(rng), side / 4.0 + 0.5, side / 5.0}, side});
  }
  return f;
}

// Every in-box pixel of the record equals the 8-bit value of the
// transformed parent it was built from.
bool box_identity(const synthesis::SyntheticRecord& r, const pairing::TrainingPair& variant) {
  const auto& rect = variant.m.rect();
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      if (r.pixels8[static_cast<std::size_t>(y) * r.width + x] != quantize8(variant.y.at(y, x))) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("composite example and identities") {
  GrayImage x("x", 1, 2, std::vector<double>{0.8, 0.0});
  GrayImage g("g", 1, 2, std::vector<double>{0.3, 0.5});
  GrayImage m("m", 1, 2, std::vector<double>{1.0, 0.0});
  CHECK(synthesis::composite(x, g, m).pixels() == std::vector<double>{0.8, 0.5});
  CHECK(synthesis::composite(x, g, pairing::BinaryMask(1, 2, {0, 0, 1, 1})).pixels() == std::vector<double>{0.8, 0.5});
  CHECK(synthesis::composite(x, g, GrayImage("1", 1, 2, 1.0)).pixels() == x.pixels());
  CHECK(synthesis::composite(x, g, pairing::BinaryMask(1, 2, {0, 0, 2, 1})).pixels() == x.pixels());
  // With nothing masked in, x = y * m is all zeros.
  const GrayImage blank("x0", 1, 2, 0.0);
  CHECK(synthesis::composite(blank, g, GrayImage("0", 1, 2, 0.0)).pixels() == g.pixels());
  CHECK_THROWS_AS(synthesis::composite(x, g, GrayImage("m", 2, 2, 0.0)), Error);
  CHECK_THROWS_AS(synthesis::composite(x, GrayImage("g", 1, 3, 0.0), m), Error);
  CHECK_THROWS_AS(synthesis::composite(x, g, GrayImage("m", 1, 2, 0.5)), Error);
}

TEST_CASE("every composite pixel comes from exactly one source") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    const int side = std::uniform_int_distribution<int>(32, 40)(rng);
    const auto y = testing::random_image(rng, side, side);
    const auto g = testing::random_image(rng, side, side);
    const auto m = pairing::random_mask(side, side, rng());
    const auto x = pairing::apply_mask(y, m);
    const auto c = synthesis::composite(x, g, m);
    for (int r = 0; r < side; ++r) {
      for (int k = 0; k < side; ++k) CHECK(c.at(r, k) == (m.at(r, k) ? y.at(r, k) : g.at(r, k)));
    }
  }
}

TEST_CASE("variant seeds and the first unaugmented pass") {
  CHECK(synthesis::variant_seed(7, 3) == synthesis::variant_seed(7, 3));
  CHECK(synthesis::variant_seed(7, 3) != synthesis::variant_seed(7, 4));
  CHECK(synthesis::variant_seed(7, 3) != synthesis::variant_seed(8, 3));
  const synthesis::SynthesisOptions opts;
  CHECK(synthesis::variant_ops(0, 5, opts).empty());
  CHECK(synthesis::variant_ops(4, 5, opts).empty());
  CHECK(synthesis::variant_ops(5, 5, opts) == opts.augment);
}

TEST_CASE("688 records from 573 annotations use each one once or twice") {
  testing::TempDir dir("syn688");
  const auto f = make_fixture(573, 16, 1);
  const auto g = networks::init_generator(1, 2, 2, 16);
  const auto recs = synthesis::synthesize_dataset(g, f.annotations, f.store, 688, 9, dir.path());
  REQUIRE(recs.size() == 688);
  std::map<std::string, int> uses;
  for (const auto& r : recs) ++uses[r.parent_image_id];
  CHECK(uses.size() == 573);
  for (const auto& [id, n] : uses) {
    CHECK(n >= 1);
    CHECK(n <= 2);
  }
  std::set<std::string> names;
  for (const auto& r : recs) names.insert(r.file_name);
  CHECK(names.size() == 688);
  CHECK_THROWS_AS(synthesis::synthesize_dataset(g, f.annotations, f.store, 0, 9, dir / "zero"), Error);
}

TEST_CASE("pathology box survives generation and the PNG round-trip") {
  testing::TempDir dir("synbox");
  const auto f = make_fixture(12, 32, 2);
  const auto g = networks::init_generator(2, 3, 4, 32);
  const synthesis::SynthesisOptions opts;
  const int count = 30;
  const auto recs = synthesis::synthesize_dataset(g, f.annotations, f.store, count, 4, dir.path(), opts);
  const auto back = synthesis::read_synthetic_dir(dir.path());
  REQUIRE(back.size() == recs.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const auto& a = f.annotations[k % f.annotations.size()];
    const auto vseed = synthesis::variant_seed(4, k);
    CHECK(recs[k].variant_seed == vseed);
    const auto variant =
        synthesis::variant_pair(a, f.store.get(a.image_id), vseed, synthesis::variant_ops(k, f.annotations.size(), opts));
    CHECK(box_identity(recs[k], variant));
    CHECK(back[k].pixels8 == recs[k].pixels8);
    CHECK(box_identity(back[k], variant));
    CHECK(back[k].parent_annotation.box == recs[k].parent_annotation.box);
    CHECK(back[k].parent_annotation.box == to_bbox(variant.m.rect()));
    CHECK(back[k].parent_annotation.pathology == a.pathology);
    CHECK(back[k].parent_image_id == a.image_id);
    CHECK(back[k].variant_seed == vseed);
    CHECK(back[k].model_tag == "pix2pix");
    CHECK(back[k].file_name.starts_with("pix2pix_" + a.image_id + "_"));
  }
}

TEST_CASE("outside the box the record carries the generator output") {
  const auto f = make_fixture(1, 32, 3);
  const auto g = networks::init_generator(3, 3, 4, 32);
  const auto& a = f.annotations[0];
  const auto variant = synthesis::variant_pair(a, f.store.get(a.image_id), 5, {});
  const auto rec = synthesis::synthesize_one(g, variant, "t", 5);
  const auto g_pixels = nn::to_pixels(networks::generator_forward(g, nn::to_network(variant.x)), "g");
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (!variant.m.at(y, x)) CHECK(rec.pixels8[y * 32 + x] == quantize8(g_pixels.at(y, x)));
    }
  }
}

TEST_CASE("same seed gives byte-identical files") {
  testing::TempDir a("syna"), b("synb");
  const auto f = make_fixture(5, 32, 4);
  const auto g = networks::init_generator(4, 3, 4, 32);
  networks::save_generator(a / "gen", g);
  synthesis::synthesize_dataset(a / "gen", f.annotations, f.store, 11, 6, a / "out");
  synthesis::synthesize_dataset(a / "gen", f.annotations, f.store, 11, 6, b / "out");
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(a / "out")) {
    ++files;
    CHECK(io::read_text_file(e.path()) == io::read_text_file(b / "out" / e.path().filename().string()));
  }
  CHECK(files == 12);
}

TEST_CASE("architecture and checkpoint mismatches are errors") {
  testing::TempDir dir("synbad");
  const auto f = make_fixture(2, 32, 5);
  const auto g = networks::init_generator(1, 2, 2, 16);
  CHECK_THROWS_AS(synthesis::synthesize_dataset(g, f.annotations, f.store, 2, 1, dir.path()), Error);
  CHECK_THROWS(synthesis::synthesize_dataset(dir / "nothing", f.annotations, f.store, 2, 1, dir / "o"));
}
