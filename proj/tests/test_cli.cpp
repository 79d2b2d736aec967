#include <map>
#include <sstream>

#include "doctest.h"
#include "pathsyn/cli.hpp"
#include "pathsyn/io.hpp"
#include "support.hpp"

using namespace pathsyn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

// Relative path -> file bytes for every regular file under root.
std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text_file(e.path());
  }
  return out;
}

// Runs every batch stage at toy sizes into `root`.
void pipeline(const fs::path& root) {
  const auto p = [&](const char* name) { return (root / name).string(); };
  REQUIRE(run({"phantom-gen", "--out", p("corpus"), "--diseased", "24", "--healthy", "6", "--seed", "3"}).code == 0);
  REQUIRE(run({"prepare-pairs", "--corpus", p("corpus"), "--out", p("prep"), "--seed", "3"}).code == 0);
  REQUIRE(run({"prepare-pairs", "--corpus", p("corpus"), "--out", p("prepn"), "--seed", "3", "--include-healthy", "1"}).code == 0);
  io::write_text_file(root / "cfg.txt",
                      "gen_levels = 5\ngen_base_width = 4\ndisc_layers = 2\ndisc_base_width = 4\n"
                      "total_steps = 1000\ncheckpoint_interval = 2\nseed = 1\n");
  auto r = run({"train", "--config", p("cfg.txt"), "--pairs", (root / "prep" / "pairs").string(), "--out", p("gan"),
                "--total-steps", "4"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  REQUIRE(run({"train", "--config", p("cfg.txt"), "--pairs", (root / "prepn" / "pairs").string(), "--out", p("gann"),
               "--total-steps", "2"})
              .code == 0);
  const auto train_csv = (root / "prep" / "train_annotations.csv").string();
  r = run({"synthesize", "--checkpoint", (root / "gan" / "ckpt_step4").string(), "--corpus", p("corpus"),
           "--annotations", train_csv, "--count", "20", "--seed", "5", "--out", p("syn")});
  INFO(r.err);
  REQUIRE(r.code == 0);
  REQUIRE(run({"synthesize", "--checkpoint", (root / "gann" / "ckpt_step2").string(), "--corpus", p("corpus"),
               "--annotations", train_csv, "--count", "20", "--seed", "5", "--model-tag", "pix2pix_n", "--out", p("synn")})
              .code == 0);
  r = run({"eval-localization", "--corpus", p("corpus"), "--train-annotations", train_csv, "--eval-annotations",
           (root / "prep" / "eval_annotations.csv").string(), "--pix2pix", p("syn"), "--pix2pix-n", p("synn"),
           "--budget", "20", "--eval-interval", "10", "--centers", "10,20", "--radius", "10", "--out", p("loc")});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("pathology,Ori CL@10") != std::string::npos);
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == cli::kExitUsage);
  const auto bogus = run({"bogus"});
  CHECK(bogus.code == cli::kExitUsage);
  CHECK_FALSE(bogus.err.empty());
  CHECK(run({"phantom-gen", "--diseased", "many", "--out", "x"}).code == cli::kExitUsage);
  CHECK(run({"phantom-gen", "--no-such-flag", "1"}).code == cli::kExitUsage);
  CHECK(run({"train", "--pairs", "p", "--out", "o", "--lambda-l1", "abc"}).code == cli::kExitUsage);
  CHECK(run({"phantom-gen", "--help"}).code == cli::kExitOk);
}

TEST_CASE("runtime failures exit with 2") {
  testing::TempDir dir("clirt");
  CHECK(run({"prepare-pairs", "--corpus", (dir / "missing").string(), "--out", (dir / "o").string()}).code ==
        cli::kExitRuntime);
  CHECK(run({"synthesize", "--checkpoint", (dir / "none").string(), "--corpus", dir.path().string(), "--out",
             (dir / "s").string()})
            .code == cli::kExitRuntime);
}

TEST_CASE("config file values are defaults that flags override") {
  testing::TempDir dir("clicfg");
  io::write_text_file(dir / "c.txt", "diseased = 3\nhealthy = 2\nseed = 4\n");
  REQUIRE(run({"phantom-gen", "--config", (dir / "c.txt").string(), "--out", (dir / "a").string(), "--healthy", "1"})
              .code == 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 4);
  io::write_text_file(dir / "bad.txt", "diseased = 3\nwhat = 1\n");
  CHECK(run({"phantom-gen", "--config", (dir / "bad.txt").string(), "--out", (dir / "b").string()}).code ==
        cli::kExitUsage);
}

TEST_CASE("full batch pipeline runs and is byte-for-byte reproducible") {
  testing::TempDir a("clia"), b("clib");
  pipeline(a.path());
  pipeline(b.path());

  CHECK(fs::exists(a / "gan" / "ckpt_step2"));
  CHECK(fs::exists(a / "gan" / "ckpt_step4"));
  CHECK(fs::exists(a / "gan" / "losses.csv"));
  int synthetic = 0;
  for (const auto& e : fs::directory_iterator(a / "syn")) synthetic += e.path().extension() == ".png";
  CHECK(synthetic == 20);
  CHECK(fs::exists(a / "syn" / "manifest.csv"));
  for (const char* f : {"report_ori.csv", "report_ori_pix2pix.csv", "report_ori_pix2pix_n.csv", "table2.csv"}) {
    CHECK(fs::exists(a / "loc" / f));
  }

  const auto ta = snapshot_tree(a.path());
  const auto tb = snapshot_tree(b.path());
  REQUIRE(ta.size() == tb.size());
  for (const auto& [name, bytes] : ta) {
    INFO(name);
    REQUIRE(tb.contains(name));
    CHECK((tb.at(name) == bytes || name.ends_with("cfg.txt")));
  }
}

TEST_CASE("study-report prints a zero tally before any judgment") {
  testing::TempDir dir("clistudy");
  REQUIRE(run({"phantom-gen", "--out", (dir / "real").string(), "--diseased", "12", "--healthy", "0", "--seed", "1"}).code == 0);
  REQUIRE(run({"phantom-gen", "--out", (dir / "fake").string(), "--diseased", "12", "--healthy", "0", "--seed", "2"}).code == 0);
  const auto sources = "real:" + (dir / "real").string() + ",fake:" + (dir / "fake").string();
  const auto r = run({"study-report", "--sources", sources, "--count", "2", "--reviewers", "r1,r2", "--store",
                      (dir / "j.jsonl").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("pathology,real,fake\n"));
  CHECK(r.out.find("Total,0|0,0|0") != std::string::npos);
  CHECK(run({"study-report", "--sources", "real:" + (dir / "real").string(), "--reviewers", "r1"}).code ==
        cli::kExitUsage);
}
