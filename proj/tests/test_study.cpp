#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "pathsyn/study.hpp"
#include "support.hpp"

using namespace pathsyn;
using namespace pathsyn::study;
using nlohmann::json;

namespace {

// One directory per source tag, `per_class` PNGs for each listed pathology.
struct StudyFixture {
  testing::TempDir dir{"study"};
  StudyConfig cfg;

  StudyFixture(const std::vector<std::string>& tags, const std::vector<Pathology>& classes, int per_class,
               int count, std::vector<std::string> reviewers = {"r1", "r2"}) {
    std::mt19937_64 rng(1);
    for (const auto& tag : tags) {
      const auto d = dir / tag;
      std::filesystem::create_directories(d);
      std::string manifest = "image_id,label,x,y,w,h,model_tag\n";
      for (auto p : classes) {
        for (int i = 0; i < per_class; ++i) {
          const auto name = std::string(to_string(p)) + "_" + std::to_string(i) + ".png";
          io::write_png8(d / name, testing::random_image(rng, 32, 32, name));
          manifest += name + "," + std::string(to_string(p)) + ",1,1,4,4," + tag + "\n";
        }
      }
      io::write_text_file(d / "manifest.csv", manifest);
      cfg.sources.push_back({tag, d});
    }
    cfg.pathologies = classes;
    cfg.count_per_pathology = count;
    cfg.seed = 7;
    cfg.reviewers = std::move(reviewers);
  }
};

struct Running {
  JudgmentStore store;
  StudyServer server;
  int port;
  httplib::Client client;

  Running(const StudyPlan& plan, const std::filesystem::path& store_path)
      : store(store_path), server(plan, store), port(server.bind("127.0.0.1", 0)), client("127.0.0.1", port) {
    server.start();
  }
  ~Running() { server.stop(); }

  json next(const std::string& r) {
    auto res = client.Get("/api/session/" + r + "/next");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
  }
  int post(const std::string& r, const std::string& item, const std::string& verdict) {
    auto res = client.Post("/api/session/" + r + "/judgment", json{{"item_id", item}, {"verdict", verdict}}.dump(),
                           "application/json");
    REQUIRE(res);
    return res->status;
  }
};

}  // namespace

TEST_CASE("four sources of six pathologies at 25 give 600 items") {
  StudyFixture f({"real", "pix2pix", "pix2pix_n", "other"},
                 std::vector<Pathology>(kAllPathologies.begin(), kAllPathologies.end()), 25, 25);
  const auto plan = build_study(f.cfg);
  CHECK(plan.items.size() == 600);
  std::map<Pathology, int> per_class;
  for (const auto& it : plan.items) ++per_class[it.pathology];
  for (auto p : kAllPathologies) CHECK(per_class[p] == 100);
  std::set<std::string> ids;
  for (const auto& it : plan.items) {
    ids.insert(it.item_id);
    CHECK(it.item_id.size() == 32);
  }
  CHECK(ids.size() == 600);
}

TEST_CASE("two sources of one pathology at 3 give 6 items in per-reviewer orders") {
  StudyFixture f({"real", "fake"}, {Pathology::Effusion}, 5, 3, {"alice", "bob", "carol"});
  const auto plan = build_study(f.cfg);
  CHECK(plan.items.size() == 6);
  std::set<std::vector<std::size_t>> distinct;
  for (const auto& r : f.cfg.reviewers) {
    auto order = plan.orders.at(r);
    distinct.insert(order);
    std::sort(order.begin(), order.end());
    CHECK(order == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  }
  CHECK(distinct.size() > 1);
  const auto again = build_study(f.cfg);
  CHECK(again.orders == plan.orders);
  for (std::size_t i = 0; i < plan.items.size(); ++i) CHECK(again.items[i].item_id == plan.items[i].item_id);
}

TEST_CASE("a deficit names every short source and pathology") {
  StudyFixture f({"real", "fake"}, {Pathology::Effusion, Pathology::Pneumonia}, 2, 3);
  try {
    build_study(f.cfg);
    FAIL("expected a deficit error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("'real'") != std::string::npos);
    CHECK(what.find("'fake'") != std::string::npos);
    CHECK(what.find("Pneumonia") != std::string::npos);
    CHECK(what.find("short by 1") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  StudyFixture f({"real", "fake"}, {Pathology::Effusion}, 3, 3);
  auto one = f.cfg;
  one.sources.pop_back();
  CHECK_THROWS_AS(one.validate(), Error);
  auto dup = f.cfg;
  dup.reviewers = {"a", "a"};
  CHECK_THROWS_AS(dup.validate(), Error);
  auto bad = f.cfg;
  bad.reviewers = {"has space"};
  CHECK_THROWS_AS(bad.validate(), Error);
  const auto kv = study_config_from({{"sources", "real:" + (f.dir / "real").string() + ",fake:" + (f.dir / "fake").string()},
                                     {"count", "2"},
                                     {"seed", "5"},
                                     {"reviewers", "r1,r2"},
                                     {"pathologies", "Effusion"}});
  CHECK(kv.sources.size() == 2);
  CHECK(kv.sources[1].tag == "fake");
  CHECK(kv.count_per_pathology == 2);
  CHECK(kv.pathologies == std::vector<Pathology>{Pathology::Effusion});
}

TEST_CASE("study images are center cropped and resized to 224") {
  GrayImage img("a", 64, 64, 0.0);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) img.at(y, x) = (x < 4 || y < 4 || x >= 60 || y >= 60) ? 1.0 : 0.5;
  }
  const auto out = prepare_study_image(img);
  CHECK(out.height() == 224);
  CHECK(out.width() == 224);
  // The 4-pixel frame lies outside the central 56x56 crop.
  for (double v : out.pixels()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("tally counts and table layout") {
  StudyFixture f({"real", "fake"}, {Pathology::Effusion, Pathology::Atelectasis}, 3, 3);
  const auto plan = build_study(f.cfg);
  const auto empty = tally({}, plan);
  for (const auto& [r, rows] : empty.real_counts) {
    for (const auto& row : rows) {
      for (int v : row) CHECK(v == 0);
    }
  }
  std::vector<const StudyItem*> cell;
  for (const auto& it : plan.items) {
    if (it.source_tag == "fake" && it.pathology == Pathology::Effusion) cell.push_back(&it);
  }
  REQUIRE(cell.size() == 3);
  const std::vector<JudgmentRecord> js = {{"r1", cell[0]->item_id, Verdict::Real, "t"},
                                          {"r1", cell[1]->item_id, Verdict::Real, "t"},
                                          {"r1", cell[2]->item_id, Verdict::Fake, "t"}};
  const auto t = tally(js, plan);
  const auto p = static_cast<std::size_t>(std::find(t.pathologies.begin(), t.pathologies.end(), Pathology::Effusion) -
                                          t.pathologies.begin());
  const auto s = static_cast<std::size_t>(std::find(t.sources.begin(), t.sources.end(), "fake") - t.sources.begin());
  CHECK(t.real_counts.at("r1")[p][s] == 2);
  CHECK(t.total("r1", s) == 2);
  CHECK(t.shown[p][s] == 3);
  CHECK(t.real_counts.at("r2")[p][s] == 0);

  const auto table = format_table1(t);
  CHECK(table.substr(0, table.find('\n')) == "pathology,real,fake");
  CHECK(table.find("Effusion,0|0,2|0") != std::string::npos);
  CHECK(table.find("Total,0|0,2|0") != std::string::npos);

  CHECK_THROWS_AS(tally({{"r1", "nope", Verdict::Real, "t"}}, plan), Error);
  CHECK_THROWS_AS(tally({{"zed", cell[0]->item_id, Verdict::Real, "t"}}, plan), Error);
}

TEST_CASE("judgment files are append-only JSON lines") {
  testing::TempDir dir("jsonl");
  {
    JudgmentStore s(dir / "j.jsonl");
    s.append({"r1", "abc", Verdict::Real, "2024-01-01T00:00:00Z"});
    s.append({"r1", "def", Verdict::Fake, utc_now()});
  }
  JudgmentStore reopened(dir / "j.jsonl");
  CHECK(reopened.records().size() == 2);
  reopened.append({"r2", "abc", Verdict::Fake, utc_now()});
  const auto all = read_judgments(dir / "j.jsonl");
  REQUIRE(all.size() == 3);
  CHECK(all[0].timestamp == "2024-01-01T00:00:00Z");
  CHECK(all[1].verdict == Verdict::Fake);
  const auto text = io::read_text_file(dir / "j.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  io::write_text_file(dir / "bad.jsonl", "{\"reviewer_id\":\"r\"}\nnot json\n");
  CHECK_THROWS_AS(read_judgments(dir / "bad.jsonl"), ParseError);
}

TEST_CASE("hmac and base64 against published vectors") {
  CHECK(hmac_sha256_hex("key", "The quick brown fox jumps over the lazy dog") ==
        "f7bc83f430538424b13298e6aa6fb143ef4d59a14946175997479dbc2d1a3cd8");
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}

TEST_CASE("session endpoints walk a reviewer through the plan") {
  StudyFixture f({"real", "fake"}, {Pathology::Effusion}, 3, 3);
  const auto plan = build_study(f.cfg);
  Running run(plan, f.dir / "judgments.jsonl");

  auto res = run.client.Get("/api/session/stranger/next");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(run.post("stranger", "x", "real") == 404);

  const auto first = run.next("r1");
  CHECK(first["done"] == false);
  CHECK(first["progress"]["index"] == 1);
  CHECK(first["progress"]["total"] == 6);
  CHECK(first["image"].get<std::string>().starts_with("data:image/png;base64,"));
  const auto first_id = first["item_id"].get<std::string>();
  CHECK(run.next("r1")["item_id"] == first_id);

  auto bad = run.client.Post("/api/session/r1/judgment", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(run.post("r1", first_id, "maybe") == 400);

  const auto order = plan.orders.at("r1");
  const auto later = plan.items[order[3]].item_id;
  CHECK(run.post("r1", later, "real") == 409);

  CHECK(run.post("r1", first_id, "real") == 204);
  CHECK(run.next("r1")["progress"]["index"] == 2);
  const auto before = io::read_text_file(f.dir / "judgments.jsonl");
  CHECK(run.post("r1", first_id, "fake") == 409);
  CHECK(io::read_text_file(f.dir / "judgments.jsonl") == before);

  for (int k = 1; k < 6; ++k) {
    const auto n = run.next("r1");
    CHECK(n["progress"]["index"] == k + 1);
    CHECK(run.post("r1", n["item_id"], "fake") == 204);
  }
  const auto done = run.next("r1");
  CHECK(done["done"] == true);
  CHECK(done["submitted"] == 6);
  CHECK(read_judgments(f.dir / "judgments.jsonl").size() == 6);
}

TEST_CASE("a perfect discriminator fills the real column only, and tallies wait for finishers") {
  StudyFixture f({"real", "pix2pix", "pix2pix_n"}, {Pathology::Effusion, Pathology::Cardiomegaly}, 4, 4);
  const auto plan = build_study(f.cfg);
  Running run(plan, f.dir / "judgments.jsonl");

  auto tally_json = [&] {
    auto res = run.client.Get("/api/report/tally");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
  };
  CHECK(tally_json()["reviewers"].empty());
  CHECK(tally_json()["pending"].size() == 2);

  while (true) {
    const auto n = run.next("r1");
    if (n["done"] == true) break;
    const auto* item = plan.find(n["item_id"].get<std::string>());
    REQUIRE(item != nullptr);
    CHECK(run.post("r1", item->item_id, item->source_tag == "real" ? "real" : "fake") == 204);
  }
  const auto t = tally_json();
  CHECK(t["pending"] == json::array({"r2"}));
  REQUIRE(t["reviewers"].contains("r1"));
  CHECK_FALSE(t["reviewers"].contains("r2"));
  const auto& rows = t["reviewers"]["r1"];
  CHECK(rows["Effusion"]["real"] == 4);
  CHECK(rows["Effusion"]["pix2pix"] == 0);
  CHECK(rows["Cardiomegaly"]["pix2pix_n"] == 0);
  CHECK(rows["Total"]["real"] == 8);
  CHECK(rows["Total"]["pix2pix"] == 0);

  // Conservation: every shown item of a finished reviewer carries exactly one verdict.
  const auto js = read_judgments(f.dir / "judgments.jsonl");
  std::set<std::string> judged;
  for (const auto& j : js) CHECK(judged.insert(j.item_id).second);
  CHECK(judged.size() == plan.items.size());
}

TEST_CASE("client-visible payloads carry no source hints") {
  StudyFixture f({"realsrc", "ganmodel"}, {Pathology::Pneumothorax}, 3, 3);
  const auto plan = build_study(f.cfg);
  Running run(plan, f.dir / "judgments.jsonl");
  while (true) {
    auto res = run.client.Get("/api/session/r2/next");
    REQUIRE(res);
    for (const auto& [k, v] : res->headers) {
      CHECK(v.find("realsrc") == std::string::npos);
      CHECK(v.find("ganmodel") == std::string::npos);
    }
    const std::string body = res->body;
    CHECK(body.find("realsrc") == std::string::npos);
    CHECK(body.find("ganmodel") == std::string::npos);
    CHECK(body.find("Pneumothorax") == std::string::npos);
    CHECK(body.find(".png") == std::string::npos);
    const auto n = json::parse(body);
    if (n["done"] == true) break;
    CHECK(run.post("r2", n["item_id"], "real") == 204);
  }
}

TEST_CASE("progress survives a server restart") {
  StudyFixture f({"real", "fake"}, {Pathology::Infiltration}, 2, 2);
  const auto plan = build_study(f.cfg);
  std::string third;
  {
    Running run(plan, f.dir / "judgments.jsonl");
    for (int k = 0; k < 2; ++k) CHECK(run.post("r1", run.next("r1")["item_id"], "fake") == 204);
    third = plan.items[plan.orders.at("r1")[2]].item_id;
  }
  Running again(plan, f.dir / "judgments.jsonl");
  const auto n = again.next("r1");
  CHECK(n["progress"]["index"] == 3);
  CHECK(n["item_id"] == third);
  CHECK(again.next("r2")["progress"]["index"] == 1);
}

TEST_CASE("concurrent reviewers each record one verdict per item") {
  StudyFixture f({"real", "fake"}, {Pathology::Atelectasis}, 5, 5, {"a", "b", "c", "d"});
  const auto plan = build_study(f.cfg);
  Running run(plan, f.dir / "judgments.jsonl");
  std::vector<std::thread> threads;
  for (const auto& r : f.cfg.reviewers) {
    threads.emplace_back([port = run.port, r] {
      httplib::Client c("127.0.0.1", port);
      while (true) {
        auto res = c.Get("/api/session/" + r + "/next");
        if (!res || res->status != 200) return;
        const auto n = json::parse(res->body);
        if (n["done"] == true) return;
        const auto body = json{{"item_id", n["item_id"]}, {"verdict", "real"}}.dump();
        c.Post("/api/session/" + r + "/judgment", body, "application/json");
        c.Post("/api/session/" + r + "/judgment", body, "application/json");
      }
    });
  }
  for (auto& t : threads) t.join();
  const auto js = read_judgments(f.dir / "judgments.jsonl");
  CHECK(js.size() == 40);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& j : js) CHECK(pairs.insert({j.reviewer_id, j.item_id}).second);
}
