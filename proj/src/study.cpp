#include "pathsyn/study.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "pathsyn/corpus.hpp"

namespace pathsyn::study {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(const unsigned char* p, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[p[i] >> 4];
    out[2 * i + 1] = digits[p[i] & 15];
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  return to_hex(md, len);
}

bool url_safe(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& f : io::split_csv_line(s)) {
    std::string t(io::trim(f));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

std::string hmac_sha256_hex(const std::string& key, const std::string& message) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
           reinterpret_cast<const unsigned char*>(message.data()), message.size(), md, &len) == nullptr) {
    throw Error("hmac failed");
  }
  return to_hex(md, len);
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void StudyConfig::validate() const {
  if (sources.size() < 2) throw Error("a study needs at least two sources");
  std::set<std::string> tags;
  for (const auto& s : sources) {
    if (!url_safe(s.tag)) throw Error("bad source tag '" + s.tag + "'");
    if (!tags.insert(s.tag).second) throw Error("duplicate source tag '" + s.tag + "'");
  }
  if (count_per_pathology < 1) throw Error("count per pathology must be >= 1");
  if (pathologies.empty()) throw Error("a study needs at least one pathology");
  if (reviewers.empty()) throw Error("a study needs at least one reviewer");
  std::set<std::string> ids;
  for (const auto& r : reviewers) {
    if (!url_safe(r)) throw Error("bad reviewer id '" + r + "'");
    if (!ids.insert(r).second) throw Error("duplicate reviewer id '" + r + "'");
  }
}

StudyConfig study_config_from(const io::KeyValues& kv) {
  StudyConfig cfg;
  if (auto it = kv.find("sources"); it != kv.end()) {
    for (const auto& entry : split_list(it->second)) {
      const auto colon = entry.find(':');
      if (colon == std::string::npos) throw Error("source entry '" + entry + "' is not tag:dir");
      cfg.sources.push_back({entry.substr(0, colon), entry.substr(colon + 1)});
    }
  }
  if (auto it = kv.find("count"); it != kv.end()) cfg.count_per_pathology = std::stoi(it->second);
  if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
  if (auto it = kv.find("reviewers"); it != kv.end()) cfg.reviewers = split_list(it->second);
  if (auto it = kv.find("secret"); it != kv.end()) cfg.secret = it->second;
  if (auto it = kv.find("pathologies"); it != kv.end() && !io::trim(it->second).empty()) {
    cfg.pathologies.clear();
    for (const auto& name : split_list(it->second)) {
      const auto p = pathology_from_string(name);
      if (!p) throw Error("unknown pathology '" + name + "'");
      cfg.pathologies.push_back(*p);
    }
  }
  return cfg;
}

const StudyItem* StudyPlan::find(const std::string& item_id) const {
  const auto it = std::lower_bound(items.begin(), items.end(), item_id,
                                   [](const StudyItem& a, const std::string& id) { return a.item_id < id; });
  return it != items.end() && it->item_id == item_id ? &*it : nullptr;
}

namespace {

// image file -> pathology, in listing order, first label wins.
std::vector<std::pair<std::string, Pathology>> list_source(const StudySource& src) {
  fs::path listing = src.dir / "manifest.csv";
  if (!fs::exists(listing)) listing = src.dir / "annotations.csv";
  if (!fs::exists(listing)) {
    throw IoError("source '" + src.tag + "' has neither manifest.csv nor annotations.csv in " + src.dir.string());
  }
  std::istringstream in(io::read_text_file(listing));
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<std::string, Pathology>> out;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() < 2) continue;
    const auto p = pathology_from_string(io::trim(f[1]));
    std::string id(io::trim(f[0]));
    if (!p || !seen.insert(id).second) continue;
    out.emplace_back(id, *p);
  }
  return out;
}

}  // namespace

StudyPlan build_study(const StudyConfig& cfg) {
  cfg.validate();
  const std::string key = cfg.secret.empty() ? sha256_hex("study-key:" + std::to_string(cfg.seed)) : cfg.secret;
  StudyPlan plan;
  plan.config = cfg;
  std::vector<std::string> deficits;
  for (const auto& src : cfg.sources) {
    const auto listed = list_source(src);
    for (auto p : cfg.pathologies) {
      std::vector<std::string> candidates;
      for (const auto& [id, label] : listed) {
        if (label == p) candidates.push_back(id);
      }
      if (static_cast<int>(candidates.size()) < cfg.count_per_pathology) {
        deficits.push_back("source '" + src.tag + "' has " + std::to_string(candidates.size()) + " " +
                           std::string(to_string(p)) + " images, needs " +
                           std::to_string(cfg.count_per_pathology) + " (short by " +
                           std::to_string(cfg.count_per_pathology - static_cast<int>(candidates.size())) + ")");
        continue;
      }
      std::sort(candidates.begin(), candidates.end());
      std::mt19937_64 rng(cfg.seed ^ fnv(src.tag + "/" + std::string(to_string(p))));
      std::shuffle(candidates.begin(), candidates.end(), rng);
      for (int k = 0; k < cfg.count_per_pathology; ++k) {
        StudyItem item;
        item.source_tag = src.tag;
        item.pathology = p;
        item.image_path = src.dir / candidates[static_cast<std::size_t>(k)];
        item.item_id = hmac_sha256_hex(key, src.tag + '\n' + item.image_path.string()).substr(0, 32);
        plan.items.push_back(std::move(item));
      }
    }
  }
  if (!deficits.empty()) {
    std::string msg = "not enough images for the study:";
    for (const auto& d : deficits) msg += "\n  " + d;
    throw Error(msg);
  }
  std::sort(plan.items.begin(), plan.items.end(),
            [](const StudyItem& a, const StudyItem& b) { return a.item_id < b.item_id; });
  for (const auto& r : cfg.reviewers) {
    std::vector<std::size_t> order(plan.items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL ^ fnv("reviewer:" + r));
    std::shuffle(order.begin(), order.end(), rng);
    plan.orders[r] = std::move(order);
  }
  return plan;
}

GrayImage prepare_study_image(const GrayImage& image) {
  const int ch = std::max(1, static_cast<int>(std::lround(image.height() * kStudyCropFraction)));
  const int cw = std::max(1, static_cast<int>(std::lround(image.width() * kStudyCropFraction)));
  const int y0 = (image.height() - ch) / 2;
  const int x0 = (image.width() - cw) / 2;
  GrayImage crop("", ch, cw);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) crop.at(y, x) = image.at(y0 + y, x0 + x);
  }
  return corpus::resize_bilinear(crop, kStudyImageSide, kStudyImageSide);
}

std::string to_string(Verdict v) { return v == Verdict::Real ? "real" : "fake"; }

std::optional<Verdict> verdict_from_string(const std::string& s) {
  if (s == "real") return Verdict::Real;
  if (s == "fake") return Verdict::Fake;
  return std::nullopt;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

namespace {

json to_json(const JudgmentRecord& r) {
  return json{{"reviewer_id", r.reviewer_id}, {"item_id", r.item_id},
              {"verdict", to_string(r.verdict)}, {"timestamp", r.timestamp}};
}

}  // namespace

std::vector<JudgmentRecord> read_judgments(const fs::path& path) {
  std::vector<JudgmentRecord> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      JudgmentRecord r;
      r.reviewer_id = j.at("reviewer_id").get<std::string>();
      r.item_id = j.at("item_id").get<std::string>();
      const auto v = verdict_from_string(j.at("verdict").get<std::string>());
      if (!v) throw Error("bad verdict");
      r.verdict = *v;
      r.timestamp = j.value("timestamp", "");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(row) + ": " + e.what(), row);
    }
  }
  return out;
}

JudgmentStore::JudgmentStore(fs::path path) : path_(std::move(path)), records_(read_judgments(path_)) {
  if (path_.has_parent_path()) io::ensure_directory(path_.parent_path());
}

void JudgmentStore::append(const JudgmentRecord& r) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  out << to_json(r).dump() << '\n';
  out.flush();
  if (!out) throw IoError("cannot append to " + path_.string());
  records_.push_back(r);
}

std::vector<JudgmentRecord> JudgmentStore::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

int TallyTable::total(const std::string& reviewer, std::size_t source) const {
  int sum = 0;
  for (const auto& row : real_counts.at(reviewer)) sum += row.at(source);
  return sum;
}

TallyTable tally(const std::vector<JudgmentRecord>& judgments, const StudyPlan& plan) {
  TallyTable t;
  for (const auto& s : plan.config.sources) t.sources.push_back(s.tag);
  t.pathologies = plan.config.pathologies;
  t.reviewers = plan.config.reviewers;
  const auto zero = std::vector<std::vector<int>>(t.pathologies.size(), std::vector<int>(t.sources.size(), 0));
  t.shown = zero;
  for (const auto& r : t.reviewers) t.real_counts[r] = zero;

  auto cell_of = [&](const StudyItem& item) {
    const auto pi = std::find(t.pathologies.begin(), t.pathologies.end(), item.pathology) - t.pathologies.begin();
    const auto si = std::find(t.sources.begin(), t.sources.end(), item.source_tag) - t.sources.begin();
    return std::pair<std::size_t, std::size_t>(pi, si);
  };
  for (const auto& item : plan.items) {
    const auto [pi, si] = cell_of(item);
    ++t.shown[pi][si];
  }
  for (const auto& j : judgments) {
    const auto* item = plan.find(j.item_id);
    if (item == nullptr) throw Error("judgment for unknown item '" + j.item_id + "'");
    auto it = t.real_counts.find(j.reviewer_id);
    if (it == t.real_counts.end()) throw Error("judgment by unknown reviewer '" + j.reviewer_id + "'");
    if (j.verdict == Verdict::Real) {
      const auto [pi, si] = cell_of(*item);
      ++it->second[pi][si];
    }
  }
  return t;
}

std::string format_table1(const TallyTable& t) {
  std::ostringstream os;
  os << "pathology";
  for (const auto& s : t.sources) os << ',' << s;
  os << '\n';
  auto cell = [&](auto value_of) {
    std::string out;
    for (std::size_t r = 0; r < t.reviewers.size(); ++r) {
      if (r) out += '|';
      out += std::to_string(value_of(t.reviewers[r]));
    }
    return out;
  };
  for (std::size_t p = 0; p < t.pathologies.size(); ++p) {
    os << to_string(t.pathologies[p]);
    for (std::size_t s = 0; s < t.sources.size(); ++s) {
      os << ',' << cell([&](const std::string& r) { return t.real_counts.at(r)[p][s]; });
    }
    os << '\n';
  }
  os << "Total";
  for (std::size_t s = 0; s < t.sources.size(); ++s) {
    os << ',' << cell([&](const std::string& r) { return t.total(r, s); });
  }
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// HTTP service

struct StudyServer::Impl {
  const StudyPlan& plan;
  JudgmentStore& store;
  httplib::Server server;
  std::thread worker;
  std::mutex mu;
  std::map<std::string, std::size_t> progress;  // reviewer -> judged count
  std::map<std::string, std::string> payloads;  // item_id -> data URI

  Impl(const StudyPlan& p, JudgmentStore& s) : plan(p), store(s) {
    for (const auto& r : plan.config.reviewers) progress[r] = 0;
    for (const auto& j : store.records()) {
      auto it = progress.find(j.reviewer_id);
      if (it == progress.end()) throw Error("judgment store names unknown reviewer '" + j.reviewer_id + "'");
      const auto& order = plan.orders.at(j.reviewer_id);
      if (it->second >= order.size() || plan.items[order[it->second]].item_id != j.item_id) {
        throw Error("judgment store does not follow the plan order for reviewer '" + j.reviewer_id + "'");
      }
      ++it->second;
    }
    routes();
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, json{{"error", msg}});
  }

  std::string payload(const StudyItem& item) {
    if (auto it = payloads.find(item.item_id); it != payloads.end()) return it->second;
    const auto image = prepare_study_image(io::read_gray_png(item.image_path));
    auto uri = "data:image/png;base64," + base64_encode(io::encode_png8(image));
    payloads.emplace(item.item_id, uri);
    return uri;
  }

  void routes() {
    server.Get(R"(/api/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string reviewer = req.matches[1];
      std::lock_guard lock(mu);
      auto it = progress.find(reviewer);
      if (it == progress.end()) return send_error(res, 404, "unknown reviewer");
      const auto& order = plan.orders.at(reviewer);
      const auto total = order.size();
      if (it->second >= total) {
        return send_json(res, 200, json{{"done", true}, {"submitted", it->second}, {"total", total}});
      }
      const auto& item = plan.items[order[it->second]];
      try {
        send_json(res, 200, json{{"done", false},
                                 {"item_id", item.item_id},
                                 {"image", payload(item)},
                                 {"progress", {{"index", it->second + 1}, {"total", total}}}});
      } catch (const std::exception&) {
        send_error(res, 500, "image unavailable");
      }
    });

    server.Post(R"(/api/session/([^/]+)/judgment)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string reviewer = req.matches[1];
      json body;
      try {
        body = json::parse(req.body);
      } catch (const std::exception&) {
        return send_error(res, 400, "body is not JSON");
      }
      if (!body.is_object() || !body.contains("item_id") || !body["item_id"].is_string() ||
          !body.contains("verdict") || !body["verdict"].is_string()) {
        return send_error(res, 400, "expected {item_id, verdict}");
      }
      const auto verdict = verdict_from_string(body["verdict"].get<std::string>());
      if (!verdict) return send_error(res, 400, "verdict must be real or fake");
      const auto item_id = body["item_id"].get<std::string>();

      std::lock_guard lock(mu);
      auto it = progress.find(reviewer);
      if (it == progress.end()) return send_error(res, 404, "unknown reviewer");
      const auto& order = plan.orders.at(reviewer);
      for (std::size_t k = 0; k < it->second; ++k) {
        if (plan.items[order[k]].item_id == item_id) return send_error(res, 409, "already judged");
      }
      if (it->second >= order.size() || plan.items[order[it->second]].item_id != item_id) {
        return send_error(res, 409, "not the current item");
      }
      try {
        store.append({reviewer, item_id, *verdict, utc_now()});
      } catch (const std::exception&) {
        return send_error(res, 500, "could not record judgment");
      }
      ++it->second;
      res.status = 204;
    });

    server.Get("/api/report/tally", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu);
      const auto t = tally(store.records(), plan);
      json reviewers = json::object();
      json pending = json::array();
      for (const auto& r : t.reviewers) {
        if (progress.at(r) < plan.orders.at(r).size()) {
          pending.push_back(r);
          continue;
        }
        json rows = json::object();
        for (std::size_t p = 0; p < t.pathologies.size(); ++p) {
          json row = json::object();
          for (std::size_t s = 0; s < t.sources.size(); ++s) row[t.sources[s]] = t.real_counts.at(r)[p][s];
          rows[std::string(to_string(t.pathologies[p]))] = row;
        }
        json total = json::object();
        for (std::size_t s = 0; s < t.sources.size(); ++s) total[t.sources[s]] = t.total(r, s);
        rows["Total"] = total;
        reviewers[r] = rows;
      }
      send_json(res, 200, json{{"sources", t.sources}, {"reviewers", reviewers}, {"pending", pending}});
    });
  }
};

StudyServer::StudyServer(const StudyPlan& plan, JudgmentStore& store)
    : impl_(std::make_unique<Impl>(plan, store)) {}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void StudyServer::listen() { impl_->server.listen_after_bind(); }

void StudyServer::start() {
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void StudyServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace pathsyn::study
