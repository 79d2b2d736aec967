#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pathsyn/io.hpp"
#include "pathsyn/types.hpp"

namespace pathsyn::study {

inline constexpr int kStudyImageSide = 224;
inline constexpr double kStudyCropFraction = 0.875;

// A directory of images with either manifest.csv (synthetic output) or
// annotations.csv (corpus format) naming each image and its pathology.
struct StudySource {
  std::string tag;
  std::filesystem::path dir;
};

struct StudyConfig {
  std::vector<StudySource> sources;
  int count_per_pathology = 25;  // per source
  std::vector<Pathology> pathologies{kAllPathologies.begin(), kAllPathologies.end()};
  std::uint64_t seed = 0;
  std::vector<std::string> reviewers;
  std::string secret;  // item-id key; derived from the seed when empty

  void validate() const;
};

// Keys: sources (tag:dir, comma separated), count, pathologies, seed,
// reviewers (comma separated), secret.
StudyConfig study_config_from(const io::KeyValues& kv);

struct StudyItem {
  std::string item_id;
  std::string source_tag;
  Pathology pathology = Pathology::Atelectasis;
  std::filesystem::path image_path;
};

struct StudyPlan {
  StudyConfig config;
  std::vector<StudyItem> items;  // sorted by item_id
  std::map<std::string, std::vector<std::size_t>> orders;  // reviewer -> indices into items

  const StudyItem* find(const std::string& item_id) const;
};

StudyPlan build_study(const StudyConfig& cfg);

// Center crop to 87.5% of each side, then bilinear resize to 224x224.
GrayImage prepare_study_image(const GrayImage& image);

enum class Verdict { Real, Fake };
std::string to_string(Verdict v);
std::optional<Verdict> verdict_from_string(const std::string& s);

struct JudgmentRecord {
  std::string reviewer_id;
  std::string item_id;
  Verdict verdict = Verdict::Fake;
  std::string timestamp;  // ISO 8601 UTC
};

std::string utc_now();

// Line-delimited JSON file; existing lines are loaded on open and new
// records are only ever appended.
class JudgmentStore {
 public:
  explicit JudgmentStore(std::filesystem::path path);

  void append(const JudgmentRecord& r);
  std::vector<JudgmentRecord> records() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<JudgmentRecord> records_;
};

std::vector<JudgmentRecord> read_judgments(const std::filesystem::path& path);

struct TallyTable {
  std::vector<std::string> sources;
  std::vector<Pathology> pathologies;
  std::vector<std::string> reviewers;
  // reviewer -> [pathology][source] count of "real" verdicts
  std::map<std::string, std::vector<std::vector<int>>> real_counts;
  std::vector<std::vector<int>> shown;  // [pathology][source]

  int total(const std::string& reviewer, std::size_t source) const;
};

TallyTable tally(const std::vector<JudgmentRecord>& judgments, const StudyPlan& plan);

// Pathology rows plus Total; one column per source; cells "R1|R2|...".
std::string format_table1(const TallyTable& t);

class StudyServer {
 public:
  StudyServer(const StudyPlan& plan, JudgmentStore& store);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void start();   // listen() on a background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Helpers shared with tests.
std::string hmac_sha256_hex(const std::string& key, const std::string& message);
std::string base64_encode(const std::string& bytes);

}  // namespace pathsyn::study
