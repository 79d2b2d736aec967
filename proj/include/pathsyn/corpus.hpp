#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pathsyn/types.hpp"

namespace pathsyn::corpus {

inline constexpr int kWorkingResolution = 256;
inline constexpr int kNihNativeResolution = 1024;

struct ParsedAnnotations {
  std::vector<Annotation> annotations;
  std::size_t skipped = 0;  // rows whose label is outside the class set
};

// Reads `image_id,label,x,y,w,h` rows after a header line. Extra trailing
// columns are ignored. Row numbers in errors count data rows from 1.
ParsedAnnotations parse_annotations(const std::filesystem::path& csv_path,
                                    int native_resolution = kNihNativeResolution,
                                    const std::vector<Pathology>& classes = {
                                        kAllPathologies.begin(), kAllPathologies.end()});

void write_annotations(const std::filesystem::path& csv_path,
                       const std::vector<Annotation>& annotations);

struct CorpusSplit {
  std::vector<Annotation> train;
  std::vector<Annotation> eval;
  std::uint64_t seed = 0;
};

// Shuffles with `seed`; the last ceil((1 - train_fraction) * N) go to eval,
// computed in IEEE double (820 at 0.7 -> 573 / 247).
CorpusSplit split_train_eval(const std::vector<Annotation>& annotations, double train_fraction,
                             std::uint64_t seed);

// Bilinear resampling with pixel-centre alignment. Resampling to the same size
// returns the input unchanged.
GrayImage resize_bilinear(const GrayImage& image, int height, int width);

GrayImage load_and_resize(const std::filesystem::path& path, int target = kWorkingResolution);

// Images keyed by id. Backed by a directory (lazy, resized on first access)
// and/or explicit inserts.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::filesystem::path root, int resolution = kWorkingResolution);

  void insert(GrayImage image);
  bool contains(const std::string& id) const;
  const GrayImage& get(const std::string& id) const;
  int resolution() const { return resolution_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  int resolution_ = kWorkingResolution;
  mutable std::map<std::string, GrayImage> cache_;
};

struct PhantomCorpus {
  std::vector<Annotation> annotations;  // one per diseased image, native res 256
  std::vector<GrayImage> diseased;
  std::vector<GrayImage> healthy;
};

// Procedural lung-like images. Writes PNGs, `annotations.csv` (diseased) and
// `healthy.txt` (one file name per line) into out_dir.
PhantomCorpus generate_phantom_corpus(int n_diseased, int n_healthy, std::uint64_t seed,
                                      const std::filesystem::path& out_dir);

// Same images, no filesystem access.
PhantomCorpus render_phantom_corpus(int n_diseased, int n_healthy, std::uint64_t seed);

// `native_resolution` from the corpus.txt next to annotations.csv, if any.
int native_resolution_of(const std::filesystem::path& dir, int fallback = kNihNativeResolution);

// Reads a directory written by generate_phantom_corpus.
std::vector<GrayImage> load_healthy_list(const std::filesystem::path& dir,
                                         int resolution = kWorkingResolution);

}  // namespace pathsyn::corpus
