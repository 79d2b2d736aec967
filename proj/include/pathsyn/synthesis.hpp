#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "pathsyn/corpus.hpp"
#include "pathsyn/networks.hpp"
#include "pathsyn/pairing.hpp"

namespace pathsyn::synthesis {

// A generated composite plus the annotation it inherits. Pixels are kept at
// the 8-bit precision they are exported with.
struct SyntheticRecord {
  std::string file_name;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels8;
  Annotation parent_annotation;  // transformed box, native_resolution = image side
  std::string parent_image_id;
  std::string model_tag;
  std::uint64_t variant_seed = 0;

  GrayImage image() const;
};

// Pixel-space composite x + g_out * (1 - m).
GrayImage composite(const GrayImage& x, const GrayImage& g_out, const pairing::BinaryMask& m);
// Same with the mask given as a 0/1 image (any 1-region shape, including none).
GrayImage composite(const GrayImage& x, const GrayImage& g_out, const GrayImage& m);

struct SynthesisOptions {
  std::string model_tag = "pix2pix";
  std::set<pairing::AugmentOp> augment = {pairing::AugmentOp::Rotate, pairing::AugmentOp::Reflect,
                                          pairing::AugmentOp::Crop};
};

// Seed of the k-th record; also the seed of its augmentation draw.
std::uint64_t variant_seed(std::uint64_t seed, std::size_t k);

// The first pass over the annotations is untransformed; later passes use
// options.augment.
std::set<pairing::AugmentOp> variant_ops(std::size_t k, std::size_t n_annotations,
                                         const SynthesisOptions& options);

// The transformed parent pair that record k is built from.
pairing::TrainingPair variant_pair(const Annotation& annotation, const GrayImage& parent,
                                   std::uint64_t variant_seed,
                                   const std::set<pairing::AugmentOp>& ops);

// Runs G on one variant and restores the masked region from the source.
SyntheticRecord synthesize_one(const networks::Generator& g, const pairing::TrainingPair& variant,
                               const std::string& model_tag, std::uint64_t variant_seed);

// Cycles over annotations until `count` records exist; writes
// `{model_tag}_{parent image id}_{variant_seed}.png` files and manifest.csv
// (`image_id,label,x,y,w,h,model_tag`) to out_dir.
std::vector<SyntheticRecord> synthesize_dataset(const networks::Generator& g,
                                                const std::vector<Annotation>& annotations,
                                                const corpus::ImageStore& images, int count,
                                                std::uint64_t seed,
                                                const std::filesystem::path& out_dir,
                                                const SynthesisOptions& options = {});

// Accepts either a generator directory or a training checkpoint containing
// one under `generator/`.
std::vector<SyntheticRecord> synthesize_dataset(const std::filesystem::path& checkpoint,
                                                const std::vector<Annotation>& annotations,
                                                const corpus::ImageStore& images, int count,
                                                std::uint64_t seed,
                                                const std::filesystem::path& out_dir,
                                                const SynthesisOptions& options = {});

networks::Generator load_generator_checkpoint(const std::filesystem::path& checkpoint);

// Reads a directory written by synthesize_dataset (pixels from the PNGs).
std::vector<SyntheticRecord> read_synthetic_dir(const std::filesystem::path& dir);

}  // namespace pathsyn::synthesis
