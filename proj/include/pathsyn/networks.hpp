#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "pathsyn/io.hpp"
#include "pathsyn/nn.hpp"

namespace pathsyn::networks {

inline constexpr double kInitStd = 0.02;
inline constexpr int kCheckpointVersion = 1;

// U-shaped encoder/decoder. `levels` stride-2 downsamplings; channel width
// at level i is base_width * min(2^i, 8).
struct GeneratorArch {
  int levels = 8;
  int base_width = 64;
  int channels = 1;
  int image_side = 256;
  bool dropout = false;  // 0.5 on the three innermost decoder levels, training mode only

  int width_at(int level) const;
  bool operator==(const GeneratorArch&) const = default;
};

// Patch discriminator on the channel-stacked (condition, candidate) pair.
// `layers` stride-2 convolutions followed by two stride-1 convolutions; the
// default gives 70-pixel patches and a 30x30 score map on 256x256 inputs.
struct DiscriminatorArch {
  int layers = 3;
  int base_width = 64;
  int channels = 1;

  int receptive_field() const;
  int output_side(int input_side) const;
  bool operator==(const DiscriminatorArch&) const = default;
};

enum class Mode { Inference, Training };

class Generator {
 public:
  // Intermediate values kept for the backward pass.
  struct Tape {
    nn::Tensor input;
    std::vector<nn::Tensor> enc_pre;   // conv outputs before norm, per level
    std::vector<nn::Tensor> enc;       // level outputs (after norm where used)
    std::vector<nn::ConvCache> enc_col;
    std::vector<nn::NormCache> enc_norm;
    std::vector<nn::Tensor> dec_in;    // input to each decoder convT (pre-relu)
    std::vector<nn::Tensor> dec_pre;   // convT outputs before norm
    std::vector<nn::NormCache> dec_norm;
    std::vector<std::vector<std::uint8_t>> dropout_keep;
    nn::Tensor output;
  };

  Generator() = default;
  Generator(GeneratorArch arch, nn::ParamSet params);

  const GeneratorArch& arch() const { return arch_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  nn::Tensor forward(const nn::Tensor& x) const;
  nn::Tensor forward(const nn::Tensor& x, Tape& tape, Mode mode = Mode::Inference,
                     std::mt19937_64* dropout_rng = nullptr) const;
  // Accumulates parameter gradients; d_input may be null.
  void backward(const Tape& tape, const nn::Tensor& d_output, nn::Tensor* d_input = nullptr);

 private:
  GeneratorArch arch_;
  nn::ParamSet params_;
};

class Discriminator {
 public:
  struct Tape {
    nn::Tensor input;  // stacked pair
    std::vector<nn::Tensor> pre;       // conv outputs
    std::vector<nn::Tensor> normed;    // after norm (or == pre)
    std::vector<nn::ConvCache> col;
    std::vector<nn::NormCache> norm;
    std::vector<nn::Tensor> act_in;    // input to each conv
    nn::Tensor output;                 // sigmoid scores
  };

  Discriminator() = default;
  Discriminator(DiscriminatorArch arch, nn::ParamSet params);

  const DiscriminatorArch& arch() const { return arch_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Per-patch probabilities in (0,1).
  nn::Tensor forward(const nn::Tensor& condition, const nn::Tensor& candidate) const;
  nn::Tensor forward(const nn::Tensor& condition, const nn::Tensor& candidate, Tape& tape) const;
  // d_scores is the gradient w.r.t. the sigmoid outputs. Gradients w.r.t.
  // the candidate are returned through d_candidate when non-null.
  void backward(const Tape& tape, const nn::Tensor& d_scores, nn::Tensor* d_candidate = nullptr);

 private:
  DiscriminatorArch arch_;
  nn::ParamSet params_;
};

Generator init_generator(std::uint64_t seed, int levels, int base_width, int image_side = 256,
                         int channels = 1);
Generator init_generator(std::uint64_t seed, const GeneratorArch& arch);
Discriminator init_discriminator(std::uint64_t seed, const DiscriminatorArch& arch = {});

nn::Tensor generator_forward(const Generator& g, const nn::Tensor& x);
nn::Tensor discriminator_forward(const Discriminator& d, const nn::Tensor& condition,
                                 const nn::Tensor& candidate);

// Checkpoint directory: manifest.txt (key = value, including version and
// `array.<name> = d0x d1x...`) plus one raw little-endian float64 file per
// array, `<name>.bin`.
void save_params(const std::filesystem::path& dir, const io::KeyValues& descriptor,
                 const nn::ParamSet& params);
// Loads every array listed in the manifest into a fresh ParamSet.
nn::ParamSet load_params(const std::filesystem::path& dir, io::KeyValues* descriptor = nullptr);

void save_generator(const std::filesystem::path& dir, const Generator& g);
Generator load_generator(const std::filesystem::path& dir);
void save_discriminator(const std::filesystem::path& dir, const Discriminator& d);
Discriminator load_discriminator(const std::filesystem::path& dir);

io::KeyValues describe(const GeneratorArch& arch);
GeneratorArch generator_arch_from(const io::KeyValues& kv);
io::KeyValues describe(const DiscriminatorArch& arch);
DiscriminatorArch discriminator_arch_from(const io::KeyValues& kv);

}  // namespace pathsyn::networks
