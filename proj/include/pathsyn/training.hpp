#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pathsyn/networks.hpp"
#include "pathsyn/pairing.hpp"

namespace pathsyn::training {

enum class GeneratorLoss {
  NonSaturating,  // -mean log D(x, x~)
  Minimax,        // mean log(1 - D(x, x~)), the literal adversarial term
};

// Defaults for lambda, learning rates, batch size and the optimizer moments
// follow the common pix2pix settings; they are not taken from any
// measurement in this project.
struct TrainingConfig {
  double lambda_l1 = 100.0;
  double learning_rate_g = 2e-4;
  double learning_rate_d = 2e-4;
  int batch_size = 1;
  long total_steps = 2000;
  long checkpoint_interval = 500;
  std::uint64_t seed = 0;
  double log_eps = 1e-7;

  GeneratorLoss generator_loss = GeneratorLoss::NonSaturating;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  networks::GeneratorArch generator;
  networks::DiscriminatorArch discriminator;
  std::set<pairing::AugmentOp> augment;

  void validate() const;
};

// Keys are the field names above plus gen_levels, gen_base_width,
// gen_dropout, disc_layers, disc_base_width, image_side, generator_loss
// (non_saturating|minimax) and augment (comma list of rotate,reflect,crop).
TrainingConfig config_from(const io::KeyValues& kv, TrainingConfig base = {});
io::KeyValues to_key_values(const TrainingConfig& cfg);

struct Adam {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void step(nn::ParamSet& params);
};

struct LossRecord {
  long step = 0;
  double loss_gan_d = 0;  // discriminator loss, -L_GAN
  double loss_gan_g = 0;  // generator adversarial term
  double loss_l1 = 0;     // L1(x~, y) in network space
};

struct TrainState {
  networks::Generator g;
  networks::Discriminator d;
  Adam adam_g;
  Adam adam_d;
  long step = 0;
  std::vector<LossRecord> history;
};

TrainState init_state(const TrainingConfig& cfg);

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Sum of mean log(clamp(d_real)) and mean log(clamp(1 - d_fake)), pooled
// over every patch of every map.
double adversarial_loss(std::span<const nn::Tensor> d_real, std::span<const nn::Tensor> d_fake,
                        double eps);
double adversarial_loss(const nn::Tensor& d_real, const nn::Tensor& d_fake, double eps);

double l1_loss(std::span<const nn::Tensor> y, std::span<const nn::Tensor> x_tilde);
double l1_loss(const nn::Tensor& y, const nn::Tensor& x_tilde);

// Adversarial term (per cfg.generator_loss) plus lambda * L1.
double generator_objective(std::span<const nn::Tensor> d_fake, std::span<const nn::Tensor> y,
                           std::span<const nn::Tensor> x_tilde, const TrainingConfig& cfg);
double generator_objective(const nn::Tensor& d_fake, const nn::Tensor& y,
                           const nn::Tensor& x_tilde, const TrainingConfig& cfg);

double generator_adversarial_term(std::span<const nn::Tensor> d_fake, const TrainingConfig& cfg);

// Network-space composite: inside the mask the input, outside the generator.
nn::Tensor composite_network(const nn::Tensor& x, const nn::Tensor& g_out,
                             const pairing::BinaryMask& m);

// Network-space view of one pair plus the generator pass over it.
struct PreparedSample {
  std::string id;
  nn::Tensor x;
  nn::Tensor y;
  pairing::BinaryMask mask{1, 1, {0, 0, 1, 1}};
  networks::Generator::Tape g_tape;
  nn::Tensor x_tilde;
};

std::vector<PreparedSample> prepare_batch(const networks::Generator& g, long step,
                                          std::span<const pairing::TrainingPair> batch,
                                          const TrainingConfig& cfg);

// One optimizer step on -L_GAN for D; G untouched. Returns the D loss.
double discriminator_update(TrainState& state, const std::vector<PreparedSample>& batch,
                            const TrainingConfig& cfg);
// One optimizer step on the generator objective; D parameters untouched.
// Returns {adversarial term, L1}.
std::pair<double, double> generator_update(TrainState& state,
                                           const std::vector<PreparedSample>& batch,
                                           const TrainingConfig& cfg);

void train_step(TrainState& state, std::span<const pairing::TrainingPair> batch,
                const TrainingConfig& cfg);

// Gradient of the D loss (-L_GAN) and of the generator objective with
// respect to every parameter, for verification against finite differences.
double discriminator_loss_and_grad(networks::Discriminator& d,
                                   const std::vector<PreparedSample>& batch,
                                   const TrainingConfig& cfg);
double generator_objective_and_grad(networks::Generator& g, networks::Discriminator& d,
                                    std::span<const pairing::TrainingPair> batch,
                                    const TrainingConfig& cfg);

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  bool quiet = true;
};

// Runs until state.step == cfg.total_steps, checkpointing to
// out_dir/ckpt_step{N} every checkpoint_interval steps and at the end, and
// writing out_dir/losses.csv.
TrainState train(const std::vector<pairing::TrainingPair>& pairs, const TrainingConfig& cfg,
                 const std::filesystem::path& out_dir, const TrainOptions& options = {});

void save_state(const std::filesystem::path& dir, const TrainState& state,
                const TrainingConfig& cfg);
TrainState load_state(const std::filesystem::path& dir);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

// Mean |x~ - y| in [0,1] pixel scale over the given pairs, inference mode.
double mean_pixel_l1(const networks::Generator& g,
                     std::span<const pairing::TrainingPair> pairs);

}  // namespace pathsyn::training
