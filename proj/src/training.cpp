#include "pathsyn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace pathsyn::training {

namespace fs = std::filesystem;
using nn::Tensor;

void TrainingConfig::validate() const {
  if (!(lambda_l1 >= 0)) throw Error("lambda_l1 must be >= 0");
  if (!(learning_rate_g > 0) || !(learning_rate_d > 0)) throw Error("learning rates must be > 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (total_steps < 0) throw Error("total_steps must be >= 0");
  if (checkpoint_interval < 1) throw Error("checkpoint_interval must be > 0");
  if (!(log_eps > 0) || log_eps >= 1) throw Error("log_eps must lie in (0, 1)");
}

namespace {

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string augment_string(const std::set<pairing::AugmentOp>& ops) {
  std::string s;
  for (auto op : ops) {
    if (!s.empty()) s += ',';
    s += op == pairing::AugmentOp::Rotate ? "rotate" : op == pairing::AugmentOp::Reflect ? "reflect" : "crop";
  }
  return s.empty() ? "none" : s;
}

}  // namespace

TrainingConfig config_from(const io::KeyValues& kv, TrainingConfig cfg) {
  for (const auto& [k, v] : kv) {
    if (k == "lambda_l1") cfg.lambda_l1 = to_double(k, v);
    else if (k == "learning_rate_g") cfg.learning_rate_g = to_double(k, v);
    else if (k == "learning_rate_d") cfg.learning_rate_d = to_double(k, v);
    else if (k == "batch_size") cfg.batch_size = static_cast<int>(to_long(k, v));
    else if (k == "total_steps") cfg.total_steps = to_long(k, v);
    else if (k == "checkpoint_interval") cfg.checkpoint_interval = to_long(k, v);
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(k, v));
    else if (k == "log_eps") cfg.log_eps = to_double(k, v);
    else if (k == "adam_beta1") cfg.adam_beta1 = to_double(k, v);
    else if (k == "adam_beta2") cfg.adam_beta2 = to_double(k, v);
    else if (k == "gen_levels") cfg.generator.levels = static_cast<int>(to_long(k, v));
    else if (k == "gen_base_width") cfg.generator.base_width = static_cast<int>(to_long(k, v));
    else if (k == "gen_dropout") cfg.generator.dropout = to_bool(k, v);
    else if (k == "image_side") cfg.generator.image_side = static_cast<int>(to_long(k, v));
    else if (k == "disc_layers") cfg.discriminator.layers = static_cast<int>(to_long(k, v));
    else if (k == "disc_base_width") cfg.discriminator.base_width = static_cast<int>(to_long(k, v));
    else if (k == "augment") cfg.augment = pairing::parse_augment_ops(v);
    else if (k == "generator_loss") {
      if (v == "non_saturating") cfg.generator_loss = GeneratorLoss::NonSaturating;
      else if (v == "minimax") cfg.generator_loss = GeneratorLoss::Minimax;
      else throw Error("generator_loss must be non_saturating or minimax");
    }
    // Unknown keys belong to other subcommands sharing the file.
  }
  cfg.validate();
  return cfg;
}

io::KeyValues to_key_values(const TrainingConfig& cfg) {
  return {
      {"lambda_l1", io::format_number(cfg.lambda_l1)},
      {"learning_rate_g", io::format_number(cfg.learning_rate_g)},
      {"learning_rate_d", io::format_number(cfg.learning_rate_d)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"total_steps", std::to_string(cfg.total_steps)},
      {"checkpoint_interval", std::to_string(cfg.checkpoint_interval)},
      {"seed", std::to_string(cfg.seed)},
      {"log_eps", io::format_number(cfg.log_eps)},
      {"adam_beta1", io::format_number(cfg.adam_beta1)},
      {"adam_beta2", io::format_number(cfg.adam_beta2)},
      {"gen_levels", std::to_string(cfg.generator.levels)},
      {"gen_base_width", std::to_string(cfg.generator.base_width)},
      {"gen_dropout", cfg.generator.dropout ? "1" : "0"},
      {"image_side", std::to_string(cfg.generator.image_side)},
      {"disc_layers", std::to_string(cfg.discriminator.layers)},
      {"disc_base_width", std::to_string(cfg.discriminator.base_width)},
      {"augment", augment_string(cfg.augment)},
      {"generator_loss",
       cfg.generator_loss == GeneratorLoss::NonSaturating ? "non_saturating" : "minimax"},
  };
}

void Adam::step(nn::ParamSet& params) {
  auto& items = params.items();
  if (m.size() != items.size()) {
    m.assign(items.size(), {});
    v.assign(items.size(), {});
    for (std::size_t i = 0; i < items.size(); ++i) {
      m[i].assign(items[i].size(), 0.0);
      v[i].assign(items[i].size(), 0.0);
    }
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    auto& mi = m[i];
    auto& vi = v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      mi[k] = beta1 * mi[k] + (1.0 - beta1) * g;
      vi[k] = beta2 * vi[k] + (1.0 - beta2) * g * g;
      p.value[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
    }
  }
}

namespace {

Adam make_adam(double lr, const TrainingConfig& cfg) {
  Adam a;
  a.lr = lr;
  a.beta1 = cfg.adam_beta1;
  a.beta2 = cfg.adam_beta2;
  return a;
}

}  // namespace

TrainState init_state(const TrainingConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.g = networks::init_generator(cfg.seed, cfg.generator);
  s.d = networks::init_discriminator(cfg.seed + 1, cfg.discriminator);
  s.adam_g = make_adam(cfg.learning_rate_g, cfg);
  s.adam_d = make_adam(cfg.learning_rate_d, cfg);
  return s;
}

namespace {

double clamped_log(double p, double eps) { return std::log(std::clamp(p, eps, 1.0)); }

// d/dp log(clamp(p, eps, 1)); zero where the clamp is active.
double clamped_log_grad(double p, double eps) { return p > eps && p <= 1.0 ? 1.0 / p : 0.0; }

std::size_t total_size(std::span<const Tensor> ts) {
  std::size_t n = 0;
  for (const auto& t : ts) n += t.size();
  return n;
}

double mean_log(std::span<const Tensor> maps, double eps, bool complement) {
  double s = 0;
  for (const auto& t : maps) {
    for (double p : t.v) s += clamped_log(complement ? 1.0 - p : p, eps);
  }
  return s / static_cast<double>(total_size(maps));
}

void check_pairing(std::span<const Tensor> a, std::span<const Tensor> b, const char* what) {
  if (a.size() != b.size() || a.empty()) throw Error(std::string(what) + ": batch sizes differ or are empty");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) throw Error(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

double adversarial_loss(std::span<const Tensor> d_real, std::span<const Tensor> d_fake, double eps) {
  check_pairing(d_real, d_fake, "adversarial_loss");
  if (!(eps > 0)) throw Error("adversarial_loss: eps must be > 0");
  return mean_log(d_real, eps, false) + mean_log(d_fake, eps, true);
}

double adversarial_loss(const Tensor& d_real, const Tensor& d_fake, double eps) {
  return adversarial_loss(std::span(&d_real, 1), std::span(&d_fake, 1), eps);
}

double l1_loss(std::span<const Tensor> y, std::span<const Tensor> x_tilde) {
  check_pairing(y, x_tilde, "l1_loss");
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t k = 0; k < y[i].size(); ++k) s += std::abs(y[i].v[k] - x_tilde[i].v[k]);
  }
  return s / static_cast<double>(total_size(y));
}

double l1_loss(const Tensor& y, const Tensor& x_tilde) {
  return l1_loss(std::span(&y, 1), std::span(&x_tilde, 1));
}

double generator_adversarial_term(std::span<const Tensor> d_fake, const TrainingConfig& cfg) {
  if (d_fake.empty()) throw Error("generator objective: empty batch");
  return cfg.generator_loss == GeneratorLoss::Minimax ? mean_log(d_fake, cfg.log_eps, true)
                                                      : -mean_log(d_fake, cfg.log_eps, false);
}

double generator_objective(std::span<const Tensor> d_fake, std::span<const Tensor> y,
                           std::span<const Tensor> x_tilde, const TrainingConfig& cfg) {
  return generator_adversarial_term(d_fake, cfg) + cfg.lambda_l1 * l1_loss(y, x_tilde);
}

double generator_objective(const Tensor& d_fake, const Tensor& y, const Tensor& x_tilde,
                           const TrainingConfig& cfg) {
  return generator_objective(std::span(&d_fake, 1), std::span(&y, 1), std::span(&x_tilde, 1), cfg);
}

Tensor composite_network(const Tensor& x, const Tensor& g_out, const pairing::BinaryMask& m) {
  if (!x.same_shape(g_out) || x.h != m.height() || x.w != m.width()) {
    throw Error("composite: shape mismatch");
  }
  Tensor out = g_out;
  const auto& r = m.rect();
  for (int c = 0; c < x.c; ++c) {
    for (int yy = r.y0; yy < r.y1; ++yy) {
      for (int xx = r.x0; xx < r.x1; ++xx) out.at(c, yy, xx) = x.at(c, yy, xx);
    }
  }
  return out;
}

namespace {

void zero_inside(Tensor& t, const pairing::BinaryMask& m) {
  const auto& r = m.rect();
  for (int c = 0; c < t.c; ++c) {
    for (int yy = r.y0; yy < r.y1; ++yy) {
      for (int xx = r.x0; xx < r.x1; ++xx) t.at(c, yy, xx) = 0.0;
    }
  }
}

std::string batch_ids(std::span<const pairing::TrainingPair> batch) {
  std::string s;
  for (const auto& p : batch) s += (s.empty() ? "" : ",") + p.id;
  return s;
}

std::string batch_ids(const std::vector<PreparedSample>& batch) {
  std::string s;
  for (const auto& p : batch) s += (s.empty() ? "" : ",") + p.id;
  return s;
}

// Gradient of mean log(clamp(.)) terms w.r.t. each score, already divided
// by the pooled patch count and multiplied by `sign`.
Tensor log_term_grad(const Tensor& scores, double eps, bool complement, double sign,
                     std::size_t pooled) {
  Tensor g(scores.c, scores.h, scores.w);
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double p = scores.v[k];
    const double dlog = complement ? -clamped_log_grad(1.0 - p, eps) : clamped_log_grad(p, eps);
    g.v[k] = sign * dlog / static_cast<double>(pooled);
  }
  return g;
}

}  // namespace

std::vector<PreparedSample> prepare_batch(const networks::Generator& g, long step,
                                          std::span<const pairing::TrainingPair> batch,
                                          const TrainingConfig& cfg) {
  if (batch.empty()) throw Error("train_step: empty batch");
  std::vector<PreparedSample> out;
  out.reserve(batch.size());
  std::mt19937_64 dropout_rng(cfg.seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(step + 1)));
  for (const auto& p : batch) {
    PreparedSample s;
    s.id = p.id;
    s.x = nn::to_network(p.x);
    s.y = nn::to_network(p.y);
    s.mask = p.m;
    const Tensor g_out = g.forward(s.x, s.g_tape, networks::Mode::Training, &dropout_rng);
    s.x_tilde = composite_network(s.x, g_out, s.mask);
    out.push_back(std::move(s));
  }
  return out;
}

double discriminator_loss_and_grad(networks::Discriminator& d,
                                   const std::vector<PreparedSample>& batch,
                                   const TrainingConfig& cfg) {
  std::vector<Tensor> real(batch.size()), fake(batch.size());
  std::vector<networks::Discriminator::Tape> real_tapes(batch.size()), fake_tapes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    real[i] = d.forward(batch[i].x, batch[i].y, real_tapes[i]);
    fake[i] = d.forward(batch[i].x, batch[i].x_tilde, fake_tapes[i]);
  }
  const double loss = -adversarial_loss(real, fake, cfg.log_eps);
  const std::size_t pooled = total_size(real);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    d.backward(real_tapes[i], log_term_grad(real[i], cfg.log_eps, false, -1.0, pooled));
    d.backward(fake_tapes[i], log_term_grad(fake[i], cfg.log_eps, true, -1.0, pooled));
  }
  return loss;
}

namespace {

// Backpropagates the generator objective for samples whose G tapes are
// filled. D parameter gradients are accumulated as a side effect.
std::pair<double, double> generator_backward(networks::Generator& g, networks::Discriminator& d,
                                             const std::vector<PreparedSample>& batch,
                                             const TrainingConfig& cfg) {
  std::vector<Tensor> fake(batch.size()), ys(batch.size()), xts(batch.size());
  std::vector<networks::Discriminator::Tape> tapes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    fake[i] = d.forward(batch[i].x, batch[i].x_tilde, tapes[i]);
    ys[i] = batch[i].y;
    xts[i] = batch[i].x_tilde;
  }
  const double adv = generator_adversarial_term(fake, cfg);
  const double l1 = l1_loss(ys, xts);
  const std::size_t pooled = total_size(fake);
  const std::size_t pixels = total_size(ys);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor d_scores =
        cfg.generator_loss == GeneratorLoss::Minimax
            ? log_term_grad(fake[i], cfg.log_eps, true, 1.0, pooled)
            : log_term_grad(fake[i], cfg.log_eps, false, -1.0, pooled);
    Tensor d_xt;
    d.backward(tapes[i], d_scores, &d_xt);
    const double l1_scale = cfg.lambda_l1 / static_cast<double>(pixels);
    for (std::size_t k = 0; k < d_xt.size(); ++k) {
      const double diff = xts[i].v[k] - ys[i].v[k];
      d_xt.v[k] += l1_scale * static_cast<double>((diff > 0) - (diff < 0));
    }
    // x~ takes the generator output only outside the mask.
    zero_inside(d_xt, batch[i].mask);
    g.backward(batch[i].g_tape, d_xt);
  }
  return {adv, l1};
}

}  // namespace

double generator_objective_and_grad(networks::Generator& g, networks::Discriminator& d,
                                    std::span<const pairing::TrainingPair> batch,
                                    const TrainingConfig& cfg) {
  auto prepared = prepare_batch(g, 0, batch, cfg);
  const auto [adv, l1] = generator_backward(g, d, prepared, cfg);
  return adv + cfg.lambda_l1 * l1;
}

double discriminator_update(TrainState& state, const std::vector<PreparedSample>& batch,
                            const TrainingConfig& cfg) {
  state.d.params().zero_grad();
  const double loss = discriminator_loss_and_grad(state.d, batch, cfg);
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite discriminator loss at step " + std::to_string(state.step) +
                        " (batch " + batch_ids(batch) + ")");
  }
  state.adam_d.step(state.d.params());
  return loss;
}

std::pair<double, double> generator_update(TrainState& state,
                                           const std::vector<PreparedSample>& batch,
                                           const TrainingConfig& cfg) {
  state.g.params().zero_grad();
  const auto losses = generator_backward(state.g, state.d, batch, cfg);
  // D gradients from this pass are discarded; D is frozen here.
  state.d.params().zero_grad();
  if (!std::isfinite(losses.first) || !std::isfinite(losses.second)) {
    throw TrainingError("non-finite generator loss at step " + std::to_string(state.step) +
                        " (batch " + batch_ids(batch) + ")");
  }
  state.adam_g.step(state.g.params());
  return losses;
}

void train_step(TrainState& state, std::span<const pairing::TrainingPair> batch,
                const TrainingConfig& cfg) {
  const auto prepared = prepare_batch(state.g, state.step, batch, cfg);
  const double d_loss = discriminator_update(state, prepared, cfg);
  const auto [g_adv, l1] = generator_update(state, prepared, cfg);
  if (!state.g.params().all_finite() || !state.d.params().all_finite()) {
    throw TrainingError("non-finite parameters after step " + std::to_string(state.step) +
                        " (batch " + batch_ids(batch) + ")");
  }
  ++state.step;
  state.history.push_back({state.step, d_loss, g_adv, l1});
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& history) {
  std::ostringstream os;
  os << "step,loss_gan_d,loss_gan_g,loss_l1\n";
  for (const auto& r : history) {
    os << r.step << ',' << io::format_number(r.loss_gan_d) << ','
       << io::format_number(r.loss_gan_g) << ',' << io::format_number(r.loss_l1) << '\n';
  }
  io::write_text_file(path, os.str());
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
  std::istringstream in(io::read_text_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 4) throw Error("malformed loss log line: " + line);
    out.push_back({std::stol(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

namespace {

nn::ParamSet moments_as_params(const Adam& adam, const nn::ParamSet& like) {
  nn::ParamSet ps;
  if (adam.m.empty()) return ps;
  const auto& items = like.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ps.add("m." + items[i].name, items[i].shape).value = adam.m[i];
    ps.add("v." + items[i].name, items[i].shape).value = adam.v[i];
  }
  return ps;
}

void restore_moments(Adam& adam, const nn::ParamSet& stored, const nn::ParamSet& like) {
  adam.m.clear();
  adam.v.clear();
  if (stored.items().empty()) return;
  for (const auto& p : like.items()) {
    adam.m.push_back(stored.get("m." + p.name).value);
    adam.v.push_back(stored.get("v." + p.name).value);
  }
}

}  // namespace

void save_state(const fs::path& dir, const TrainState& state, const TrainingConfig& cfg) {
  io::ensure_directory(dir);
  networks::save_generator(dir / "generator", state.g);
  networks::save_discriminator(dir / "discriminator", state.d);
  networks::save_params(dir / "optimizer_g", {{"kind", "adam"}, {"t", std::to_string(state.adam_g.t)}},
                        moments_as_params(state.adam_g, state.g.params()));
  networks::save_params(dir / "optimizer_d", {{"kind", "adam"}, {"t", std::to_string(state.adam_d.t)}},
                        moments_as_params(state.adam_d, state.d.params()));
  auto kv = to_key_values(cfg);
  kv["step"] = std::to_string(state.step);
  io::write_key_values(dir / "state.txt", kv);
  write_loss_csv(dir / "losses.csv", state.history);
}

TrainState load_state(const fs::path& dir) {
  const auto kv = io::read_key_values(dir / "state.txt");
  const auto cfg = config_from(kv);
  TrainState s;
  s.g = networks::load_generator(dir / "generator");
  s.d = networks::load_discriminator(dir / "discriminator");
  s.adam_g = make_adam(cfg.learning_rate_g, cfg);
  s.adam_d = make_adam(cfg.learning_rate_d, cfg);
  io::KeyValues og, od;
  const auto mg = networks::load_params(dir / "optimizer_g", &og);
  const auto md = networks::load_params(dir / "optimizer_d", &od);
  restore_moments(s.adam_g, mg, s.g.params());
  restore_moments(s.adam_d, md, s.d.params());
  s.adam_g.t = std::stol(og.at("t"));
  s.adam_d.t = std::stol(od.at("t"));
  s.step = std::stol(kv.at("step"));
  s.history = read_loss_csv(dir / "losses.csv");
  return s;
}

namespace {

std::string checkpoint_name(long step) { return "ckpt_step" + std::to_string(step); }

// Pair order for a given epoch; a pure function of (seed, epoch) so resumed
// runs see the same sequence as uninterrupted ones.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x2545F4914F6CDD1DULL + static_cast<std::uint64_t>(epoch) + 17);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

TrainState train(const std::vector<pairing::TrainingPair>& pairs, const TrainingConfig& cfg,
                 const fs::path& out_dir, const TrainOptions& options) {
  cfg.validate();
  if (pairs.empty()) throw Error("train: no training pairs");
  io::ensure_directory(out_dir);

  TrainState state = options.resume_from ? load_state(*options.resume_from) : init_state(cfg);
  if (state.g.arch() != cfg.generator || state.d.arch() != cfg.discriminator) {
    throw Error("training config architecture differs from the resumed checkpoint");
  }
  state.adam_g.lr = cfg.learning_rate_g;
  state.adam_d.lr = cfg.learning_rate_d;

  const auto n = pairs.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  long epoch = -1;
  std::vector<std::size_t> order;
  bool wrote_final = false;

  while (state.step < cfg.total_steps) {
    std::vector<pairing::TrainingPair> items;
    items.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto pos = static_cast<std::size_t>(state.step) * batch + b;
      const auto e = static_cast<long>(pos / n);
      if (e != epoch) {
        epoch = e;
        order = epoch_order(n, cfg.seed, epoch);
      }
      const auto& p = pairs[order[pos % n]];
      if (cfg.augment.empty()) {
        items.push_back(p);
      } else {
        const std::uint64_t aug_seed =
            cfg.seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(pos) + 1));
        items.push_back(pairing::augment_pair(p, cfg.augment, aug_seed));
      }
    }
    train_step(state, items, cfg);
    if (!options.quiet && (state.step % 100 == 0 || state.step == cfg.total_steps)) {
      const auto& r = state.history.back();
      std::fprintf(stderr, "step %ld  d=%.4f  g_adv=%.4f  l1=%.4f\n", r.step, r.loss_gan_d,
                   r.loss_gan_g, r.loss_l1);
    }
    if (state.step % cfg.checkpoint_interval == 0) {
      save_state(out_dir / checkpoint_name(state.step), state, cfg);
      write_loss_csv(out_dir / "losses.csv", state.history);
      wrote_final = state.step == cfg.total_steps;
    }
  }
  if (!wrote_final) {
    save_state(out_dir / checkpoint_name(state.step), state, cfg);
  }
  write_loss_csv(out_dir / "losses.csv", state.history);
  return state;
}

double mean_pixel_l1(const networks::Generator& g, std::span<const pairing::TrainingPair> pairs) {
  if (pairs.empty()) throw Error("mean_pixel_l1: no pairs");
  double total = 0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    const Tensor x = nn::to_network(p.x);
    const Tensor xt = composite_network(x, g.forward(x), p.m);
    for (std::size_t k = 0; k < xt.size(); ++k) {
      const double px = std::clamp((xt.v[k] + 1.0) * 0.5, 0.0, 1.0);
      total += std::abs(px - p.y.pixels()[k]);
    }
    count += xt.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace pathsyn::training
