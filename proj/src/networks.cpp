#include "pathsyn/networks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pathsyn::networks {

namespace fs = std::filesystem;
using nn::ConvSpec;
using nn::Param;
using nn::ParamSet;
using nn::Tensor;

namespace {

std::string key(const char* prefix, int index, const char* field) {
  return std::string(prefix) + std::to_string(index) + "." + field;
}

constexpr ConvSpec down(int in, int out) { return {in, out, 4, 2, 1}; }
constexpr ConvSpec flat(int in, int out) { return {in, out, 4, 1, 1}; }

// Encoder level i (i >= 1) is normalized unless it is the innermost level.
bool enc_normed(const GeneratorArch& a, int i) { return i >= 1 && i < a.levels - 1; }
// Every decoder level except the outermost is normalized.
bool dec_normed(int j) { return j >= 1; }
int dec_in_channels(const GeneratorArch& a, int j) {
  return j == a.levels - 1 ? a.width_at(j) : 2 * a.width_at(j);
}
int dec_out_channels(const GeneratorArch& a, int j) {
  return j == 0 ? a.channels : a.width_at(j - 1);
}
bool dec_dropout(const GeneratorArch& a, int j) {
  return a.dropout && j >= 1 && j >= a.levels - 3;
}

void validate(const GeneratorArch& a) {
  if (a.levels < 1) throw Error("generator needs at least one level");
  if (a.base_width < 1 || a.channels < 1) throw Error("generator widths must be positive");
  if (a.levels >= 31 || (1L << a.levels) > a.image_side) {
    throw Error("generator with " + std::to_string(a.levels) + " levels is too deep for " +
                std::to_string(a.image_side) + "-pixel images");
  }
  if (a.image_side % (1L << a.levels) != 0) {
    throw Error("image side must be divisible by 2^levels");
  }
}

void validate(const DiscriminatorArch& a) {
  if (a.layers < 0 || a.base_width < 1 || a.channels < 1) {
    throw Error("invalid discriminator descriptor");
  }
}

int disc_width(const DiscriminatorArch& a, int n) { return a.base_width * std::min(1 << n, 8); }

struct DiscLayer {
  ConvSpec spec;
  bool normed;
};

std::vector<DiscLayer> disc_layers(const DiscriminatorArch& a) {
  std::vector<DiscLayer> layers;
  layers.push_back({down(2 * a.channels, disc_width(a, 0)), false});
  for (int n = 1; n < a.layers; ++n) layers.push_back({down(disc_width(a, n - 1), disc_width(a, n)), true});
  const int last = std::max(0, a.layers - 1);
  if (a.layers >= 1) {
    layers.push_back({flat(disc_width(a, last), disc_width(a, a.layers)), true});
  }
  layers.push_back({flat(layers.back().spec.out, 1), false});
  return layers;
}

void init_conv(ParamSet& ps, const std::string& prefix, const ConvSpec& s, bool transposed,
               bool normed, std::mt19937_64& rng) {
  auto& w = transposed ? ps.add(prefix + ".weight", {s.in, s.out, s.kernel, s.kernel})
                       : ps.add(prefix + ".weight", {s.out, s.in, s.kernel, s.kernel});
  nn::fill_normal(w.value, rng, 0.0, kInitStd);
  if (normed) {
    auto& g = ps.add(prefix + ".gamma", {s.out});
    nn::fill_normal(g.value, rng, 1.0, kInitStd);
    ps.add(prefix + ".beta", {s.out});
  } else {
    ps.add(prefix + ".bias", {s.out});
  }
}

Param* optional(ParamSet& ps, const std::string& name) {
  return ps.contains(name) ? &ps.get(name) : nullptr;
}
const Param* optional(const ParamSet& ps, const std::string& name) {
  return ps.contains(name) ? &ps.get(name) : nullptr;
}

}  // namespace

int GeneratorArch::width_at(int level) const {
  return base_width * std::min(1 << std::min(level, 3), 8);
}

int DiscriminatorArch::receptive_field() const {
  int rf = 1;
  const auto layers = disc_layers(*this);
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    rf = (rf - 1) * it->spec.stride + it->spec.kernel;
  }
  return rf;
}

int DiscriminatorArch::output_side(int input_side) const {
  int side = input_side;
  for (const auto& l : disc_layers(*this)) side = nn::conv_out_size(side, l.spec);
  return side;
}

Generator::Generator(GeneratorArch arch, ParamSet params)
    : arch_(arch), params_(std::move(params)) {
  validate(arch_);
}

Tensor Generator::forward(const Tensor& x) const {
  Tape tape;
  return forward(x, tape, Mode::Inference, nullptr);
}

Tensor Generator::forward(const Tensor& x, Tape& tape, Mode mode,
                          std::mt19937_64* dropout_rng) const {
  const auto& a = arch_;
  if (x.c != a.channels || x.h != a.image_side || x.w != a.image_side) {
    throw Error("generator input must be " + std::to_string(a.channels) + "x" +
                std::to_string(a.image_side) + "x" + std::to_string(a.image_side));
  }
  const int L = a.levels;
  tape = Tape{};
  tape.input = x;
  tape.enc_pre.resize(L);
  tape.enc.resize(L);
  tape.enc_col.resize(L);
  tape.enc_norm.resize(L);
  tape.dec_in.resize(L);
  tape.dec_pre.resize(L);
  tape.dec_norm.resize(L);
  tape.dropout_keep.resize(L);

  for (int i = 0; i < L; ++i) {
    const ConvSpec spec = down(i == 0 ? a.channels : a.width_at(i - 1), a.width_at(i));
    const Tensor in = i == 0 ? x : nn::leaky_relu(tape.enc[i - 1]);
    tape.enc_pre[i] = nn::conv2d(in, spec, params_.get(key("enc", i, "weight")),
                                 optional(params_, key("enc", i, "bias")), &tape.enc_col[i]);
    if (enc_normed(a, i)) {
      tape.enc[i] = nn::instance_norm(tape.enc_pre[i], params_.get(key("enc", i, "gamma")),
                                      params_.get(key("enc", i, "beta")), &tape.enc_norm[i]);
    } else {
      tape.enc[i] = tape.enc_pre[i];
    }
  }

  tape.dec_in[L - 1] = tape.enc[L - 1];
  for (int j = L - 1; j >= 0; --j) {
    const ConvSpec spec = down(dec_in_channels(a, j), dec_out_channels(a, j));
    Tensor d = nn::conv_transpose2d(nn::relu(tape.dec_in[j]), spec,
                                    params_.get(key("dec", j, "weight")),
                                    optional(params_, key("dec", j, "bias")));
    if (j == 0) {
      tape.dec_pre[0] = d;
      tape.output = nn::tanh(d);
      break;
    }
    tape.dec_pre[j] = d;
    d = nn::instance_norm(d, params_.get(key("dec", j, "gamma")),
                          params_.get(key("dec", j, "beta")), &tape.dec_norm[j]);
    if (mode == Mode::Training && dec_dropout(a, j)) {
      if (!dropout_rng) throw Error("dropout enabled but no random source supplied");
      auto& keep = tape.dropout_keep[j];
      keep.resize(d.size());
      std::bernoulli_distribution coin(0.5);
      for (std::size_t k = 0; k < d.size(); ++k) {
        keep[k] = coin(*dropout_rng) ? 1 : 0;
        d.v[k] = keep[k] ? 2.0 * d.v[k] : 0.0;
      }
    }
    tape.dec_in[j - 1] = nn::concat_channels(tape.enc[j - 1], d);
  }
  return tape.output;
}

void Generator::backward(const Tape& tape, const Tensor& d_output, Tensor* d_input) {
  const auto& a = arch_;
  const int L = a.levels;
  if (!d_output.same_shape(tape.output)) throw Error("generator backward: gradient shape mismatch");
  std::vector<Tensor> d_enc(L);
  for (int i = 0; i < L; ++i) d_enc[i] = Tensor(tape.enc[i].c, tape.enc[i].h, tape.enc[i].w);

  // Decoder, outermost first.
  Tensor d = nn::tanh_backward(tape.output, d_output);
  for (int j = 0; j < L; ++j) {
    const ConvSpec spec = down(dec_in_channels(a, j), dec_out_channels(a, j));
    if (j > 0) {
      if (!tape.dropout_keep[j].empty()) {
        for (std::size_t k = 0; k < d.size(); ++k) d.v[k] *= tape.dropout_keep[j][k] ? 2.0 : 0.0;
      }
      Tensor d_pre;
      nn::instance_norm_backward(tape.dec_norm[j], d, params_.get(key("dec", j, "gamma")),
                                 params_.get(key("dec", j, "beta")), d_pre);
      d = std::move(d_pre);
    }
    const Tensor relu_in = nn::relu(tape.dec_in[j]);
    Tensor d_relu;
    nn::conv_transpose2d_backward(relu_in, spec, d, params_.get(key("dec", j, "weight")),
                                  optional(params_, key("dec", j, "bias")), &d_relu);
    Tensor d_in = nn::relu_backward(tape.dec_in[j], d_relu);
    if (j == L - 1) {
      nn::add_in_place(d_enc[L - 1], d_in);
    } else {
      Tensor d_skip;
      nn::split_channels(d_in, tape.enc[j].c, d_skip, d);
      nn::add_in_place(d_enc[j], d_skip);
    }
  }

  // Encoder, innermost first.
  for (int i = L - 1; i >= 0; --i) {
    const ConvSpec spec = down(i == 0 ? a.channels : a.width_at(i - 1), a.width_at(i));
    Tensor d_pre;
    if (enc_normed(a, i)) {
      nn::instance_norm_backward(tape.enc_norm[i], d_enc[i], params_.get(key("enc", i, "gamma")),
                                 params_.get(key("enc", i, "beta")), d_pre);
    } else {
      d_pre = d_enc[i];
    }
    Param& w = params_.get(key("enc", i, "weight"));
    Param* b = optional(params_, key("enc", i, "bias"));
    if (i == 0) {
      nn::conv2d_backward(tape.input, spec, tape.enc_col[0], d_pre, w, b, d_input);
    } else {
      Tensor d_act;
      nn::conv2d_backward(tape.enc[i - 1], spec, tape.enc_col[i], d_pre, w, b, &d_act);
      nn::add_in_place(d_enc[i - 1], nn::leaky_relu_backward(tape.enc[i - 1], d_act));
    }
  }
}

Discriminator::Discriminator(DiscriminatorArch arch, ParamSet params)
    : arch_(arch), params_(std::move(params)) {
  validate(arch_);
}

Tensor Discriminator::forward(const Tensor& condition, const Tensor& candidate) const {
  Tape tape;
  return forward(condition, candidate, tape);
}

Tensor Discriminator::forward(const Tensor& condition, const Tensor& candidate, Tape& tape) const {
  if (!condition.same_shape(candidate)) throw Error("discriminator: condition and candidate shapes differ");
  if (condition.c != arch_.channels) throw Error("discriminator: channel count mismatch");
  const auto layers = disc_layers(arch_);
  if (arch_.output_side(condition.h) < 1 || arch_.output_side(condition.w) < 1) {
    throw Error("discriminator: input smaller than one patch");
  }
  tape = Tape{};
  tape.input = nn::concat_channels(condition, candidate);
  const auto n = layers.size();
  tape.pre.resize(n);
  tape.normed.resize(n);
  tape.col.resize(n);
  tape.norm.resize(n);
  tape.act_in.resize(n);

  for (std::size_t l = 0; l < n; ++l) {
    const int li = static_cast<int>(l);
    tape.act_in[l] = l == 0 ? tape.input : nn::leaky_relu(tape.normed[l - 1]);
    tape.pre[l] = nn::conv2d(tape.act_in[l], layers[l].spec, params_.get(key("conv", li, "weight")),
                             optional(params_, key("conv", li, "bias")), &tape.col[l]);
    if (layers[l].normed) {
      tape.normed[l] = nn::instance_norm(tape.pre[l], params_.get(key("conv", li, "gamma")),
                                         params_.get(key("conv", li, "beta")), &tape.norm[l]);
    } else {
      tape.normed[l] = tape.pre[l];
    }
  }
  tape.output = nn::sigmoid(tape.normed[n - 1]);
  return tape.output;
}

void Discriminator::backward(const Tape& tape, const Tensor& d_scores, Tensor* d_candidate) {
  if (!d_scores.same_shape(tape.output)) throw Error("discriminator backward: gradient shape mismatch");
  const auto layers = disc_layers(arch_);
  Tensor d = nn::sigmoid_backward(tape.output, d_scores);
  for (std::size_t l = layers.size(); l-- > 0;) {
    const int li = static_cast<int>(l);
    if (l + 1 < layers.size()) d = nn::leaky_relu_backward(tape.normed[l], d);
    if (layers[l].normed) {
      Tensor d_pre;
      nn::instance_norm_backward(tape.norm[l], d, params_.get(key("conv", li, "gamma")),
                                 params_.get(key("conv", li, "beta")), d_pre);
      d = std::move(d_pre);
    }
    const bool need_input = l > 0 || d_candidate != nullptr;
    Tensor d_in;
    nn::conv2d_backward(tape.act_in[l], layers[l].spec, tape.col[l], d,
                        params_.get(key("conv", li, "weight")),
                        optional(params_, key("conv", li, "bias")), need_input ? &d_in : nullptr);
    d = std::move(d_in);
  }
  if (d_candidate) {
    Tensor d_cond;
    nn::split_channels(d, arch_.channels, d_cond, *d_candidate);
  }
}

Generator init_generator(std::uint64_t seed, const GeneratorArch& arch) {
  validate(arch);
  std::mt19937_64 rng(seed);
  ParamSet ps;
  for (int i = 0; i < arch.levels; ++i) {
    init_conv(ps, "enc" + std::to_string(i),
              down(i == 0 ? arch.channels : arch.width_at(i - 1), arch.width_at(i)), false,
              enc_normed(arch, i), rng);
  }
  for (int j = arch.levels - 1; j >= 0; --j) {
    init_conv(ps, "dec" + std::to_string(j),
              down(dec_in_channels(arch, j), dec_out_channels(arch, j)), true, dec_normed(j), rng);
  }
  return Generator(arch, std::move(ps));
}

Generator init_generator(std::uint64_t seed, int levels, int base_width, int image_side,
                         int channels) {
  GeneratorArch arch;
  arch.levels = levels;
  arch.base_width = base_width;
  arch.image_side = image_side;
  arch.channels = channels;
  return init_generator(seed, arch);
}

Discriminator init_discriminator(std::uint64_t seed, const DiscriminatorArch& arch) {
  validate(arch);
  std::mt19937_64 rng(seed);
  ParamSet ps;
  const auto layers = disc_layers(arch);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    init_conv(ps, "conv" + std::to_string(l), layers[l].spec, false, layers[l].normed, rng);
  }
  return Discriminator(arch, std::move(ps));
}

Tensor generator_forward(const Generator& g, const Tensor& x) { return g.forward(x); }

Tensor discriminator_forward(const Discriminator& d, const Tensor& condition,
                             const Tensor& candidate) {
  return d.forward(condition, candidate);
}

namespace {

std::string shape_string(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<int> parse_shape(const std::string& s) {
  std::vector<int> shape;
  std::istringstream in(s);
  std::string part;
  while (std::getline(in, part, 'x')) shape.push_back(std::stoi(part));
  return shape;
}

int int_field(const io::KeyValues& kv, const std::string& name) {
  const auto it = kv.find(name);
  if (it == kv.end()) throw Error("checkpoint descriptor lacks '" + name + "'");
  return std::stoi(it->second);
}

}  // namespace

void save_params(const fs::path& dir, const io::KeyValues& descriptor, const ParamSet& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint files are little-endian");
  io::ensure_directory(dir);
  io::KeyValues manifest = descriptor;
  manifest["format"] = "pathsyn-params";
  manifest["version"] = std::to_string(kCheckpointVersion);
  std::string order;
  for (const auto& p : params.items()) {
    manifest["array." + p.name] = shape_string(p.shape);
    order += (order.empty() ? "" : ",") + p.name;
    std::ofstream out(dir / (p.name + ".bin"), std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!out) throw IoError("cannot write " + (dir / (p.name + ".bin")).string());
  }
  manifest["arrays"] = order;
  io::write_key_values(dir / "manifest.txt", manifest);
}

ParamSet load_params(const fs::path& dir, io::KeyValues* descriptor) {
  const auto manifest = io::read_key_values(dir / "manifest.txt");
  if (manifest.count("format") == 0 || manifest.at("format") != "pathsyn-params") {
    throw Error("not a parameter checkpoint: " + dir.string());
  }
  if (int_field(manifest, "version") > kCheckpointVersion) {
    throw Error("checkpoint version " + manifest.at("version") + " is newer than supported");
  }
  ParamSet ps;
  const auto it = manifest.find("arrays");
  if (it != manifest.end() && !it->second.empty()) {
    for (const auto& name : io::split_csv_line(it->second)) {
      auto& p = ps.add(name, parse_shape(manifest.at("array." + name)));
      std::ifstream in(dir / (name + ".bin"), std::ios::binary);
      in.read(reinterpret_cast<char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
      if (!in || in.peek() != std::char_traits<char>::eof()) {
        throw IoError("array file has the wrong size: " + (dir / (name + ".bin")).string());
      }
    }
  }
  if (descriptor) *descriptor = manifest;
  return ps;
}

io::KeyValues describe(const GeneratorArch& a) {
  return {{"kind", "generator"},
          {"levels", std::to_string(a.levels)},
          {"base_width", std::to_string(a.base_width)},
          {"channels", std::to_string(a.channels)},
          {"image_side", std::to_string(a.image_side)},
          {"dropout", a.dropout ? "1" : "0"}};
}

GeneratorArch generator_arch_from(const io::KeyValues& kv) {
  if (kv.count("kind") && kv.at("kind") != "generator") throw Error("checkpoint is not a generator");
  GeneratorArch a;
  a.levels = int_field(kv, "levels");
  a.base_width = int_field(kv, "base_width");
  a.channels = int_field(kv, "channels");
  a.image_side = int_field(kv, "image_side");
  a.dropout = kv.count("dropout") && kv.at("dropout") == "1";
  return a;
}

io::KeyValues describe(const DiscriminatorArch& a) {
  return {{"kind", "discriminator"},
          {"layers", std::to_string(a.layers)},
          {"base_width", std::to_string(a.base_width)},
          {"channels", std::to_string(a.channels)},
          {"receptive_field", std::to_string(a.receptive_field())}};
}

DiscriminatorArch discriminator_arch_from(const io::KeyValues& kv) {
  if (kv.count("kind") && kv.at("kind") != "discriminator") {
    throw Error("checkpoint is not a discriminator");
  }
  DiscriminatorArch a;
  a.layers = int_field(kv, "layers");
  a.base_width = int_field(kv, "base_width");
  a.channels = int_field(kv, "channels");
  return a;
}

namespace {

// Every array the architecture expects must be present with the same shape.
void check_against(const ParamSet& expected, const ParamSet& loaded, const fs::path& dir) {
  for (const auto& p : expected.items()) {
    if (!loaded.contains(p.name) || loaded.get(p.name).shape != p.shape) {
      throw Error("checkpoint " + dir.string() + " does not match its architecture at '" +
                  p.name + "'");
    }
  }
  if (expected.items().size() != loaded.items().size()) {
    throw Error("checkpoint " + dir.string() + " has unexpected extra arrays");
  }
}

}  // namespace

void save_generator(const fs::path& dir, const Generator& g) {
  save_params(dir, describe(g.arch()), g.params());
}

Generator load_generator(const fs::path& dir) {
  io::KeyValues kv;
  auto ps = load_params(dir, &kv);
  const auto arch = generator_arch_from(kv);
  check_against(init_generator(0, arch).params(), ps, dir);
  return Generator(arch, std::move(ps));
}

void save_discriminator(const fs::path& dir, const Discriminator& d) {
  save_params(dir, describe(d.arch()), d.params());
}

Discriminator load_discriminator(const fs::path& dir) {
  io::KeyValues kv;
  auto ps = load_params(dir, &kv);
  const auto arch = discriminator_arch_from(kv);
  check_against(init_discriminator(0, arch).params(), ps, dir);
  return Discriminator(arch, std::move(ps));
}

}  // namespace pathsyn::networks
