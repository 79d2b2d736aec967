#include "pathsyn/cli.hpp"

#include <algorithm>
#include <csignal>
#include <functional>
#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"
#include "pathsyn/corpus.hpp"
#include "pathsyn/io.hpp"
#include "pathsyn/localization.hpp"
#include "pathsyn/pairing.hpp"
#include "pathsyn/study.hpp"
#include "pathsyn/synthesis.hpp"
#include "pathsyn/training.hpp"

namespace pathsyn::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Key {
  std::string name;  // underscore form, as in config files
  std::string fallback;
  std::string help;
};

struct Context {
  io::KeyValues kv;
  std::ostream& out;
  std::ostream& err;

  bool has(const std::string& k) const {
    auto it = kv.find(k);
    return it != kv.end() && !it->second.empty();
  }
  const std::string& str(const std::string& k) const {
    auto it = kv.find(k);
    if (it == kv.end() || it->second.empty()) throw UsageError("missing required option --" + flag_of(k));
    return it->second;
  }
  long integer(const std::string& k) const {
    const auto& v = str(k);
    try {
      std::size_t pos = 0;
      const long r = std::stol(v, &pos);
      if (pos == v.size()) return r;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + flag_of(k) + " expects an integer, got '" + v + "'");
  }
  long positive(const std::string& k) const {
    const long v = integer(k);
    if (v < 1) throw UsageError("--" + flag_of(k) + " must be >= 1");
    return v;
  }
  std::uint64_t seed(const std::string& k = "seed") const {
    const long v = integer(k);
    if (v < 0) throw UsageError("--" + flag_of(k) + " must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  double number(const std::string& k) const {
    const auto& v = str(k);
    try {
      std::size_t pos = 0;
      const double r = std::stod(v, &pos);
      if (pos == v.size()) return r;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + flag_of(k) + " expects a number, got '" + v + "'");
  }
  static std::string flag_of(std::string k) {
    std::replace(k.begin(), k.end(), '_', '-');
    return k;
  }
};

struct Command {
  std::string name;
  std::string description;
  std::vector<Key> keys;
  std::function<void(Context&)> run;
};

std::vector<long> parse_centers(const std::string& s) {
  std::vector<long> out;
  for (const auto& f : io::split_csv_line(s)) {
    const std::string t(io::trim(f));
    if (t.empty()) continue;
    try {
      out.push_back(std::stol(t));
    } catch (const std::exception&) {
      throw UsageError("bad window center '" + t + "'");
    }
  }
  if (out.empty()) throw UsageError("--centers needs at least one step");
  return out;
}

std::vector<Annotation> load_annotations(const Context& c, const std::string& key, const fs::path& corpus) {
  const fs::path path = c.has(key) ? fs::path(c.str(key)) : corpus / "annotations.csv";
  const int res = c.has("native_resolution") ? static_cast<int>(c.positive("native_resolution"))
                                             : corpus::native_resolution_of(corpus);
  const auto parsed = corpus::parse_annotations(path, res);
  if (parsed.skipped > 0) {
    c.err << "note: skipped " << parsed.skipped << " rows outside the six-class set in " << path.string() << '\n';
  }
  return parsed.annotations;
}

// ---------------------------------------------------------------------------

void run_phantom_gen(Context& c) {
  const auto n_d = c.positive("diseased");
  const long n_h = c.integer("healthy");
  if (n_h < 0) throw UsageError("--healthy must be >= 0");
  const fs::path out = c.str("out");
  corpus::generate_phantom_corpus(static_cast<int>(n_d), static_cast<int>(n_h), c.seed(), out);
  c.out << "wrote " << n_d << " diseased and " << n_h << " healthy phantoms to " << out.string() << '\n';
}

void run_prepare_pairs(Context& c) {
  const fs::path corpus_dir = c.str("corpus");
  const fs::path out = c.str("out");
  const double fraction = c.number("split_fraction");
  const auto seed = c.seed();
  const auto all = load_annotations(c, "annotations", corpus_dir);
  const auto split = corpus::split_train_eval(all, fraction, seed);
  io::ensure_directory(out);
  corpus::write_annotations(out / "train_annotations.csv", split.train);
  corpus::write_annotations(out / "eval_annotations.csv", split.eval);

  corpus::ImageStore store(corpus_dir, static_cast<int>(c.positive("image_side")));
  std::vector<GrayImage> healthy;
  if (c.str("include_healthy") == "1" || c.str("include_healthy") == "true") {
    const fs::path hdir = c.has("healthy_dir") ? fs::path(c.str("healthy_dir")) : corpus_dir;
    healthy = corpus::load_healthy_list(hdir, store.resolution());
    if (healthy.empty()) throw Error("no healthy images listed in " + (hdir / "healthy.txt").string());
  }
  const auto pairs = pairing::make_pairs(split.train, store, healthy, seed);
  pairing::write_pair_cache(out / "pairs", pairs, seed);
  c.out << "split " << split.train.size() << " train / " << split.eval.size() << " eval; wrote "
        << pairs.size() << " pairs (" << healthy.size() << " healthy) to " << (out / "pairs").string() << '\n';
}

const std::vector<std::string> kTrainFlagsOnly = {"pairs", "out", "resume", "verbose"};

void run_train(Context& c) {
  io::KeyValues cfg_kv;
  for (const auto& [k, v] : c.kv) {
    if (std::find(kTrainFlagsOnly.begin(), kTrainFlagsOnly.end(), k) == kTrainFlagsOnly.end()) cfg_kv[k] = v;
  }
  training::TrainingConfig cfg;
  try {
    cfg = training::config_from(cfg_kv);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto pairs = pairing::read_pair_cache(c.str("pairs"));
  training::TrainOptions opts;
  if (c.has("resume")) opts.resume_from = fs::path(c.str("resume"));
  opts.quiet = !(c.str("verbose") == "1" || c.str("verbose") == "true");
  const auto state = training::train(pairs, cfg, c.str("out"), opts);
  const auto& last = state.history.empty() ? training::LossRecord{} : state.history.back();
  c.out << "trained to step " << state.step << " on " << pairs.size() << " pairs; last D " << last.loss_gan_d
        << " G " << last.loss_gan_g << " L1 " << last.loss_l1 << '\n';
}

void run_synthesize(Context& c) {
  const auto count = c.positive("count");
  const fs::path corpus_dir = c.str("corpus");
  const auto g = synthesis::load_generator_checkpoint(c.str("checkpoint"));
  const auto annotations = load_annotations(c, "annotations", corpus_dir);
  corpus::ImageStore store(corpus_dir, g.arch().image_side);
  synthesis::SynthesisOptions opts;
  opts.model_tag = c.str("model_tag");
  opts.augment = pairing::parse_augment_ops(c.str("augment"));
  const auto records = synthesis::synthesize_dataset(g, annotations, store, static_cast<int>(count), c.seed(),
                                                     c.str("out"), opts);
  c.out << "wrote " << records.size() << " synthetic images to " << c.str("out") << '\n';
}

void run_eval_localization(Context& c) {
  const fs::path corpus_dir = c.str("corpus");
  const fs::path out = c.str("out");
  const auto centers = parse_centers(c.str("centers"));
  localization::ProtocolOptions opts;
  opts.budget = c.positive("budget");
  opts.eval_interval = c.positive("eval_interval");
  opts.iou_threshold = c.number("iou");
  opts.seed = c.seed();
  opts.quiet = !(c.str("verbose") == "1" || c.str("verbose") == "true");
  const long radius = c.integer("radius");
  if (radius < 0) throw UsageError("--radius must be >= 0");
  if (!(opts.iou_threshold > 0 && opts.iou_threshold <= 1)) throw UsageError("--iou must be in (0, 1]");

  localization::ToyDetectorConfig dcfg;
  dcfg.learning_rate = c.number("detector_lr");
  dcfg.batch_size = static_cast<int>(c.positive("detector_batch"));
  dcfg.base_width = static_cast<int>(c.positive("detector_width"));
  dcfg.seed = c.seed("detector_seed");

  corpus::ImageStore store(corpus_dir, dcfg.input_side);
  const localization::Dataset train{load_annotations(c, "train_annotations", corpus_dir), &store};
  const localization::Dataset eval{load_annotations(c, "eval_annotations", corpus_dir), &store};
  const auto pix2pix = synthesis::read_synthetic_dir(c.str("pix2pix"));
  const auto pix2pix_n = synthesis::read_synthetic_dir(c.str("pix2pix_n"));

  const auto reports = localization::run_all_protocols(
      train, pix2pix, pix2pix_n, eval, [&] { return std::make_unique<localization::ToyDetector>(dcfg); }, opts);
  io::ensure_directory(out);
  for (const auto& r : reports) {
    std::string name = localization::to_string(r.protocol);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) {
      return std::isalnum(ch) ? static_cast<char>(std::tolower(ch)) : '_';
    });
    localization::write_report_csv(out / ("report_" + name + ".csv"), r);
  }
  localization::write_table2(out / "table2.csv", reports, centers, radius);
  c.out << localization::format_table2(reports, centers, radius);
}

study::StudyConfig study_config(const Context& c) {
  try {
    auto cfg = study::study_config_from(c.kv);
    cfg.validate();
    return cfg;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

study::StudyServer* g_server = nullptr;

void run_study_serve(Context& c) {
  const auto plan = study::build_study(study_config(c));
  study::JudgmentStore store(c.str("store"));
  study::StudyServer server(plan, store);
  const int port = server.bind(c.str("host"), static_cast<int>(c.integer("port")));
  c.out << "study of " << plan.items.size() << " items for " << plan.config.reviewers.size()
        << " reviewers listening on " << c.str("host") << ':' << port << std::endl;
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  server.listen();
  g_server = nullptr;
}

void run_study_report(Context& c) {
  const auto plan = study::build_study(study_config(c));
  const auto table = study::format_table1(study::tally(study::read_judgments(c.str("store")), plan));
  if (c.has("out")) {
    io::write_text_file(c.str("out"), table);
  } else {
    c.out << table;
  }
}

std::vector<Key> train_keys() {
  std::vector<Key> keys = {
      {"pairs", "", "pair cache directory written by prepare-pairs"},
      {"out", "", "output directory for checkpoints and losses.csv"},
      {"resume", "", "checkpoint directory to continue from"},
      {"verbose", "0", "print progress"},
  };
  for (const auto& [k, v] : training::to_key_values(training::TrainingConfig{})) {
    keys.push_back({k, v, "training setting"});
  }
  return keys;
}

std::vector<Key> study_keys() {
  return {
      {"sources", "", "comma list of tag:directory"},
      {"count", "25", "images per source and pathology"},
      {"pathologies", "", "comma list (default: all six)"},
      {"seed", "0", "sampling and ordering seed"},
      {"reviewers", "", "comma list of reviewer ids"},
      {"secret", "", "key for item ids (default derived from the seed)"},
      {"store", "judgments.jsonl", "judgment file"},
  };
}

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"phantom-gen", "Render a procedural phantom corpus",
       {{"out", "", "output directory"},
        {"diseased", "60", "diseased images"},
        {"healthy", "40", "healthy images"},
        {"seed", "0", "seed"}},
       run_phantom_gen},
      {"prepare-pairs", "Split annotations and build the training pair cache",
       {{"corpus", "", "directory with annotations.csv and images"},
        {"annotations", "", "annotation CSV (default: <corpus>/annotations.csv)"},
        {"native_resolution", "", "resolution the boxes refer to (default: corpus.txt or 1024)"},
        {"out", "", "output directory"},
        {"split_fraction", "0.7", "training fraction"},
        {"image_side", "256", "working resolution"},
        {"include_healthy", "0", "add healthy images with random masks"},
        {"healthy_dir", "", "directory with healthy.txt (default: corpus)"},
        {"seed", "0", "seed"}},
       run_prepare_pairs},
      {"train", "Train the inpainting GAN", train_keys(), run_train},
      {"synthesize", "Generate pathology-preserving synthetic images",
       {{"checkpoint", "", "checkpoint or generator directory"},
        {"corpus", "", "directory with the source images"},
        {"annotations", "", "annotation CSV (default: <corpus>/annotations.csv)"},
        {"native_resolution", "", "resolution the boxes refer to"},
        {"count", "688", "records to write"},
        {"seed", "0", "seed"},
        {"model_tag", "pix2pix", "file name prefix and manifest tag"},
        {"augment", "rotate,reflect,crop", "augmentation ops or none"},
        {"out", "", "output directory"}},
       run_synthesize},
      {"eval-localization", "Train detectors under the three protocols and write the CL table",
       {{"corpus", "", "directory with the real images"},
        {"train_annotations", "", "real training annotations"},
        {"eval_annotations", "", "evaluation annotations"},
        {"native_resolution", "", "resolution the boxes refer to"},
        {"pix2pix", "", "synthetic directory from the disease-only model"},
        {"pix2pix_n", "", "synthetic directory from the model trained with healthy images"},
        {"budget", "15500", "detector steps per protocol"},
        {"eval_interval", "500", "steps between evaluations"},
        {"centers", "5000,10000,15000", "window centers"},
        {"radius", "500", "window radius"},
        {"iou", "0.1", "IoU threshold"},
        {"seed", "0", "sample order seed"},
        {"detector_lr", "0.0003", "detector learning rate"},
        {"detector_batch", "2", "detector batch size"},
        {"detector_width", "8", "detector base width"},
        {"detector_seed", "0", "detector init seed"},
        {"verbose", "0", "print progress"},
        {"out", "", "output directory"}},
       run_eval_localization},
      {"study-serve", "Serve the blinded reader study over HTTP",
       [] {
         auto k = study_keys();
         k.push_back({"host", "127.0.0.1", "bind address"});
         k.push_back({"port", "8080", "port (0 picks one)"});
         return k;
       }(),
       run_study_serve},
      {"study-report", "Tally judgments into a per-reviewer CSV",
       [] {
         auto k = study_keys();
         k.push_back({"out", "", "output CSV (default: stdout)"});
         return k;
       }(),
       run_study_report},
  };
  return cmds;
}

std::string usage() {
  std::string s = "usage: pathsyn <command> [--config FILE] [options]\n\ncommands:\n";
  for (const auto& c : commands()) s += "  " + c.name + std::string(20 - c.name.size(), ' ') + c.description + "\n";
  return s;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "--help" || args[0] == "-h") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? kExitUsage : kExitOk;
  }
  const auto& cmds = commands();
  const auto cmd = std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return c.name == args[0]; });
  if (cmd == cmds.end()) {
    err << "unknown command '" << args[0] << "'\n" << usage();
    return kExitUsage;
  }

  CLI::App app(cmd->description, "pathsyn " + cmd->name);
  std::string config_path;
  app.add_option("--config", config_path, "key = value file");
  std::map<std::string, std::string> flags;
  for (const auto& k : cmd->keys) {
    app.add_option("--" + Context::flag_of(k.name), flags[k.name], k.help);
  }
  std::vector<std::string> rest(args.begin() + 1, args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    Context ctx{{}, out, err};
    for (const auto& k : cmd->keys) ctx.kv[k.name] = k.fallback;
    if (!config_path.empty()) {
      for (const auto& [k, v] : io::read_key_values(config_path)) {
        if (!ctx.kv.contains(k)) throw UsageError("unknown key '" + k + "' in " + config_path);
        ctx.kv[k] = v;
      }
    }
    for (const auto& k : cmd->keys) {
      if (app.get_option("--" + Context::flag_of(k.name))->count() > 0) ctx.kv[k.name] = flags[k.name];
    }
    cmd->run(ctx);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "pathsyn " << cmd->name << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "pathsyn " << cmd->name << ": error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace pathsyn::cli
