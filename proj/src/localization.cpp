#include "pathsyn/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pathsyn/io.hpp"

namespace pathsyn::localization {

namespace fs = std::filesystem;
using nn::Tensor;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kClasses = static_cast<int>(kNumPathologies);

void require_positive(const BBox& b) {
  if (!(b.w > 0) || !(b.h > 0)) throw Error("iou needs boxes with positive area");
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  require_positive(a);
  require_positive(b);
  const double iw = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

ClAccuracy cl_accuracy(std::span<const Detection> detections,
                       std::span<const Annotation> ground_truth, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw Error("IoU threshold must be in (0, 1]");
  std::set<std::string> known;
  for (const auto& a : ground_truth) known.insert(a.image_id);
  // (image, class) -> highest-score detection
  std::map<std::pair<std::string, int>, const Detection*> best;
  for (const auto& d : detections) {
    if (!known.contains(d.image_id)) {
      throw Error("detection references unknown image '" + d.image_id + "'");
    }
    auto& slot = best[{d.image_id, index_of(d.pathology)}];
    if (slot == nullptr || d.score > slot->score) slot = &d;
  }

  ClAccuracy acc;
  int total_gt = 0;
  int total_ok = 0;
  for (const auto& a : ground_truth) {
    const int c = index_of(a.pathology);
    ++acc.ground_truth[c];
    ++total_gt;
    const auto it = best.find({a.image_id, c});
    if (it != best.end() && iou(it->second->box, a.box) >= threshold) {
      ++acc.correct[c];
      ++total_ok;
    }
  }
  for (int c = 0; c < kClasses; ++c) {
    acc.scores.per_class[c] =
        acc.ground_truth[c] > 0 ? static_cast<double>(acc.correct[c]) / acc.ground_truth[c] : kNaN;
  }
  acc.scores.total = total_gt > 0 ? static_cast<double>(total_ok) / total_gt : kNaN;
  return acc;
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::Ori: return "Ori";
    case Protocol::OriPix2Pix: return "Ori+Pix2Pix";
    case Protocol::OriPix2PixN: return "Ori+Pix2Pix-N";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  for (auto p : kAllProtocols) {
    if (to_string(p) == s) return p;
  }
  throw Error("unknown protocol '" + s + "'");
}

ClScores best_in_window(const CLReport& report, long s, long radius) {
  if (radius < 0) throw Error("window radius must be >= 0");
  ClScores out;
  out.per_class.fill(kNaN);
  out.total = kNaN;
  bool any = false;
  auto take = [](double& cell, double v) {
    if (std::isnan(v)) return;
    if (std::isnan(cell) || v > cell) cell = v;
  };
  for (auto it = report.steps.lower_bound(s - radius);
       it != report.steps.end() && it->first <= s + radius; ++it) {
    any = true;
    for (int c = 0; c < kClasses; ++c) take(out.per_class[c], it->second.scores.per_class[c]);
    take(out.total, it->second.scores.total);
  }
  if (!any) {
    throw Error("no evaluated step of " + to_string(report.protocol) + " in [" +
                std::to_string(s - radius) + ", " + std::to_string(s + radius) + "]");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy detector

ToyDetector::ToyDetector(ToyDetectorConfig cfg) : cfg_(cfg) {
  if (cfg_.batch_size < 1) throw Error("detector batch size must be >= 1");
  if (!(cfg_.learning_rate > 0)) throw Error("detector learning rate must be positive");
  if (cfg_.stride < 2 || (cfg_.stride & (cfg_.stride - 1)) != 0) {
    throw Error("detector stride must be a power of two");
  }
  if (cfg_.input_side % cfg_.stride != 0) throw Error("input side must be a multiple of the stride");
  if (cfg_.base_width < 1) throw Error("detector width must be >= 1");

  std::mt19937_64 rng(cfg_.seed ^ 0xD1B54A32D192ED03ULL);
  const auto sp = specs();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto& s = sp[i];
    const bool head = i + 1 == sp.size();
    auto& w = params_.add("conv" + std::to_string(i) + ".weight", {s.out, s.in, s.kernel, s.kernel});
    const double fan_in = static_cast<double>(s.in) * s.kernel * s.kernel;
    nn::fill_normal(w.value, rng, 0.0, head ? 0.01 : std::sqrt(2.0 / fan_in));
    auto& b = params_.add("conv" + std::to_string(i) + ".bias", {s.out});
    if (head) b.value[0] = -std::log(99.0);  // objectness prior 0.01
  }
  adam_.lr = cfg_.learning_rate;
  adam_.beta1 = 0.9;
  adam_.beta2 = 0.999;
}

std::vector<nn::ConvSpec> ToyDetector::specs() const {
  std::vector<nn::ConvSpec> out;
  int in = 1;
  for (int s = cfg_.stride, i = 0; s > 1; s /= 2, ++i) {
    const int width = cfg_.base_width * std::min(1 << i, 2);
    out.push_back({in, width, 4, 2, 1});
    in = width;
  }
  out.push_back({in, kHeadChannels, 3, 1, 1});
  return out;
}

std::string ToyDetector::config() const {
  std::ostringstream os;
  os << "toy-detector lr=" << io::format_number(cfg_.learning_rate) << " batch=" << cfg_.batch_size
     << " input=" << cfg_.input_side << " stride=" << cfg_.stride << " width=" << cfg_.base_width
     << " seed=" << cfg_.seed << " adam=" << io::format_number(adam_.beta1) << ','
     << io::format_number(adam_.beta2);
  return os.str();
}

Tensor ToyDetector::forward(const Tensor& x, Tape* tape) const {
  const auto sp = specs();
  Tensor cur = x;
  if (tape) {
    tape->act_in.clear();
    tape->pre.clear();
    tape->col.assign(sp.size(), {});
  }
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const auto& w = params_.get("conv" + std::to_string(i) + ".weight");
    const auto& b = params_.get("conv" + std::to_string(i) + ".bias");
    Tensor pre = nn::conv2d(cur, sp[i], w, &b, tape ? &tape->col[i] : nullptr);
    if (tape) {
      tape->act_in.push_back(std::move(cur));
      tape->pre.push_back(pre);
    }
    cur = i + 1 == sp.size() ? std::move(pre) : nn::leaky_relu(pre);
  }
  if (tape) tape->head = cur;
  return cur;
}

namespace {

struct CellTarget {
  int cls = 0;
  std::array<double, 4> box{};
};

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

double ToyDetector::head_loss(const Tensor& head, const std::vector<Annotation>& boxes,
                              Tensor* d_head) const {
  const int g = head.h;
  const double stride = cfg_.stride;
  std::map<int, CellTarget> targets;
  for (const auto& a : boxes) {
    const auto& b = a.box;
    const double cx = b.x + b.w / 2;
    const double cy = b.y + b.h / 2;
    const int gx = std::clamp(static_cast<int>(std::floor(cx / stride)), 0, g - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(cy / stride)), 0, g - 1);
    CellTarget t;
    t.cls = index_of(a.pathology);
    t.box = {cx / stride - (gx + 0.5), cy / stride - (gy + 0.5), std::log(b.w / stride),
             std::log(b.h / stride)};
    targets[gy * g + gx] = t;
  }
  const double norm = std::max<double>(1.0, static_cast<double>(targets.size()));
  if (d_head) *d_head = Tensor(head.c, head.h, head.w);

  double loss = 0;
  for (int cell = 0; cell < g * g; ++cell) {
    const int y = cell / g;
    const int x = cell % g;
    const auto it = targets.find(cell);
    const double t = it != targets.end() ? 1.0 : 0.0;
    const double l = head.at(0, y, x);
    loss += (softplus(l) - l * t) / norm;
    if (d_head) d_head->at(0, y, x) = (sigmoid(l) - t) / norm;
    if (it == targets.end()) continue;

    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kClasses; ++c) mx = std::max(mx, head.at(1 + c, y, x));
    double z = 0;
    for (int c = 0; c < kClasses; ++c) z += std::exp(head.at(1 + c, y, x) - mx);
    loss += (std::log(z) + mx - head.at(1 + it->second.cls, y, x)) / norm;
    for (int c = 0; c < kClasses; ++c) {
      const double p = std::exp(head.at(1 + c, y, x) - mx) / z;
      if (d_head) d_head->at(1 + c, y, x) = (p - (c == it->second.cls ? 1.0 : 0.0)) / norm;
    }
    for (int k = 0; k < 4; ++k) {
      const double diff = head.at(1 + kNumPathologies + k, y, x) - it->second.box[k];
      const double ad = std::abs(diff);
      loss += (ad < 1 ? 0.5 * diff * diff : ad - 0.5) / norm;
      if (d_head) d_head->at(1 + kNumPathologies + k, y, x) = (ad < 1 ? diff : (diff > 0 ? 1 : -1)) / norm;
    }
  }
  return loss;
}

double ToyDetector::train_step(std::span<const LabeledImage> batch) {
  if (batch.empty()) throw Error("empty detector batch");
  params_.zero_grad();
  const auto sp = specs();
  double total = 0;
  for (const auto& sample : batch) {
    const auto& img = *sample.image;
    if (img.height() != cfg_.input_side || img.width() != cfg_.input_side) {
      throw Error("detector expects " + std::to_string(cfg_.input_side) + "-pixel images, got " +
                  std::to_string(img.height()) + "x" + std::to_string(img.width()) + " (" + img.id() + ")");
    }
    Tape tape;
    forward(nn::to_network(img), &tape);
    Tensor d;
    total += head_loss(tape.head, sample.annotations, &d);
    for (auto& v : d.v) v /= static_cast<double>(batch.size());
    for (std::size_t i = sp.size(); i-- > 0;) {
      if (i + 1 != sp.size()) d = nn::leaky_relu_backward(tape.pre[i], d);
      auto& w = params_.get("conv" + std::to_string(i) + ".weight");
      auto& b = params_.get("conv" + std::to_string(i) + ".bias");
      Tensor d_in;
      nn::conv2d_backward(tape.act_in[i], sp[i], tape.col[i], d, w, &b, i > 0 ? &d_in : nullptr);
      d = std::move(d_in);
    }
  }
  if (!params_.all_finite()) throw Error("detector parameters became non-finite");
  adam_.step(params_);
  return total / static_cast<double>(batch.size());
}

std::vector<Detection> ToyDetector::detect(const GrayImage& image) const {
  if (image.height() != cfg_.input_side || image.width() != cfg_.input_side) {
    throw Error("detector expects " + std::to_string(cfg_.input_side) + "-pixel images (" + image.id() + ")");
  }
  const Tensor head = forward(nn::to_network(image), nullptr);
  const int g = head.h;
  const double stride = cfg_.stride;
  const double side = cfg_.input_side;
  std::vector<Detection> out;
  // Phantom lesions carry no class-specific texture, so every class gets its
  // own best cell rather than only the arg-max class.
  for (int c = 0; c < kClasses; ++c) {
    double best = -1;
    int best_cell = 0;
    for (int cell = 0; cell < g * g; ++cell) {
      const int y = cell / g;
      const int x = cell % g;
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < kClasses; ++k) mx = std::max(mx, head.at(1 + k, y, x));
      double z = 0;
      for (int k = 0; k < kClasses; ++k) z += std::exp(head.at(1 + k, y, x) - mx);
      const double score = sigmoid(head.at(0, y, x)) * std::exp(head.at(1 + c, y, x) - mx) / z;
      if (score > best) {
        best = score;
        best_cell = cell;
      }
    }
    const int y = best_cell / g;
    const int x = best_cell % g;
    const auto reg = [&](int k) { return head.at(1 + kNumPathologies + k, y, x); };
    const double cx = (x + 0.5 + std::clamp(reg(0), -1.0, 1.0)) * stride;
    const double cy = (y + 0.5 + std::clamp(reg(1), -1.0, 1.0)) * stride;
    const double w = stride * std::exp(std::clamp(reg(2), -4.0, 4.0));
    const double h = stride * std::exp(std::clamp(reg(3), -4.0, 4.0));
    const double x0 = std::clamp(cx - w / 2, 0.0, side - 1);
    const double y0 = std::clamp(cy - h / 2, 0.0, side - 1);
    const double x1 = std::clamp(cx + w / 2, x0 + 1, side);
    const double y1 = std::clamp(cy + h / 2, y0 + 1, side);
    out.push_back({BBox{x0, y0, x1 - x0, y1 - y0}, kAllPathologies[c], std::clamp(best, 0.0, 1.0), image.id()});
  }
  return out;
}

std::unique_ptr<Detector> ToyDetector::snapshot() const { return std::make_unique<ToyDetector>(*this); }

// ---------------------------------------------------------------------------
// Protocols

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::shared_ptr<const GrayImage> borrow(const GrayImage& img) {
  return std::shared_ptr<const GrayImage>(std::shared_ptr<void>(), &img);
}

// Every annotation of each image, rescaled to the image's pixel frame.
std::map<std::string, std::vector<Annotation>> boxes_by_image(const Dataset& ds) {
  std::map<std::string, std::vector<Annotation>> out;
  for (const auto& a : ds.annotations) {
    const int res = ds.images->get(a.image_id).height();
    Annotation scaled = a;
    scaled.box = a.box_at(res);
    scaled.native_resolution = res;
    out[a.image_id].push_back(scaled);
  }
  return out;
}

void check_dataset(const Dataset& ds, const char* what) {
  if (ds.images == nullptr) throw Error(std::string(what) + " has no image store");
  if (ds.annotations.empty()) throw Error(std::string(what) + " is empty");
}

}  // namespace

std::vector<LabeledImage> protocol_training_set(Protocol protocol, const Dataset& real_train,
                                                std::span<const synthesis::SyntheticRecord> synthetic) {
  check_dataset(real_train, "real training set");
  if (protocol == Protocol::Ori && !synthetic.empty()) {
    throw Error("the Ori protocol trains on real images only");
  }
  if (protocol != Protocol::Ori && synthetic.empty()) {
    throw Error(to_string(protocol) + " needs synthetic records");
  }
  const auto grouped = boxes_by_image(real_train);
  std::vector<LabeledImage> out;
  out.reserve(real_train.annotations.size() + synthetic.size());
  for (const auto& a : real_train.annotations) {
    out.push_back({borrow(real_train.images->get(a.image_id)), grouped.at(a.image_id)});
  }
  for (const auto& r : synthetic) {
    auto img = std::make_shared<const GrayImage>(r.image());
    Annotation a = r.parent_annotation;
    a.box = a.box_at(img->height());
    a.native_resolution = img->height();
    out.push_back({std::move(img), {a}});
  }
  return out;
}

CLReport run_protocol(Protocol protocol, const Dataset& real_train,
                      std::span<const synthesis::SyntheticRecord> synthetic,
                      const Dataset& eval_set, Detector& detector, const ProtocolOptions& options) {
  const std::string ctx = "protocol " + to_string(protocol) + ": ";
  if (options.budget < 0) throw Error(ctx + "budget must be >= 0");
  if (options.eval_interval < 1) throw Error(ctx + "evaluation interval must be >= 1");
  check_dataset(eval_set, "evaluation set");

  std::set<std::string> train_ids;
  for (const auto& a : real_train.annotations) train_ids.insert(a.image_id);
  for (const auto& r : synthetic) train_ids.insert(r.parent_image_id);
  std::set<std::string> train_stems;
  for (const auto& id : train_ids) train_stems.insert(fs::path(id).stem().string());
  for (const auto& a : eval_set.annotations) {
    if (train_ids.contains(a.image_id) || train_stems.contains(fs::path(a.image_id).stem().string())) {
      throw Error(ctx + "evaluation image '" + a.image_id + "' also feeds training");
    }
  }

  const auto samples = protocol_training_set(protocol, real_train, synthetic);
  const auto eval_boxes = boxes_by_image(eval_set);
  std::vector<Annotation> eval_gt;
  for (const auto& [id, boxes] : eval_boxes) eval_gt.insert(eval_gt.end(), boxes.begin(), boxes.end());

  CLReport report;
  report.protocol = protocol;
  report.iou_threshold = options.iou_threshold;
  report.train_size = samples.size();
  {
    std::ostringstream os;
    os << detector.config() << " | budget=" << options.budget << " eval_interval=" << options.eval_interval
       << " iou=" << io::format_number(options.iou_threshold) << " order_seed=" << options.seed;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(os.str())));
    report.config_hash = hex;
  }

  const auto n = samples.size();
  const auto batch = static_cast<std::size_t>(detector.batch_size());
  std::vector<std::size_t> order(n);
  long order_epoch = -1;
  std::vector<LabeledImage> mb;
  for (long step = 1; step <= options.budget; ++step) {
    mb.clear();
    for (std::size_t k = 0; k < batch; ++k) {
      const auto pos = static_cast<std::size_t>(step - 1) * batch + k;
      const long epoch = static_cast<long>(pos / n);
      if (epoch != order_epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(options.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        order_epoch = epoch;
      }
      mb.push_back(samples[order[pos % n]]);
    }
    double loss = 0;
    try {
      loss = detector.train_step(mb);
    } catch (const std::exception& e) {
      throw Error(ctx + "step " + std::to_string(step) + ": " + e.what());
    }
    if (step % options.eval_interval == 0) {
      std::vector<Detection> dets;
      try {
        const auto frozen = detector.snapshot();
        for (const auto& [id, boxes] : eval_boxes) {
          auto d = frozen->detect(eval_set.images->get(id));
          dets.insert(dets.end(), d.begin(), d.end());
        }
      } catch (const std::exception& e) {
        throw Error(ctx + "evaluation at step " + std::to_string(step) + ": " + e.what());
      }
      report.steps[step] = cl_accuracy(dets, eval_gt, options.iou_threshold);
      if (!options.quiet) {
        std::cerr << to_string(protocol) << " step " << step << " loss " << loss << " CL total "
                  << report.steps[step].scores.total << '\n';
      }
    }
  }
  return report;
}

std::vector<CLReport> run_all_protocols(const Dataset& real_train,
                                        std::span<const synthesis::SyntheticRecord> pix2pix,
                                        std::span<const synthesis::SyntheticRecord> pix2pix_n,
                                        const Dataset& eval_set, const DetectorFactory& factory,
                                        const ProtocolOptions& options) {
  std::vector<CLReport> out;
  for (auto p : kAllProtocols) {
    std::span<const synthesis::SyntheticRecord> synth;
    if (p == Protocol::OriPix2Pix) synth = pix2pix;
    if (p == Protocol::OriPix2PixN) synth = pix2pix_n;
    auto detector = factory();
    out.push_back(run_protocol(p, real_train, synth, eval_set, *detector, options));
    if (out.back().config_hash != out.front().config_hash) {
      throw Error("detector configuration differs between protocols");
    }
  }
  return out;
}

namespace {

std::string center_label(long s) {
  if (s % 1000 == 0) return "CL@" + std::to_string(s / 1000) + "k";
  return "CL@" + std::to_string(s);
}

std::string cell(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string format_table2(std::span<const CLReport> reports, std::span<const long> centers, long radius) {
  std::vector<std::vector<ClScores>> best;
  for (const auto& r : reports) {
    auto& row = best.emplace_back();
    for (long s : centers) row.push_back(best_in_window(r, s, radius));
  }
  std::ostringstream os;
  os << "pathology";
  for (const auto& r : reports) {
    for (long s : centers) os << ',' << to_string(r.protocol) << ' ' << center_label(s);
  }
  os << '\n';
  for (int c = 0; c <= kClasses; ++c) {
    os << (c < kClasses ? to_string(kAllPathologies[c]) : std::string("Total"));
    for (const auto& row : best) {
      for (const auto& sc : row) os << ',' << cell(c < kClasses ? sc.per_class[c] : sc.total);
    }
    os << '\n';
  }
  return os.str();
}

void write_table2(const fs::path& path, std::span<const CLReport> reports,
                  std::span<const long> centers, long radius) {
  io::write_text_file(path, format_table2(reports, centers, radius));
}

void write_report_csv(const fs::path& path, const CLReport& report) {
  std::ostringstream os;
  os << "# protocol=" << to_string(report.protocol) << '\n'
     << "# iou_threshold=" << io::format_number(report.iou_threshold) << '\n'
     << "# train_size=" << report.train_size << '\n'
     << "# config_hash=" << report.config_hash << '\n';
  os << "step";
  for (auto p : kAllPathologies) os << ',' << to_string(p);
  os << ",Total\n";
  for (const auto& [step, acc] : report.steps) {
    os << step;
    for (double v : acc.scores.per_class) os << ',' << (std::isnan(v) ? "nan" : io::format_number(v));
    os << ',' << (std::isnan(acc.scores.total) ? "nan" : io::format_number(acc.scores.total)) << '\n';
  }
  io::write_text_file(path, os.str());
}

CLReport read_report_csv(const fs::path& path) {
  std::istringstream in(io::read_text_file(path));
  CLReport r;
  std::string line;
  bool header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key(io::trim(line.substr(1, eq - 1)));
      const std::string value(io::trim(line.substr(eq + 1)));
      if (key == "protocol") r.protocol = protocol_from_string(value);
      if (key == "iou_threshold") r.iou_threshold = std::stod(value);
      if (key == "train_size") r.train_size = std::stoul(value);
      if (key == "config_hash") r.config_hash = value;
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    const auto f = io::split_csv_line(line);
    if (f.size() != kNumPathologies + 2) throw ParseError(path.string() + ": bad report row " + std::to_string(row), row);
    ClAccuracy acc;
    for (int c = 0; c < kClasses; ++c) acc.scores.per_class[c] = std::stod(f[1 + c]);
    acc.scores.total = std::stod(f[kNumPathologies + 1]);
    r.steps[std::stol(f[0])] = acc;
  }
  return r;
}

}  // namespace pathsyn::localization
