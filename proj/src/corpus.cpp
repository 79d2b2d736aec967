#include "pathsyn/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "pathsyn/io.hpp"

namespace pathsyn::corpus {

namespace fs = std::filesystem;

namespace {

double parse_double(const std::string& field, std::size_t row, const char* name) {
  double v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("row " + std::to_string(row) + ": invalid " + name + " '" + field + "'", row);
  }
  return v;
}

}  // namespace

ParsedAnnotations parse_annotations(const fs::path& csv_path, int native_resolution,
                                    const std::vector<Pathology>& classes) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot read annotation file " + csv_path.string());

  ParsedAnnotations out;
  std::string line;
  if (!std::getline(in, line)) return out;  // header only / empty file

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    const auto fields = io::split_csv_line(line);
    if (fields.size() < 6 || fields[0].empty()) {
      throw ParseError("row " + std::to_string(row) + ": expected image_id,label,x,y,w,h", row);
    }
    const auto label = pathology_from_string(fields[1]);
    const bool wanted = label && std::find(classes.begin(), classes.end(), *label) != classes.end();

    Annotation a;
    a.image_id = fields[0];
    a.box = {parse_double(fields[2], row, "x"), parse_double(fields[3], row, "y"),
             parse_double(fields[4], row, "w"), parse_double(fields[5], row, "h")};
    a.native_resolution = native_resolution;
    if (a.box.w <= 0 || a.box.h <= 0) {
      throw ParseError("row " + std::to_string(row) + ": box must have positive width and height",
                       row);
    }
    if (!wanted) {
      ++out.skipped;
      continue;
    }
    a.pathology = *label;
    out.annotations.push_back(std::move(a));
  }
  return out;
}

void write_annotations(const fs::path& csv_path, const std::vector<Annotation>& annotations) {
  std::ostringstream os;
  os << "image_id,label,x,y,w,h\n";
  for (const auto& a : annotations) {
    os << a.image_id << ',' << to_string(a.pathology) << ',' << io::format_number(a.box.x) << ','
       << io::format_number(a.box.y) << ',' << io::format_number(a.box.w) << ','
       << io::format_number(a.box.h) << '\n';
  }
  io::write_text_file(csv_path, os.str());
}

CorpusSplit split_train_eval(const std::vector<Annotation>& annotations, double train_fraction,
                             std::uint64_t seed) {
  if (annotations.empty()) throw Error("cannot split an empty annotation list");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(annotations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = annotations.size();
  const auto n_eval = std::min(
      n, static_cast<std::size_t>(std::ceil((1.0 - train_fraction) * static_cast<double>(n))));
  const auto n_train = n - n_eval;

  CorpusSplit split;
  split.seed = seed;
  split.train.reserve(n_train);
  split.eval.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? split.train : split.eval).push_back(annotations[order[i]]);
  }
  return split;
}

GrayImage resize_bilinear(const GrayImage& image, int height, int width) {
  if (height < 1 || width < 1) throw Error("resize target must be positive");
  if (height == image.height() && width == image.width()) return image;

  GrayImage out(image.id(), height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  const int max_y = image.height() - 1;
  const int max_x = image.width() - 1;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, max_y);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, max_x);
      const double tx = fx - x0;
      // a + t * (b - a) keeps constant regions exact.
      const double top = image.at(y0, x0) + tx * (image.at(y0, x1) - image.at(y0, x0));
      const double bot = image.at(y1, x0) + tx * (image.at(y1, x1) - image.at(y1, x0));
      out.at(y, x) = top + ty * (bot - top);
    }
  }
  return out;
}

GrayImage load_and_resize(const fs::path& path, int target) {
  if (target < 1) throw Error("resize target must be positive");
  const auto raw = io::read_png(path);
  if (raw.height != raw.width) {
    throw Error("source image is not square (" + std::to_string(raw.width) + "x" +
                std::to_string(raw.height) + "): " + path.string());
  }
  return resize_bilinear(io::to_unit_image(raw, path.filename().string()), target, target);
}

ImageStore::ImageStore(fs::path root, int resolution)
    : root_(std::move(root)), resolution_(resolution) {}

void ImageStore::insert(GrayImage image) {
  auto id = image.id();
  cache_.insert_or_assign(std::move(id), std::move(image));
}

bool ImageStore::contains(const std::string& id) const {
  if (cache_.count(id)) return true;
  return !root_.empty() && fs::exists(root_ / id);
}

const GrayImage& ImageStore::get(const std::string& id) const {
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  if (root_.empty() || !fs::exists(root_ / id)) throw IoError("image not found: " + id);
  auto image = load_and_resize(root_ / id, resolution_);
  image.set_id(id);
  return cache_.emplace(id, std::move(image)).first->second;
}

namespace {

constexpr int kPhantomSide = 256;

struct Ellipse {
  double cx, cy, rx, ry;
  // Normalized radius squared at the pixel centre.
  double r2(int x, int y) const {
    const double dx = (x + 0.5 - cx) / rx;
    const double dy = (y + 0.5 - cy) / ry;
    return dx * dx + dy * dy;
  }
};

struct LesionSpec {
  Ellipse shape;
  PixelRect tight;
};

// Lung fields on a brighter body, with faint horizontal rib banding.
GrayImage render_chest(std::mt19937_64& rng, std::string id, std::vector<Ellipse>& lungs) {
  const double side = kPhantomSide;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const double body = uniform(0.66, 0.76);
  const double lung_level = uniform(0.18, 0.28);
  const double rib_period = uniform(14.0, 22.0);
  const double rib_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double rib_amp = uniform(0.02, 0.05);

  lungs.clear();
  const double cy = side * (0.5 + uniform(-0.03, 0.03));
  for (int side_sign : {-1, 1}) {
    Ellipse e{};
    e.rx = side * uniform(0.15, 0.19);
    e.ry = side * uniform(0.25, 0.35);
    e.cx = side * 0.5 + side_sign * (e.rx + side * uniform(0.02, 0.05));
    e.cy = cy + side * uniform(-0.02, 0.02);
    lungs.push_back(e);
  }

  GrayImage img(std::move(id), kPhantomSide, kPhantomSide);
  for (int y = 0; y < kPhantomSide; ++y) {
    const double gradient = 0.06 * (static_cast<double>(y) / side - 0.5);
    const double rib = rib_amp * std::sin(2.0 * std::numbers::pi * y / rib_period + rib_phase);
    for (int x = 0; x < kPhantomSide; ++x) {
      double v = body + gradient;
      for (const auto& lung : lungs) {
        const double r2 = lung.r2(x, y);
        if (r2 <= 1.0) {
          // Soft rim so the field edge is not a hard step.
          const double rim = std::clamp((1.0 - r2) * 6.0, 0.0, 1.0);
          v = v + rim * (lung_level + rib - v);
        }
      }
      img.at(y, x) = v;
    }
  }
  return img;
}

LesionSpec place_lesion(std::mt19937_64& rng, const Ellipse& lung) {
  const double side = kPhantomSide;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  Ellipse les{};
  les.rx = std::min(side * uniform(0.04, 0.10), 0.6 * lung.rx);
  les.ry = std::min(side * uniform(0.04, 0.10), 0.6 * lung.ry);
  // Uniform point in the shrunken lung so the lesion stays inside the field.
  const double radius = std::sqrt(u(rng)) * 0.8;
  const double angle = uniform(0.0, 2.0 * std::numbers::pi);
  les.cx = lung.cx + radius * (lung.rx - les.rx) * std::cos(angle);
  les.cy = lung.cy + radius * (lung.ry - les.ry) * std::sin(angle);

  PixelRect tight{kPhantomSide, kPhantomSide, 0, 0};
  for (int y = 0; y < kPhantomSide; ++y) {
    for (int x = 0; x < kPhantomSide; ++x) {
      if (les.r2(x, y) <= 1.0) {
        tight.x0 = std::min(tight.x0, x);
        tight.y0 = std::min(tight.y0, y);
        tight.x1 = std::max(tight.x1, x + 1);
        tight.y1 = std::max(tight.y1, y + 1);
      }
    }
  }
  return {les, tight};
}

void paint_lesion(GrayImage& img, const Ellipse& les, double peak) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double r2 = les.r2(x, y);
      if (r2 <= 1.0) {
        const double w = std::clamp((1.0 - r2) * 4.0, 0.0, 1.0);
        img.at(y, x) += w * (peak - img.at(y, x));
      }
    }
  }
}

// PNG round-trip is exact for the in-memory copy.
void quantize_in_place(GrayImage& img) {
  for (auto& v : img.pixels()) v = quantize8(v) / 255.0;
}

std::string diseased_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_d%04d.png", i);
  return buf;
}

std::string healthy_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_h%04d.png", i);
  return buf;
}

}  // namespace

PhantomCorpus render_phantom_corpus(int n_diseased, int n_healthy, std::uint64_t seed) {
  if (n_diseased < 0 || n_healthy < 0) throw Error("phantom counts must be non-negative");
  PhantomCorpus corpus;
  std::vector<Ellipse> lungs;
  for (int i = 0; i < n_diseased; ++i) {
    // Per-image streams keep image i independent of the requested counts.
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 2 * static_cast<std::uint64_t>(i) + 1);
    auto img = render_chest(rng, diseased_name(i), lungs);
    std::uniform_int_distribution<int> pick(0, 1);
    const auto lesion = place_lesion(rng, lungs[pick(rng)]);
    std::uniform_real_distribution<double> peak(0.9, 0.98);
    paint_lesion(img, lesion.shape, peak(rng));
    quantize_in_place(img);

    Annotation a;
    a.image_id = img.id();
    a.pathology = kAllPathologies[static_cast<std::size_t>(i) % kNumPathologies];
    a.box = to_bbox(lesion.tight);
    a.native_resolution = kPhantomSide;
    corpus.annotations.push_back(std::move(a));
    corpus.diseased.push_back(std::move(img));
  }
  for (int i = 0; i < n_healthy; ++i) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 2 * static_cast<std::uint64_t>(i) + 2);
    auto img = render_chest(rng, healthy_name(i), lungs);
    quantize_in_place(img);
    corpus.healthy.push_back(std::move(img));
  }
  return corpus;
}

PhantomCorpus generate_phantom_corpus(int n_diseased, int n_healthy, std::uint64_t seed,
                                      const fs::path& out_dir) {
  auto corpus = render_phantom_corpus(n_diseased, n_healthy, seed);
  io::ensure_directory(out_dir);
  for (const auto& img : corpus.diseased) io::write_png8(out_dir / img.id(), img);
  std::ostringstream healthy_list;
  for (const auto& img : corpus.healthy) {
    io::write_png8(out_dir / img.id(), img);
    healthy_list << img.id() << '\n';
  }
  write_annotations(out_dir / "annotations.csv", corpus.annotations);
  io::write_text_file(out_dir / "healthy.txt", healthy_list.str());
  io::write_key_values(out_dir / "corpus.txt",
                       {{"native_resolution", std::to_string(kWorkingResolution)}});
  return corpus;
}

int native_resolution_of(const fs::path& dir, int fallback) {
  const auto info = dir / "corpus.txt";
  if (!fs::exists(info)) return fallback;
  const auto kv = io::read_key_values(info);
  const auto it = kv.find("native_resolution");
  if (it == kv.end()) return fallback;
  const int res = std::stoi(it->second);
  if (res < 1) throw ParseError(info.string() + ": native_resolution must be positive", 0);
  return res;
}

std::vector<GrayImage> load_healthy_list(const fs::path& dir, int resolution) {
  std::vector<GrayImage> out;
  const auto list = dir / "healthy.txt";
  if (!fs::exists(list)) return out;
  std::istringstream in(io::read_text_file(list));
  std::string name;
  while (std::getline(in, name)) {
    const auto trimmed = std::string(io::trim(name));
    if (trimmed.empty()) continue;
    auto img = load_and_resize(dir / trimmed, resolution);
    img.set_id(trimmed);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace pathsyn::corpus
