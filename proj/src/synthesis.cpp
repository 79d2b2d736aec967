#include "pathsyn/synthesis.hpp"

#include <sstream>

#include "pathsyn/io.hpp"
#include "pathsyn/nn.hpp"

namespace pathsyn::synthesis {

namespace fs = std::filesystem;

GrayImage SyntheticRecord::image() const {
  std::vector<double> px(pixels8.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = pixels8[i] / 255.0;
  return GrayImage(file_name, height, width, std::move(px));
}

GrayImage composite(const GrayImage& x, const GrayImage& g_out, const GrayImage& m) {
  if (!x.same_shape(g_out) || !x.same_shape(m)) throw Error("composite: shape mismatch");
  GrayImage out(x.id(), x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mv = m.pixels()[i];
    if (mv != 0.0 && mv != 1.0) throw Error("composite: mask values must be 0 or 1");
    out.pixels()[i] = x.pixels()[i] + g_out.pixels()[i] * (1 - mv);
  }
  return out;
}

GrayImage composite(const GrayImage& x, const GrayImage& g_out, const pairing::BinaryMask& m) {
  if (x.height() != m.height() || x.width() != m.width()) throw Error("composite: shape mismatch");
  GrayImage mask("", m.height(), m.width());
  for (int y = 0; y < m.height(); ++y) {
    for (int c = 0; c < m.width(); ++c) mask.at(y, c) = m.at(y, c);
  }
  return composite(x, g_out, mask);
}

std::set<pairing::AugmentOp> variant_ops(std::size_t k, std::size_t n_annotations,
                                         const SynthesisOptions& options) {
  return k < n_annotations ? std::set<pairing::AugmentOp>{} : options.augment;
}

std::uint64_t variant_seed(std::uint64_t seed, std::size_t k) {
  // splitmix64 finalizer over (seed, k)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(k) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return (z ^ (z >> 31)) % 1000000007ULL;
}

pairing::TrainingPair variant_pair(const Annotation& annotation, const GrayImage& parent,
                                   std::uint64_t vseed, const std::set<pairing::AugmentOp>& ops) {
  const auto base = pairing::make_disease_pair(annotation, parent, "v" + std::to_string(vseed));
  return pairing::augment_pair(base, ops, vseed);
}

namespace {


}  // namespace

SyntheticRecord synthesize_one(const networks::Generator& g, const pairing::TrainingPair& variant,
                               const std::string& model_tag, std::uint64_t vseed) {
  if (!variant.annotation) throw Error("synthesis needs an annotated (disease) pair");
  const auto g_pixels = nn::to_pixels(g.forward(nn::to_network(variant.x)), variant.y.id());
  auto image = composite(variant.x, g_pixels, variant.m);
  // Hard copy of the pathology region so it survives any floating-point path.
  const auto& r = variant.m.rect();
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) image.at(y, x) = variant.y.at(y, x);
  }

  SyntheticRecord rec;
  rec.parent_image_id = variant.annotation->image_id;
  rec.model_tag = model_tag;
  rec.variant_seed = vseed;
  rec.file_name = model_tag + "_" + rec.parent_image_id + "_" + std::to_string(vseed) + ".png";
  rec.height = image.height();
  rec.width = image.width();
  rec.pixels8.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) rec.pixels8[i] = quantize8(image.pixels()[i]);
  rec.parent_annotation = *variant.annotation;
  rec.parent_annotation.image_id = rec.file_name;
  rec.parent_annotation.box = to_bbox(r);
  rec.parent_annotation.native_resolution = image.height();
  return rec;
}

std::vector<SyntheticRecord> synthesize_dataset(const networks::Generator& g,
                                                const std::vector<Annotation>& annotations,
                                                const corpus::ImageStore& images, int count,
                                                std::uint64_t seed, const fs::path& out_dir,
                                                const SynthesisOptions& options) {
  if (count < 1) throw Error("synthesis count must be >= 1");
  if (annotations.empty()) throw Error("synthesis needs at least one annotation");
  if (options.model_tag.empty() || options.model_tag.find_first_of(",/ ") != std::string::npos) {
    throw Error("model tag must be non-empty and free of commas, slashes and spaces");
  }
  io::ensure_directory(out_dir);

  std::vector<SyntheticRecord> records;
  records.reserve(static_cast<std::size_t>(count));
  std::ostringstream manifest;
  manifest << "image_id,label,x,y,w,h,model_tag\n";
  for (int k = 0; k < count; ++k) {
    const auto& a = annotations[static_cast<std::size_t>(k) % annotations.size()];
    const auto& parent = images.get(a.image_id);
    if (parent.height() != g.arch().image_side || parent.width() != g.arch().image_side) {
      throw Error("checkpoint expects " + std::to_string(g.arch().image_side) +
                  "-pixel images but the image store holds " + std::to_string(parent.height()));
    }
    const auto vseed = variant_seed(seed, static_cast<std::size_t>(k));
    const auto ops = variant_ops(static_cast<std::size_t>(k), annotations.size(), options);
    auto rec = synthesize_one(g, variant_pair(a, parent, vseed, ops), options.model_tag, vseed);
    io::write_png8(out_dir / rec.file_name, rec.image());
    const auto& b = rec.parent_annotation.box;
    manifest << rec.file_name << ',' << to_string(rec.parent_annotation.pathology) << ','
             << io::format_number(b.x) << ',' << io::format_number(b.y) << ','
             << io::format_number(b.w) << ',' << io::format_number(b.h) << ',' << rec.model_tag
             << '\n';
    records.push_back(std::move(rec));
  }
  io::write_text_file(out_dir / "manifest.csv", manifest.str());
  return records;
}

networks::Generator load_generator_checkpoint(const fs::path& checkpoint) {
  if (fs::exists(checkpoint / "generator" / "manifest.txt")) {
    return networks::load_generator(checkpoint / "generator");
  }
  return networks::load_generator(checkpoint);
}

std::vector<SyntheticRecord> synthesize_dataset(const fs::path& checkpoint,
                                                const std::vector<Annotation>& annotations,
                                                const corpus::ImageStore& images, int count,
                                                std::uint64_t seed, const fs::path& out_dir,
                                                const SynthesisOptions& options) {
  if (count < 1) throw Error("synthesis count must be >= 1");
  return synthesize_dataset(load_generator_checkpoint(checkpoint), annotations, images, count,
                            seed, out_dir, options);
}

std::vector<SyntheticRecord> read_synthetic_dir(const fs::path& dir) {
  std::istringstream in(io::read_text_file(dir / "manifest.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<SyntheticRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() < 7) throw ParseError("synthetic manifest row " + std::to_string(row) + " is short", row);
    const auto label = pathology_from_string(f[1]);
    if (!label) throw ParseError("unknown label in synthetic manifest row " + std::to_string(row), row);
    const auto raw = io::read_png(dir / f[0]);
    if (raw.bit_depth != 8) throw IoError("synthetic images are 8-bit: " + f[0]);
    SyntheticRecord rec;
    rec.file_name = f[0];
    rec.height = raw.height;
    rec.width = raw.width;
    rec.pixels8.assign(raw.samples.begin(), raw.samples.end());
    rec.parent_annotation = Annotation{f[0], *label,
                                       BBox{std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])},
                                       raw.height};
    rec.model_tag = f[6];
    // {tag}_{parent image id}_{seed}.png
    const auto stem = fs::path(f[0]).stem().string();
    const auto last = stem.rfind('_');
    if (last != std::string::npos && stem.compare(0, rec.model_tag.size() + 1, rec.model_tag + "_") == 0) {
      rec.parent_image_id = stem.substr(rec.model_tag.size() + 1, last - rec.model_tag.size() - 1);
      rec.variant_seed = std::stoull(stem.substr(last + 1));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace pathsyn::synthesis
