#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pathsyn/corpus.hpp"
#include "pathsyn/nn.hpp"
#include "pathsyn/synthesis.hpp"
#include "pathsyn/training.hpp"

namespace pathsyn::localization {

inline constexpr double kDefaultIouThreshold = 0.1;
inline constexpr long kDefaultEvalInterval = 500;
inline constexpr long kDefaultWindowRadius = 500;

struct Detection {
  BBox box;
  Pathology pathology = Pathology::Atelectasis;
  double score = 0;
  std::string image_id;
};

// Continuous-coordinate intersection over union. Throws on non-positive area.
double iou(const BBox& a, const BBox& b);

struct ClScores {
  std::array<double, kNumPathologies> per_class{};  // NaN where the class has no ground truth
  double total = 0;
};

struct ClAccuracy {
  ClScores scores;
  std::array<int, kNumPathologies> ground_truth{};
  std::array<int, kNumPathologies> correct{};
};

// Ground truth boxes must be in the same pixel frame as the detections.
ClAccuracy cl_accuracy(std::span<const Detection> detections,
                       std::span<const Annotation> ground_truth,
                       double threshold = kDefaultIouThreshold);

enum class Protocol { Ori, OriPix2Pix, OriPix2PixN };
inline constexpr std::array<Protocol, 3> kAllProtocols = {Protocol::Ori, Protocol::OriPix2Pix,
                                                          Protocol::OriPix2PixN};
std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct CLReport {
  Protocol protocol = Protocol::Ori;
  double iou_threshold = kDefaultIouThreshold;
  std::size_t train_size = 0;
  std::string config_hash;
  std::map<long, ClAccuracy> steps;
};

// Each cell maximized independently over evaluated steps in [s - radius, s + radius].
ClScores best_in_window(const CLReport& report, long s, long radius);

// One training example: an image plus every box on it, boxes in image pixels.
struct LabeledImage {
  std::shared_ptr<const GrayImage> image;
  std::vector<Annotation> annotations;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual double train_step(std::span<const LabeledImage> batch) = 0;
  virtual std::vector<Detection> detect(const GrayImage& image) const = 0;
  // Frozen copy for evaluation while training continues.
  virtual std::unique_ptr<Detector> snapshot() const = 0;
  virtual int batch_size() const = 0;
  // Canonical description of every hyperparameter; hashed for protocol fairness.
  virtual std::string config() const = 0;
};

struct ToyDetectorConfig {
  double learning_rate = 3e-4;
  int batch_size = 2;
  int input_side = 256;
  int stride = 16;
  int base_width = 8;
  std::uint64_t seed = 0;
};

// Single-stage anchor-free detector on a stride-16 grid: per cell an
// objectness logit, six class logits and a center/size box regression.
class ToyDetector : public Detector {
 public:
  explicit ToyDetector(ToyDetectorConfig cfg = {});

  double train_step(std::span<const LabeledImage> batch) override;
  std::vector<Detection> detect(const GrayImage& image) const override;
  std::unique_ptr<Detector> snapshot() const override;
  int batch_size() const override { return cfg_.batch_size; }
  std::string config() const override;

  const ToyDetectorConfig& settings() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  int grid_side() const { return cfg_.input_side / cfg_.stride; }

  static constexpr int kHeadChannels = 1 + kNumPathologies + 4;

  struct Tape {
    std::vector<nn::Tensor> act_in;
    std::vector<nn::Tensor> pre;
    std::vector<nn::ConvCache> col;
    nn::Tensor head;
  };
  nn::Tensor forward(const nn::Tensor& x, Tape* tape) const;
  // Loss for one image and its gradient w.r.t. the head output.
  double head_loss(const nn::Tensor& head, const std::vector<Annotation>& boxes,
                   nn::Tensor* d_head) const;

 private:
  std::vector<nn::ConvSpec> specs() const;

  ToyDetectorConfig cfg_;
  nn::ParamSet params_;
  training::Adam adam_;
};

std::uint64_t fnv1a64(const std::string& bytes);

struct ProtocolOptions {
  long budget = 15500;
  long eval_interval = kDefaultEvalInterval;
  double iou_threshold = kDefaultIouThreshold;
  std::uint64_t seed = 0;  // sample order
  bool quiet = true;
};

struct Dataset {
  std::vector<Annotation> annotations;
  const corpus::ImageStore* images = nullptr;
};

// Training set of a protocol: one example per real annotation, plus one per
// synthetic record for the two augmented protocols.
std::vector<LabeledImage> protocol_training_set(Protocol protocol, const Dataset& real_train,
                                                std::span<const synthesis::SyntheticRecord> synthetic);

CLReport run_protocol(Protocol protocol, const Dataset& real_train,
                      std::span<const synthesis::SyntheticRecord> synthetic,
                      const Dataset& eval_set, Detector& detector, const ProtocolOptions& options);

using DetectorFactory = std::function<std::unique_ptr<Detector>()>;

// Runs Ori, Ori+Pix2Pix and Ori+Pix2Pix-N with fresh detectors from one
// factory and checks their configuration hashes agree.
std::vector<CLReport> run_all_protocols(const Dataset& real_train,
                                        std::span<const synthesis::SyntheticRecord> pix2pix,
                                        std::span<const synthesis::SyntheticRecord> pix2pix_n,
                                        const Dataset& eval_set, const DetectorFactory& factory,
                                        const ProtocolOptions& options);

// Rows: six pathologies then Total; columns: protocol x CL@center.
std::string format_table2(std::span<const CLReport> reports, std::span<const long> centers,
                          long radius = kDefaultWindowRadius);
void write_table2(const std::filesystem::path& path, std::span<const CLReport> reports,
                  std::span<const long> centers, long radius = kDefaultWindowRadius);

void write_report_csv(const std::filesystem::path& path, const CLReport& report);
CLReport read_report_csv(const std::filesystem::path& path);

}  // namespace pathsyn::localization
