#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evlab/corpus.hpp"
#include "evlab/nn.hpp"
#include "evlab/sbf.hpp"

namespace evlab {

enum class DetectorKind : std::uint8_t { kFeatureScorer = 0, kByteScorer = 1, kImageScorer = 2, kHardLabel = 3 };

std::string to_string(DetectorKind kind);
DetectorKind detector_kind_from_string(const std::string& s);

/// Decision thresholds of the three reference models the scorers stand in for.
double default_threshold(DetectorKind kind);

inline constexpr std::size_t kByteScorerWindow = 65536;
inline constexpr std::size_t kImageSide = 64;

std::size_t detector_input_dim(DetectorKind kind);

/// Model input for a scoring kind. Throws std::invalid_argument for kHardLabel.
std::vector<double> detector_input(const SbfBinary& binary, DetectorKind kind);
std::vector<double> detector_input(const SbfBinary& binary, std::span<const std::uint8_t> serialized,
                                   DetectorKind kind);

/// A detector that exposes a probability-like score.
class ScoringDetector {
 public:
  virtual ~ScoringDetector() = default;
  virtual double score(const SbfBinary& binary) const = 0;
  /// `serialized` must equal serialize(binary); lets callers share the encoding.
  virtual double score_serialized(const SbfBinary& binary, std::span<const std::uint8_t> /*serialized*/) const {
    return score(binary);
  }
  virtual double threshold() const = 0;
  virtual std::string name() const = 0;
  /// Tie at the threshold counts as detected.
  int label(const SbfBinary& binary) const { return score(binary) >= threshold() ? 1 : 0; }
};

/// A detector that only ever says 0 (benign) or 1 (malicious).
class LabelingDetector {
 public:
  virtual ~LabelingDetector() = default;
  virtual int label(const SbfBinary& binary) const = 0;
  virtual int label_serialized(const SbfBinary& binary, std::span<const std::uint8_t> /*serialized*/) const {
    return label(binary);
  }
  virtual std::string name() const = 0;
};

using DetectorRef = std::variant<std::shared_ptr<const ScoringDetector>, std::shared_ptr<const LabelingDetector>>;

struct InputScaler {
  std::vector<double> mean;
  std::vector<double> inv_std;

  bool operator==(const InputScaler&) const = default;
};

class TrainedDetector final : public ScoringDetector {
 public:
  TrainedDetector(DetectorKind kind, MlpNetwork model, double threshold, InputScaler scaler);

  double score(const SbfBinary& binary) const override;
  double score_serialized(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const override;
  double score_input(std::span<const double> input) const;
  double threshold() const override { return threshold_; }
  std::string name() const override { return to_string(kind_); }

  DetectorKind kind() const { return kind_; }
  const MlpNetwork& model() const { return model_; }
  const InputScaler& scaler() const { return scaler_; }
  TrainedDetector with_threshold(double threshold) const;

  bool operator==(const TrainedDetector& other) const;

 private:
  DetectorKind kind_;
  MlpNetwork model_;
  double threshold_;
  InputScaler scaler_;
};

/// Hides the score of the wrapped detector; only the thresholded label leaks.
class HardLabelDetector final : public LabelingDetector {
 public:
  explicit HardLabelDetector(std::shared_ptr<const TrainedDetector> inner);

  int label(const SbfBinary& binary) const override;
  int label_serialized(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const override;
  std::string name() const override;
  DetectorKind kind() const { return DetectorKind::kHardLabel; }
  DetectorKind inner_kind() const;

  friend std::vector<std::uint8_t> detector_checkpoint(const HardLabelDetector& detector);

 private:
  std::shared_ptr<const TrainedDetector> inner_;
};

struct DetectorTrainingConfig {
  std::size_t hidden = 32;
  int epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.2;
  std::optional<double> threshold;  // defaults to default_threshold(kind)
};

struct DetectorTrainingResult {
  TrainedDetector detector;
  double holdout_auc = 0.0;
  std::size_t train_count = 0;
  std::size_t holdout_count = 0;
};

/// Fits input -> hidden -> 1 (sigmoid) on cross-entropy with minibatch Adam.
/// A seeded, stratified holdout split supplies the reported AUC. Throws
/// DegenerateCorpus when only one label is present.
DetectorTrainingResult train_detector(const std::vector<CorpusSample>& corpus, DetectorKind kind,
                                      const DetectorTrainingConfig& config, std::uint64_t seed);

/// Area under the ROC curve (Mann-Whitney, ties counted as 1/2).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Checkpoint: "SBDT", u32 version, u8 kind, then for scoring kinds f64
// threshold, u32 dim, dim f64 means, dim f64 inverse stds, network; for the
// hard-label kind the inner scoring checkpoint follows.
std::vector<std::uint8_t> detector_checkpoint(const TrainedDetector& detector);
std::vector<std::uint8_t> detector_checkpoint(const HardLabelDetector& detector);
TrainedDetector trained_detector_from_checkpoint(std::span<const std::uint8_t> data);
/// Loads either kind of checkpoint.
DetectorRef detector_from_checkpoint(std::span<const std::uint8_t> data);

}  // namespace evlab
