#pragma once

// Augmentation-consistent pseudo-labeling and self-training.
//
// Every unlabeled stream is classified under the four combinations of
// {hflip, treverse}. A sample is accepted only when all four argmaxes agree
// and each of the four top probabilities reaches the confidence threshold;
// the accepted set is then capped at top_k per class by mean confidence.

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evclip/embed.hpp"
#include "evclip/train.hpp"

namespace evclip {

struct PseudoLabelConfig {
  double conf_threshold = 0.999;
  int top_k = 30;
};

inline constexpr double kSemiSupervisedThreshold = 0.5;

enum class RejectReason { kNone, kInconsistent, kLowConfidence, kCrowdedOut };

std::string_view reject_reason_name(RejectReason r);

struct PseudoLabelRecord {
  std::string id;
  std::array<int, 4> classes{};         // argmax per augmentation
  std::array<double, 4> confidences{};  // max probability per augmentation
  bool accepted = false;
  int label = -1;
  double mean_confidence = 0.0;
  RejectReason reason = RejectReason::kNone;
};

/// Per-sample, per-augmentation features.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual std::size_t size() const = 0;
  virtual const std::string& id(std::size_t sample) const = 0;
  virtual Eigen::MatrixXd features(std::size_t sample, Augmentation aug) const = 0;
};

/// Augments the event streams and runs the synthetic encoder.
class SyntheticFeatureSource final : public FeatureSource {
 public:
  SyntheticFeatureSource(std::span<const EventStream> streams, WindowingConfig windowing,
                         const SyntheticEncoder& encoder)
      : streams_(streams), windowing_(windowing), encoder_(&encoder) {}

  std::size_t size() const override { return streams_.size(); }
  const std::string& id(std::size_t sample) const override { return streams_[sample].id; }
  Eigen::MatrixXd features(std::size_t sample, Augmentation aug) const override;

 private:
  std::span<const EventStream> streams_;
  WindowingConfig windowing_;
  const SyntheticEncoder* encoder_;
};

/// Looks augmented variants up in an embedding file. Sample ids for the
/// variants carry a suffix: "<id>", "<id>@hflip", "<id>@treverse",
/// "<id>@hflip+treverse".
class EmbeddingFeatureSource final : public FeatureSource {
 public:
  EmbeddingFeatureSource(const EmbeddingSet& set, std::vector<std::string> ids)
      : index_(set), ids_(std::move(ids)) {}

  std::size_t size() const override { return ids_.size(); }
  const std::string& id(std::size_t sample) const override { return ids_[sample]; }
  Eigen::MatrixXd features(std::size_t sample, Augmentation aug) const override;

 private:
  FrameIndex index_;
  std::vector<std::string> ids_;
};

std::string augmented_id(std::string_view sample_id, Augmentation aug);

using Predictor = std::function<ClassProbabilities(const Eigen::MatrixXd& features)>;

std::vector<PseudoLabelRecord> label_candidates(const FeatureSource& source,
                                                const Predictor& model,
                                                const PseudoLabelConfig& cfg);

/// Applies the four-way agreement and confidence gate to one sample.
PseudoLabelRecord judge(std::string id, const std::array<ClassProbabilities, 4>& per_augmentation,
                        const PseudoLabelConfig& cfg);

/// Keeps the top_k accepted records of each class (mean confidence
/// descending, then id ascending); the rest become crowded_out.
std::vector<PseudoLabelRecord> select_top_k(std::vector<PseudoLabelRecord> records,
                                            const PseudoLabelConfig& cfg);

/// "id,label,mean_confidence,verdict,reason".
std::string pseudo_label_csv(std::span<const PseudoLabelRecord> records);

struct SelfTrainConfig {
  PseudoLabelConfig pseudo;
  TrainConfig train;
  AdapterKind kind = AdapterKind::kJoint;
  double alpha = 0.8;
  AdapterOptions adapter;
};

struct SelfTrainReport {
  AdapterParams<double> params;
  std::vector<PseudoLabelRecord> records;
  std::vector<LossPoint> curve;
  double acceptance_rate = 0.0;
  std::vector<int> per_class_accepted;
  std::optional<double> purity;             // accepted set vs ground truth
  std::optional<double> unfiltered_purity;  // plain argmax labels vs ground truth
};

/// Unsupervised when `labeled` is empty (zero-shot labels the data), else
/// semi-supervised: train on `labeled`, pseudo-label with that model, then
/// continue training from it on labeled + pseudo-labeled samples.
/// `ground_truth`, when non-empty, is aligned with `unlabeled` and only used
/// for the purity statistics.
SelfTrainReport self_train(const FeatureSource& unlabeled, std::span<const TrainingSample> labeled,
                           const Eigen::MatrixXd& text, double logit_scale,
                           const SelfTrainConfig& cfg,
                           std::span<const std::optional<int>> ground_truth = {});

}  // namespace evclip
