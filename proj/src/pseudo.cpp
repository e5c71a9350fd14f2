#include "evclip/pseudo.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace evclip {

std::string_view reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::kNone:
      return "";
    case RejectReason::kInconsistent:
      return "inconsistent";
    case RejectReason::kLowConfidence:
      return "low_confidence";
    case RejectReason::kCrowdedOut:
      return "crowded_out";
  }
  return "?";
}

Eigen::MatrixXd SyntheticFeatureSource::features(std::size_t sample, Augmentation aug) const {
  return encode_stream(augment(streams_[sample], aug), windowing_, *encoder_);
}

std::string augmented_id(std::string_view sample_id, Augmentation aug) {
  if (aug == Augmentation::kIdentity) return std::string(sample_id);
  return std::string(sample_id) + "@" + std::string(augmentation_name(aug));
}

Eigen::MatrixXd EmbeddingFeatureSource::features(std::size_t sample, Augmentation aug) const {
  return index_.features(augmented_id(ids_[sample], aug));
}

PseudoLabelRecord judge(std::string id, const std::array<ClassProbabilities, 4>& per_augmentation,
                        const PseudoLabelConfig& cfg) {
  PseudoLabelRecord rec;
  rec.id = std::move(id);
  double sum = 0.0;
  double lowest = 1.0;
  for (std::size_t a = 0; a < 4; ++a) {
    rec.classes[a] = argmax(per_augmentation[a]);
    rec.confidences[a] = per_augmentation[a].maxCoeff();
    sum += rec.confidences[a];
    lowest = std::min(lowest, rec.confidences[a]);
  }
  rec.mean_confidence = sum / 4.0;
  const bool consistent = std::all_of(rec.classes.begin(), rec.classes.end(),
                                      [&](int c) { return c == rec.classes[0]; });
  if (!consistent) {
    rec.reason = RejectReason::kInconsistent;
  } else if (lowest < cfg.conf_threshold) {
    rec.reason = RejectReason::kLowConfidence;
  } else {
    rec.accepted = true;
    rec.label = rec.classes[0];
  }
  return rec;
}

std::vector<PseudoLabelRecord> label_candidates(const FeatureSource& source,
                                                const Predictor& model,
                                                const PseudoLabelConfig& cfg) {
  if (!(cfg.conf_threshold > 0.0 && cfg.conf_threshold < 1.0)) {
    throw ValidationError("confidence threshold must lie in (0,1)");
  }
  if (cfg.top_k < 1) throw ValidationError("top_k must be >= 1");
  std::vector<PseudoLabelRecord> records;
  records.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    std::array<ClassProbabilities, 4> probs;
    for (std::size_t a = 0; a < 4; ++a) probs[a] = model(source.features(i, kAllAugmentations[a]));
    records.push_back(judge(source.id(i), probs, cfg));
  }
  return records;
}

std::vector<PseudoLabelRecord> select_top_k(std::vector<PseudoLabelRecord> records,
                                            const PseudoLabelConfig& cfg) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].accepted) by_class[records[i].label].push_back(i);
  }
  for (auto& [label, members] : by_class) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (records[a].mean_confidence != records[b].mean_confidence) {
        return records[a].mean_confidence > records[b].mean_confidence;
      }
      return records[a].id < records[b].id;
    });
    for (std::size_t j = static_cast<std::size_t>(cfg.top_k); j < members.size(); ++j) {
      auto& r = records[members[j]];
      r.accepted = false;
      r.reason = RejectReason::kCrowdedOut;
    }
  }
  return records;
}

std::string pseudo_label_csv(std::span<const PseudoLabelRecord> records) {
  std::ostringstream os;
  os.precision(10);
  os << "id,label,mean_confidence,verdict,reason\n";
  for (const auto& r : records) {
    os << r.id << ',' << (r.accepted ? r.label : r.classes[0]) << ',' << r.mean_confidence << ','
       << (r.accepted ? "accepted" : "rejected") << ',' << reject_reason_name(r.reason) << '\n';
  }
  return os.str();
}

SelfTrainReport self_train(const FeatureSource& unlabeled, std::span<const TrainingSample> labeled,
                           const Eigen::MatrixXd& text, double logit_scale,
                           const SelfTrainConfig& cfg,
                           std::span<const std::optional<int>> ground_truth) {
  if (!ground_truth.empty() && ground_truth.size() != unlabeled.size()) {
    throw ValidationError("ground truth must align with the unlabeled samples");
  }
  SelfTrainReport report;
  AdapterParams<double> start =
      init_adapter<double>(cfg.kind, text, cfg.alpha, cfg.train.seed, cfg.adapter);

  Predictor model;
  if (labeled.empty()) {
    model = [&](const Eigen::MatrixXd& f) { return predict_features(f, text, logit_scale).probs; };
  } else {
    auto first = train_adapter<double>(labeled, start, logit_scale, cfg.train);
    start = std::move(first.params);
    report.curve = std::move(first.curve);
    model = [&](const Eigen::MatrixXd& f) { return adapted_predict(f, start, logit_scale).probs; };
  }

  report.records = select_top_k(label_candidates(unlabeled, model, cfg.pseudo), cfg.pseudo);

  std::vector<TrainingSample> train_set(labeled.begin(), labeled.end());
  report.per_class_accepted.assign(static_cast<std::size_t>(text.rows()), 0);
  std::size_t correct = 0, judged = 0, plain_correct = 0, plain_judged = 0;
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    const bool has_truth = !ground_truth.empty() && ground_truth[i].has_value();
    if (has_truth) {
      ++plain_judged;
      if (r.classes[0] == *ground_truth[i]) ++plain_correct;
    }
    if (!r.accepted) continue;
    ++report.per_class_accepted[static_cast<std::size_t>(r.label)];
    if (has_truth) {
      ++judged;
      if (r.label == *ground_truth[i]) ++correct;
    }
    train_set.push_back({r.id, unlabeled.features(i, Augmentation::kIdentity), r.label});
  }
  const std::size_t accepted = train_set.size() - labeled.size();
  report.acceptance_rate =
      unlabeled.size() ? static_cast<double>(accepted) / static_cast<double>(unlabeled.size()) : 0.0;
  if (judged) report.purity = static_cast<double>(correct) / static_cast<double>(judged);
  if (plain_judged) {
    report.unfiltered_purity = static_cast<double>(plain_correct) / static_cast<double>(plain_judged);
  }
  if (accepted == 0) {
    std::size_t inconsistent = 0, low = 0;
    for (const auto& r : report.records) {
      if (r.reason == RejectReason::kInconsistent) ++inconsistent;
      if (r.reason == RejectReason::kLowConfidence) ++low;
    }
    throw RuntimeError("self_train: no pseudo-labels accepted out of " +
                       std::to_string(report.records.size()) + " samples (" +
                       std::to_string(inconsistent) + " inconsistent, " + std::to_string(low) +
                       " below confidence " + std::to_string(cfg.pseudo.conf_threshold) + ")");
  }

  auto second = train_adapter<double>(train_set, std::move(start), logit_scale, cfg.train);
  report.params = std::move(second.params);
  report.curve.insert(report.curve.end(), second.curve.begin(), second.curve.end());
  return report;
}

}  // namespace evclip
