#include "evclip/zeroshot.hpp"

namespace evclip {
namespace {

Eigen::VectorXd pairwise_sum(std::span<const ClassProbabilities* const> items) {
  if (items.size() == 1) return *items.front();
  const std::size_t half = items.size() / 2;
  return pairwise_sum(items.first(half)) + pairwise_sum(items.subspan(half));
}

}  // namespace

ClassProbabilities classify_window(const Eigen::VectorXd& f, const Eigen::MatrixXd& text,
                                   double logit_scale) {
  if (text.cols() != f.size()) {
    throw ValidationError("classify_window: feature dim " + std::to_string(f.size()) +
                          " vs text dim " + std::to_string(text.cols()));
  }
  if (text.rows() < 2) throw ValidationError("classify_window: need at least 2 classes");
  return softmax(logit_scale * (text * f));
}

ClassProbabilities aggregate(std::span<const ClassProbabilities> per_window) {
  if (per_window.empty()) throw ValidationError("aggregate: no windows");
  const auto k = per_window.front().size();
  std::vector<const ClassProbabilities*> order;
  order.reserve(per_window.size());
  for (const auto& p : per_window) {
    if (p.size() != k) throw ValidationError("aggregate: inconsistent class counts");
    order.push_back(&p);
  }
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return std::lexicographical_compare(a->data(), a->data() + a->size(), b->data(),
                                        b->data() + b->size());
  });
  return pairwise_sum(order) / static_cast<double>(per_window.size());
}

Prediction predict_features(const Eigen::MatrixXd& features, const Eigen::MatrixXd& text,
                            double logit_scale) {
  if (features.rows() == 0) throw ValidationError("predict: sample has no windows");
  const Eigen::MatrixXd f = normalize_rows(features);
  const Eigen::MatrixXd w = normalize_rows(text);
  std::vector<ClassProbabilities> per_window;
  per_window.reserve(static_cast<std::size_t>(f.rows()));
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    per_window.push_back(classify_window(f.row(i).transpose(), w, logit_scale));
  }
  Prediction out;
  out.probs = aggregate(per_window);
  out.label = argmax(out.probs);
  return out;
}

Prediction predict(const EventStream& stream, const WindowingConfig& cfg,
                   const Eigen::MatrixXd& text, const Eigen::MatrixXd& features,
                   double logit_scale) {
  const auto windows = window_events(stream, cfg);
  if (windows.size() != static_cast<std::size_t>(features.rows())) {
    throw ValidationError("predict: stream \"" + stream.id + "\" has " +
                          std::to_string(windows.size()) + " windows but " +
                          std::to_string(features.rows()) + " feature rows");
  }
  return predict_features(features, text, logit_scale);
}

Eigen::VectorXd probability_logits(const ClassProbabilities& probs) {
  return probs.array().max(kProbabilityFloor).log().matrix();
}

Prediction ensemble(const Eigen::VectorXd& ours, const Eigen::VectorXd& external,
                    const EnsembleConfig& cfg) {
  if (ours.size() != external.size()) {
    throw ValidationError("ensemble: " + std::to_string(ours.size()) + " vs " +
                          std::to_string(external.size()) + " classes");
  }
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) {
    throw ValidationError("ensemble: lambda must lie in [0,1]");
  }
  if (!ours.allFinite() || !external.allFinite()) {
    throw ValidationError("ensemble: non-finite logits");
  }
  const Eigen::VectorXd combined = (1.0 - cfg.lambda) * ours + cfg.lambda * external;
  Prediction out;
  out.probs = softmax(combined);
  out.label = argmax(combined);
  return out;
}

void LogitTable::build_index() {
  index_.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index_.emplace(ids[i], static_cast<Eigen::Index>(i)).second) {
      throw ValidationError("LGT1: duplicate id \"" + ids[i] + "\"");
    }
  }
}

Eigen::VectorXd LogitTable::row(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) {
    throw ValidationError("LGT1: no logits for id \"" + std::string(id) + "\"");
  }
  return logits.row(it->second).cast<double>().transpose();
}

Bytes write_logits(const LogitTable& table) {
  if (static_cast<std::size_t>(table.logits.rows()) != table.ids.size()) {
    throw ValidationError("LGT1: id count does not match logit rows");
  }
  ByteWriter w;
  w.put_magic("LGT1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.logits.cols()));
  w.put<std::uint64_t>(table.ids.size());
  for (const auto& id : table.ids) w.put_string16(id);
  w.put_array(std::span<const float>(table.logits.data(), static_cast<std::size_t>(table.logits.size())));
  return std::move(w).bytes();
}

LogitTable read_logits(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "LGT1");
  r.expect_magic("LGT1");
  const auto k = r.get<std::uint32_t>();
  const auto rows = r.get<std::uint64_t>();
  if (rows > r.remaining() / 2) throw ValidationError("LGT1: truncated id section");
  LogitTable t;
  t.ids.reserve(static_cast<std::size_t>(rows));
  for (std::uint64_t i = 0; i < rows; ++i) t.ids.push_back(r.get_string16());
  if (r.remaining() != rows * k * sizeof(float)) {
    throw ValidationError("LGT1: payload does not match " + std::to_string(rows) + "x" +
                          std::to_string(k) + " logits");
  }
  t.logits.resize(static_cast<Eigen::Index>(rows), k);
  r.get_array(std::span<float>(t.logits.data(), static_cast<std::size_t>(t.logits.size())));
  for (Eigen::Index i = 0; i < t.logits.rows(); ++i) {
    if (!t.logits.row(i).allFinite()) {
      throw ValidationError("LGT1: non-finite logit in row " + std::to_string(i));
    }
  }
  t.build_index();
  return t;
}

}  // namespace evclip
