#pragma once

// Cosine-softmax classification per window, order-invariant mean pooling over
// windows, and logit ensembling with an external classifier.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "evclip/binary_io.hpp"
#include "evclip/error.hpp"
#include "evclip/events.hpp"
#include "evclip/frames.hpp"

namespace evclip {

using ClassProbabilities = Eigen::VectorXd;

inline constexpr double kProbabilityFloor = 1e-12;

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_rows(
    const Eigen::MatrixBase<Derived>& m) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

/// Max-subtracted softmax.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  const S top = logits.maxCoeff();
  Eigen::Matrix<S, Eigen::Dynamic, 1> e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

/// Lowest index among maximal entries.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

/// softmax(logit_scale * W f). `f` and the rows of `text` must be unit norm.
ClassProbabilities classify_window(const Eigen::VectorXd& f, const Eigen::MatrixXd& text,
                                   double logit_scale);

/// Class-wise mean. Windows are reduced in a canonical (sorted) order with
/// pairwise summation, so any permutation of the input gives identical bits.
ClassProbabilities aggregate(std::span<const ClassProbabilities> per_window);

struct Prediction {
  int label = 0;
  ClassProbabilities probs;
};

/// Normalizes rows of both inputs, classifies every window, aggregates.
Prediction predict_features(const Eigen::MatrixXd& features, const Eigen::MatrixXd& text,
                            double logit_scale);

/// As predict_features, checking that the features match the stream's windows.
Prediction predict(const EventStream& stream, const WindowingConfig& cfg,
                   const Eigen::MatrixXd& text, const Eigen::MatrixXd& features,
                   double logit_scale);

/// log(max(p, 1e-12)), used as this classifier's logits when ensembling.
Eigen::VectorXd probability_logits(const ClassProbabilities& probs);

struct EnsembleConfig {
  double lambda = 0.5;  // weight on the external classifier
};

Prediction ensemble(const Eigen::VectorXd& ours, const Eigen::VectorXd& external,
                    const EnsembleConfig& cfg);

/// LGT1 external classifier logits, aligned with evaluation samples by id.
struct LogitTable {
  std::vector<std::string> ids;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> logits;  // R x K

  int num_classes() const { return static_cast<int>(logits.cols()); }
  Eigen::VectorXd row(std::string_view id) const;

  void build_index();

 private:
  std::unordered_map<std::string, Eigen::Index> index_;
};

Bytes write_logits(const LogitTable& table);
LogitTable read_logits(std::span<const std::uint8_t> bytes);

}  // namespace evclip
