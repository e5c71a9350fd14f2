#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "evclip/embed.hpp"
#include "evclip/error.hpp"
#include "evclip/zeroshot.hpp"
#include "oracles.hpp"

namespace evclip {
namespace {

// Unit vectors f and rows of W with prescribed cosines: W = [c_i, sqrt(1-c_i^2) e_{i+1}].
std::pair<Eigen::VectorXd, Eigen::MatrixXd> with_cosines(const std::vector<double>& cos) {
  const auto k = static_cast<Eigen::Index>(cos.size());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(k + 1);
  f(0) = 1.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, k + 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    w(i, 0) = cos[static_cast<std::size_t>(i)];
    w(i, i + 1) = std::sqrt(1.0 - cos[static_cast<std::size_t>(i)] * cos[static_cast<std::size_t>(i)]);
  }
  return {f, w};
}

TEST(ClassifyWindow, WorkedExample) {
  const auto [f, w] = with_cosines({0.5, 0.3});
  const auto p = classify_window(f, w, 1.0);
  EXPECT_NEAR(p(0), 0.549834, 1e-6);
  EXPECT_NEAR(p(1), 0.450166, 1e-6);
}

TEST(ClassifyWindow, MatchesSoftmaxOracle) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> cos;
    const int k = static_cast<int>(rng.uniform_int(2, 8));
    for (int i = 0; i < k; ++i) cos.push_back(rng.uniform(-1, 1));
    const double scale = rng.uniform(1, 100);
    const auto [f, w] = with_cosines(cos);
    std::vector<double> logits;
    for (double c : cos) logits.push_back(scale * c);
    const auto want = testing::softmax_oracle(logits);
    const auto got = classify_window(f, w, scale);
    for (int i = 0; i < k; ++i) EXPECT_NEAR(got(i), want[static_cast<std::size_t>(i)], 1e-12);
    EXPECT_NEAR(got.sum(), 1.0, 1e-9);
  }
}

TEST(ClassifyWindow, EqualCosinesUniform) {
  const auto [f, w] = with_cosines({0.2, 0.2, 0.2, 0.2});
  const auto p = classify_window(f, w, 100.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p(i), 0.25, 1e-15);
}

TEST(ClassifyWindow, TwoClassLogistic) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), s = rng.uniform(0.5, 100);
    const auto [f, w] = with_cosines({a, b});
    EXPECT_NEAR(classify_window(f, w, s)(0), 1.0 / (1.0 + std::exp(-s * (a - b))), 1e-12);
  }
}

TEST(ClassifyWindow, ScaleInvariantArgmax) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto w = testing::random_unit_rows(rng, 7, 12);
    const Eigen::VectorXd f = testing::random_unit_rows(rng, 1, 12).row(0).transpose();
    const int a = argmax(classify_window(f, w, 1.0));
    EXPECT_EQ(argmax(classify_window(f, w, 10.0)), a);
    EXPECT_EQ(argmax(classify_window(f, w, 100.0)), a);
  }
}

TEST(ClassifyWindow, Errors) {
  EXPECT_THROW(classify_window(Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Ones(2, 4), 1.0),
               ValidationError);
  EXPECT_THROW(classify_window(Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Ones(1, 3), 1.0),
               ValidationError);
}

TEST(Argmax, LowestIndexOnTies) {
  Eigen::VectorXd v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  EXPECT_EQ(argmax(v), 1);
}

TEST(Aggregate, MeanAndIdentity) {
  std::vector<ClassProbabilities> p{Eigen::Vector2d(0.8, 0.2), Eigen::Vector2d(0.6, 0.4)};
  const auto m = aggregate(p);
  EXPECT_NEAR(m(0), 0.7, 1e-15);
  EXPECT_NEAR(m(1), 0.3, 1e-15);
  std::vector<ClassProbabilities> one{Eigen::Vector3d(0.1, 0.2, 0.7)};
  EXPECT_EQ(aggregate(one), one[0]);
  EXPECT_THROW(aggregate(std::vector<ClassProbabilities>{}), ValidationError);
}

TEST(Aggregate, PermutationBitExact) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const int m = static_cast<int>(rng.uniform_int(2, 12));
    std::vector<ClassProbabilities> p;
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd logits(5);
      for (int j = 0; j < 5; ++j) logits(j) = 10 * rng.normal();
      p.push_back(softmax(logits));
    }
    const auto ref = aggregate(p);
    for (int r = 0; r < 5; ++r) {
      rng.shuffle(p.begin(), p.end());
      const auto got = aggregate(p);
      EXPECT_EQ(std::memcmp(got.data(), ref.data(), sizeof(double) * 5), 0);
    }
  }
}

TEST(Predict, DuplicateWindowsAndCountCheck) {
  Rng rng(5);
  const auto text = testing::random_unit_rows(rng, 4, 8);
  const auto f = testing::random_unit_rows(rng, 1, 8);
  Eigen::MatrixXd twice(2, 8);
  twice << f, f;
  const auto a = predict_features(f, text, 50);
  const auto b = predict_features(twice, text, 50);
  EXPECT_EQ(a.label, b.label);
  EXPECT_TRUE(a.probs.isApprox(b.probs, 1e-15));

  const auto s = make_stream(2, 2, {{0, 0, 0, 1}, {1, 1, 1, 1}, {1, 0, 2, -1}});
  EXPECT_NO_THROW(predict(s, WindowingConfig{3}, text, f, 50));
  EXPECT_THROW(predict(s, WindowingConfig{3}, text, twice, 50), ValidationError);
}

TEST(Predict, CleanSyntheticIsPerfect) {
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 20;
  const auto data = gen_synthetic(spec);
  const SyntheticEncoder enc(64, 0);
  const auto text = synthetic_text_weights(spec.num_classes, enc);
  const WindowingConfig cfg;
  for (const auto& s : data) {
    EXPECT_EQ(predict(s, cfg, text, encode_stream(s, cfg, enc), kDefaultLogitScale).label, *s.label)
        << s.id;
  }
}

TEST(Ensemble, Endpoints) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd p(6), ext(6);
    for (int i = 0; i < 6; ++i) {
      p(i) = rng.uniform();
      ext(i) = 5 * rng.normal();
    }
    p /= p.sum();
    const auto ours = probability_logits(p);
    EXPECT_EQ(ensemble(ours, ext, {0.0}).label, argmax(p));
    EXPECT_EQ(ensemble(ours, ext, {1.0}).label, argmax(ext));
    EXPECT_NEAR(ensemble(ours, ext, {0.5}).probs.sum(), 1.0, 1e-12);
  }
}

TEST(Ensemble, TieGoesToLowestClass) {
  const auto r = ensemble(Eigen::Vector2d(2, 0), Eigen::Vector2d(0, 2), {0.5});
  EXPECT_EQ(r.label, 0);
  EXPECT_NEAR(r.probs(0), 0.5, 1e-15);
}

TEST(Ensemble, Errors) {
  EXPECT_THROW(ensemble(Eigen::Vector2d(1, 0), Eigen::Vector3d(0, 1, 0), {}), ValidationError);
  EXPECT_THROW(ensemble(Eigen::Vector2d(1, NAN), Eigen::Vector2d(0, 1), {}), ValidationError);
  EXPECT_THROW(ensemble(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), {1.5}), ValidationError);
}

TEST(ProbabilityLogits, FloorClamp) {
  const auto l = probability_logits(Eigen::Vector2d(1.0, 0.0));
  EXPECT_EQ(l(0), 0.0);
  EXPECT_NEAR(l(1), std::log(1e-12), 1e-12);
}

TEST(Lgt1, RoundTripAndLookup) {
  LogitTable t;
  t.ids = {"a", "b", "c"};
  t.logits.resize(3, 4);
  t.logits << 1, 2, 3, 4, 5, 6, 7, 8, -1, -2, -3, -4;
  const auto bytes = write_logits(t);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LGT1");
  const auto back = read_logits(bytes);
  EXPECT_EQ(back.ids, t.ids);
  EXPECT_EQ(back.logits, t.logits);
  EXPECT_EQ(back.row("b")(2), 7.0);
  EXPECT_THROW(back.row("missing"), ValidationError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(read_logits(truncated), ValidationError);
}

}  // namespace
}  // namespace evclip
