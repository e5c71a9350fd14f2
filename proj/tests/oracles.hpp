#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evclip/adapter.hpp"
#include "evclip/events.hpp"
#include "evclip/frames.hpp"
#include "evclip/rng.hpp"

namespace evclip::testing {

/// Per-event counting into plain nested vectors.
struct CountOracle {
  std::vector<std::vector<int>> pos, neg;  // [y][x]
};

inline CountOracle count_events(const std::vector<Event>& events, int width, int height) {
  CountOracle o{std::vector<std::vector<int>>(height, std::vector<int>(width, 0)),
                std::vector<std::vector<int>>(height, std::vector<int>(width, 0))};
  for (const auto& e : events) {
    if (e.p == 1) {
      o.pos[e.y][e.x] += 1;
    } else {
      o.neg[e.y][e.x] += 1;
    }
  }
  return o;
}

inline bool matches(const Histogram2& h, const CountOracle& o) {
  for (int y = 0; y < h.height(); ++y) {
    for (int x = 0; x < h.width(); ++x) {
      if (h.pos(y, x) != o.pos[y][x] || h.neg(y, x) != o.neg[y][x]) return false;
    }
  }
  return true;
}

/// Textbook softmax in long double, no max subtraction.
inline std::vector<double> softmax_oracle(const std::vector<double>& logits) {
  long double z = 0;
  for (double l : logits) z += std::exp(static_cast<long double>(l));
  std::vector<double> out;
  for (double l : logits) out.push_back(static_cast<double>(std::exp(static_cast<long double>(l)) / z));
  return out;
}

inline EventStream random_stream(Rng& rng, int max_events, int max_side) {
  const auto w = static_cast<std::uint16_t>(rng.uniform_int(1, max_side));
  const auto h = static_cast<std::uint16_t>(rng.uniform_int(1, max_side));
  const auto n = rng.uniform_int(0, max_events);
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    events.push_back({static_cast<std::uint16_t>(rng.uniform_int(0, w - 1)),
                      static_cast<std::uint16_t>(rng.uniform_int(0, h - 1)),
                      static_cast<std::uint64_t>(rng.uniform_int(0, 1'000'000)),
                      static_cast<std::int8_t>(rng.uniform_int(0, 1) ? 1 : -1)});
  }
  return make_stream(w, h, std::move(events), "rand");
}

/// Random unit rows.
inline Mat<double> random_unit_rows(Rng& rng, int rows, int cols) {
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    m.row(i).normalize();
  }
  return m;
}

/// Moves every parameter away from its structured initial value (unit LN
/// scales, zero biases) so all gradient paths are generic.
inline void perturb(AdapterParams<double>& p, Rng& rng, double scale) {
  visit_tensors(p, [&](const std::string&, ParamGroup, Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += scale * rng.normal();
  });
}

struct FdResult {
  double worst_relative = 0.0;
  std::string worst_tensor;
  int checked = 0;
};

/// Central finite differences of `loss_fn(params)` against `analytic` on
/// `per_tensor` random entries plus the largest-gradient entry of every tensor.
/// The relative error denominator is max(|analytic|, |numeric|, floor), so
/// gradients below `floor` are held to an absolute bound of 1e-4 * floor.
template <typename LossFn>
FdResult finite_difference_check(AdapterParams<double> params, const AdapterParams<double>& analytic,
                                 LossFn&& loss_fn, Rng& rng, int per_tensor, double h = 1e-5,
                                 double floor = 1e-5) {
  std::vector<Mat<double>*> values;
  std::vector<const Mat<double>*> grads;
  std::vector<std::string> names;
  visit_tensors(params, [&](const std::string& n, ParamGroup, Mat<double>& m) {
    values.push_back(&m);
    names.push_back(n);
  });
  visit_tensors(analytic, [&](const std::string&, ParamGroup, const Mat<double>& m) { grads.push_back(&m); });

  FdResult res;
  for (std::size_t t = 0; t < values.size(); ++t) {
    Mat<double>& v = *values[t];
    const Mat<double>& g = *grads[t];
    std::vector<Eigen::Index> entries;
    Eigen::Index largest = 0;
    g.cwiseAbs().reshaped().maxCoeff(&largest);
    entries.push_back(largest);
    for (int i = 0; i < per_tensor; ++i) entries.push_back(rng.uniform_int(0, v.size() - 1));
    for (const auto idx : entries) {
      const double saved = v.data()[idx];
      v.data()[idx] = saved + h;
      const double up = loss_fn(params);
      v.data()[idx] = saved - h;
      const double down = loss_fn(params);
      v.data()[idx] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = g.data()[idx];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = std::abs(a - numeric) / std::max(scale, floor);
      ++res.checked;
      if (rel > res.worst_relative) {
        res.worst_relative = rel;
        res.worst_tensor = names[t];
      }
    }
  }
  return res;
}

/// Pearson chi-square statistic of a contingency table and its degrees of
/// freedom. Columns with a zero total are skipped.
inline std::pair<double, int> chi_square_independence(const std::vector<std::vector<double>>& t) {
  const std::size_t rows = t.size(), cols = t.at(0).size();
  std::vector<double> rsum(rows, 0.0), csum(cols, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      rsum[i] += t[i][j];
      csum[j] += t[i][j];
      total += t[i][j];
    }
  }
  double stat = 0;
  int used_cols = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (csum[j] == 0) continue;
    ++used_cols;
    for (std::size_t i = 0; i < rows; ++i) {
      const double expected = rsum[i] * csum[j] / total;
      stat += (t[i][j] - expected) * (t[i][j] - expected) / expected;
    }
  }
  return {stat, static_cast<int>(rows - 1) * (used_cols - 1)};
}

/// P(X > x) for X ~ chi-square(df), Wilson-Hilferty cube-root approximation
/// (accurate to ~1e-3 for df in the hundreds).
inline double chi_square_upper_tail(double x, int df) {
  const double k = df;
  const double z = (std::cbrt(x / k) - (1 - 2 / (9 * k))) / std::sqrt(2 / (9 * k));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace evclip::testing
