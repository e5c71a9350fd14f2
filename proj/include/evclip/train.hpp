#pragma once

// Reverse-mode gradients of the aggregated cross-entropy through the
// cosine-softmax head, mean pooling, row normalization, residual mixing and
// the adapter networks; Adam; warmup + cosine schedule; few-shot sampling;
// the training loop.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evclip/adapter.hpp"

namespace evclip {

/// One training example: the per-window features of one stream.
struct TrainingSample {
  std::string id;
  Eigen::MatrixXd features;  // M x D
  int label = 0;
};

template <typename S>
struct LossGrad {
  S loss = S(0);
  AdapterParams<S> grad;
  Mat<S> d_features;  // gradient w.r.t. the input features
};

namespace detail {

template <typename S>
Mat<S> linear_backward(const Linear<S>& lin, const Mat<S>& x, const Mat<S>& dy, Linear<S>& g) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum();
  return dy * lin.weight.transpose();
}

template <typename S>
Mat<S> layer_norm_backward(const LayerNorm<S>& ln, const LayerNormCache<S>& c, const Mat<S>& dy,
                           LayerNorm<S>& g) {
  g.scale += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.shift += dy.colwise().sum();
  const S n = static_cast<S>(dy.cols());
  const Mat<S> dxhat = (dy.array().rowwise() * ln.scale.row(0).array()).matrix();
  const ColVec<S> mean_d = dxhat.rowwise().sum() / n;
  const ColVec<S> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / n;
  Mat<S> dx = dxhat.colwise() - mean_d;
  dx -= (c.xhat.array().colwise() * mean_dx.array()).matrix();
  return (dx.array().colwise() * c.inv_std.array()).matrix();
}

template <typename S>
Mat<S> self_attention_backward(const EncoderBlock<S>& blk, const TransformerShape& shape,
                               const BlockCache<S>& c, const Mat<S>& d_heads, EncoderBlock<S>& g) {
  const int dh = shape.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const auto m = d_heads.rows();
  Mat<S> dq(m, shape.width), dk(m, shape.width), dv(m, shape.width);
  for (int hd = 0; hd < shape.heads; ++hd) {
    const Mat<S>& a = c.attn[static_cast<std::size_t>(hd)];
    const auto d_out = d_heads.middleCols(hd * dh, dh);
    const Mat<S> da = d_out * c.v.middleCols(hd * dh, dh).transpose();
    dv.middleCols(hd * dh, dh) = a.transpose() * d_out;
    const ColVec<S> row_dot = (da.array() * a.array()).rowwise().sum().matrix();
    const Mat<S> ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(hd * dh, dh) = ds * c.k.middleCols(hd * dh, dh);
    dk.middleCols(hd * dh, dh) = ds.transpose() * c.q.middleCols(hd * dh, dh);
  }
  Mat<S> dh1 = linear_backward(blk.query, c.h1, dq, g.query);
  dh1 += linear_backward(blk.key, c.h1, dk, g.key);
  dh1 += linear_backward(blk.value, c.h1, dv, g.value);
  return dh1;
}

template <typename S>
Mat<S> encoder_block_backward(const EncoderBlock<S>& blk, const TransformerShape& shape,
                              const BlockCache<S>& c, const Mat<S>& d_out, EncoderBlock<S>& g) {
  Mat<S> d_act = linear_backward(blk.fc2, c.act, d_out, g.fc2);
  const Mat<S> d_pre =
      (d_act.array() * c.pre_act.unaryExpr([](S u) { return gelu_grad(u); }).array()).matrix();
  const Mat<S> dh2 = linear_backward(blk.fc1, c.h2, d_pre, g.fc1);
  Mat<S> dx1 = d_out + layer_norm_backward(blk.ln2, c.ln2, dh2, g.ln2);
  const Mat<S> d_heads = linear_backward(blk.attn_out, c.heads, dx1, g.attn_out);
  const Mat<S> dh1 = self_attention_backward(blk, shape, c, d_heads, g);
  return dx1 + layer_norm_backward(blk.ln1, c.ln1, dh1, g.ln1);
}

/// Gradient of transformer_encode; accumulates into g, returns dL/dF.
template <typename S>
Mat<S> transformer_encode_backward(const TransformerAdapter<S>& t, const TransformerCache<S>& c,
                                   const Mat<S>& d_encoded, TransformerAdapter<S>& g) {
  Mat<S> dz = linear_backward(t.out_proj, c.last, d_encoded, g.out_proj);
  for (std::size_t b = t.blocks.size(); b-- > 0;) {
    dz = encoder_block_backward(t.blocks[b], t.shape, c.blocks[b], dz, g.blocks[b]);
  }
  return linear_backward(t.in_proj, c.input, dz, g.in_proj);
}

template <typename S>
Mat<S> mlp_backward(const MlpAdapter<S>& m, const MlpCache<S>& c, const Mat<S>& features, S ratio,
                    const Mat<S>& d_out, MlpAdapter<S>& g) {
  const auto d = features.cols();
  Mat<S> d_features = ratio * d_out;
  const Mat<S> d_fused = (S(1) - ratio) * d_out;
  const Mat<S> d_pre = linear_backward(m.fuse, c.pre, d_fused, g.fuse);
  d_features += d_pre;
  const Mat<S> d_g = d_pre.colwise().sum();
  const Mat<S> d_flat = linear_backward(m.global, c.flat, d_g, g.global);
  for (Eigen::Index i = 0; i < features.rows(); ++i) d_features.row(i) += d_flat.block(0, i * d, 1, d);
  return d_features;
}

/// For y = x / |x| row-wise: dx = (dy - y <dy, y>) / |x|.
template <typename S>
Mat<S> normalize_rows_backward(const Mat<S>& y, const ColVec<S>& norms, const Mat<S>& dy) {
  const ColVec<S> dots = (dy.array() * y.array()).rowwise().sum().matrix();
  Mat<S> dx = dy - (y.array().colwise() * dots.array()).matrix();
  return (dx.array().colwise() / norms.array()).matrix();
}

}  // namespace detail

/// Loss of one sample; when `grad` is non-null the parameter gradient is
/// added to it and dL/dF is written to `d_features`.
template <typename S>
S accumulate_loss_grad(const Mat<S>& features, int label, const AdapterParams<S>& params,
                       S logit_scale, AdapterParams<S>* grad, Mat<S>* d_features) {
  const bool want_grad = grad != nullptr;
  const int k = params.num_classes();
  if (label < 0 || label >= k) {
    throw ValidationError("label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
  }
  if (features.cols() != params.text.cols()) {
    throw ValidationError("feature dim " + std::to_string(features.cols()) + " vs text dim " +
                          std::to_string(params.text.cols()));
  }
  const auto frames = features.rows();
  if (frames < 1) throw ValidationError("sample has no windows");

  TransformerCache<S> tcache;
  MlpCache<S> mcache;
  Mat<S> adapted;
  if (params.transformer) {
    adapted = params.alpha * features +
              (S(1) - params.alpha) *
                  transformer_encode(features, *params.transformer, want_grad ? &tcache : nullptr);
  } else if (params.mlp) {
    adapted = mlp_forward(features, *params.mlp, params.alpha, want_grad ? &mcache : nullptr);
  } else {
    adapted = features;
  }

  const ColVec<S> f_norms = adapted.rowwise().norm();
  const ColVec<S> w_norms = params.text.rowwise().norm();
  const Mat<S> fn = (adapted.array().colwise() / f_norms.array()).matrix();
  const Mat<S> wn = (params.text.array().colwise() / w_norms.array()).matrix();
  Mat<S> probs = logit_scale * fn * wn.transpose();  // M x K logits, then probabilities
  softmax_rows_inplace(probs);
  const ColVec<S> mean = probs.colwise().mean().transpose();

  const S p_label = mean(label);
  const S floor = static_cast<S>(kProbabilityFloor);
  const S loss = -std::log(std::max(p_label, floor));
  if (!want_grad) return loss;

  // d loss / d logits of window i = (g / M) * P_iy * (e_y - P_i).
  const S g = p_label > floor ? S(-1) / p_label : S(0);
  Mat<S> d_logits = -probs;
  d_logits.col(label).array() += S(1);
  d_logits = (d_logits.array().colwise() * (probs.col(label).array() * (g / static_cast<S>(frames))))
                 .matrix();

  const Mat<S> d_fn = logit_scale * d_logits * wn;
  const Mat<S> d_wn = logit_scale * d_logits.transpose() * fn;

  grad->text += detail::normalize_rows_backward(wn, w_norms, d_wn);
  const Mat<S> d_adapted = detail::normalize_rows_backward(fn, f_norms, d_fn);

  Mat<S> d_in;
  if (params.transformer) {
    d_in = params.alpha * d_adapted;
    d_in += detail::transformer_encode_backward(
        *params.transformer, tcache, Mat<S>((S(1) - params.alpha) * d_adapted), *grad->transformer);
  } else if (params.mlp) {
    d_in = detail::mlp_backward(*params.mlp, mcache, features, params.alpha, d_adapted, *grad->mlp);
  } else {
    d_in = d_adapted;
  }
  if (d_features) *d_features = std::move(d_in);
  return loss;
}

/// -log of the aggregated probability of `label`, probability clamped at
/// 1e-12. When `want_grad` is false the returned grad is empty.
template <typename S>
LossGrad<S> loss_and_grad(const Mat<S>& features, int label, const AdapterParams<S>& params,
                          S logit_scale, bool want_grad = true) {
  LossGrad<S> out;
  if (!want_grad) {
    out.loss = accumulate_loss_grad<S>(features, label, params, logit_scale, nullptr, nullptr);
    return out;
  }
  out.grad = zeros_like(params);
  out.loss = accumulate_loss_grad(features, label, params, logit_scale, &out.grad, &out.d_features);
  return out;
}

template <typename S>
S loss(const Mat<S>& features, int label, const AdapterParams<S>& params, S logit_scale) {
  return loss_and_grad(features, label, params, logit_scale, false).loss;
}

// ---------------------------------------------------------------------------
// Adam

template <typename S>
struct AdamState {
  AdapterParams<S> m;
  AdapterParams<S> v;
  std::int64_t step = 0;
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);

  explicit AdamState(const AdapterParams<S>& like) : m(zeros_like(like)), v(zeros_like(like)) {}
};

struct GroupRates {
  double visual = 0.0;
  double text = 0.0;
};

/// One bias-corrected Adam update of the groups params.trains(). Throws
/// before touching anything if a gradient is non-finite.
template <typename S>
void adam_step(AdapterParams<S>& params, const AdapterParams<S>& grads, AdamState<S>& state,
               const GroupRates& lr) {
  std::vector<Mat<S>*> p, m, v;
  std::vector<const Mat<S>*> g;
  std::vector<ParamGroup> groups;
  visit_tensors(params, [&](const std::string&, ParamGroup grp, Mat<S>& t) {
    p.push_back(&t);
    groups.push_back(grp);
  });
  visit_tensors(grads, [&](const std::string&, ParamGroup, const Mat<S>& t) { g.push_back(&t); });
  visit_tensors(state.m, [&](const std::string&, ParamGroup, Mat<S>& t) { m.push_back(&t); });
  visit_tensors(state.v, [&](const std::string&, ParamGroup, Mat<S>& t) { v.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ValidationError("adam_step: parameter / gradient structure mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]->rows() != p[i]->rows() || g[i]->cols() != p[i]->cols()) {
      throw ValidationError("adam_step: gradient shape mismatch");
    }
    if (params.trains(groups[i]) && !g[i]->allFinite()) {
      throw RuntimeError("adam_step: non-finite gradient");
    }
  }

  ++state.step;
  const S b1 = state.beta1;
  const S b2 = state.beta2;
  const S c1 = S(1) - std::pow(b1, static_cast<S>(state.step));
  const S c2 = S(1) - std::pow(b2, static_cast<S>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!params.trains(groups[i])) continue;
    const S rate = static_cast<S>(groups[i] == ParamGroup::kText ? lr.text : lr.visual);
    *m[i] = b1 * *m[i] + (S(1) - b1) * *g[i];
    *v[i] = b2 * *v[i] + (S(1) - b2) * g[i]->cwiseAbs2();
    p[i]->array() -= rate * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Schedule, sampling, loop

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double peak_lr_visual = 2e-4;
  /// Unset: 1e-3 when only text weights train, peak_lr_visual for joint.
  std::optional<double> peak_lr_text;
  double warmup_fraction = 0.05;
  std::uint64_t seed = 0;
};

GroupRates peak_rates(const TrainConfig& cfg, AdapterKind kind);

/// Linear warmup over ceil(warmup_fraction * total) steps to `peak`, then
/// cosine decay reaching 0 at `total`.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak, double warmup_fraction);

struct LabeledId {
  std::string id;
  int label = 0;
};

struct FewShotSelection {
  std::vector<std::size_t> indices;  // into the input, class-major
  std::vector<std::string> warnings;
};

/// `shots` random samples per class (all of them when a class is short, with
/// a warning). Ids listed in `exclude` are never selected.
FewShotSelection sample_few_shot(std::span<const LabeledId> dataset, int shots, std::uint64_t seed,
                                 std::span<const std::string> exclude = {});

struct LossPoint {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

template <typename S>
struct TrainResult {
  AdapterParams<S> params;
  std::vector<LossPoint> curve;
};

/// Epochs of shuffled mini-batches; each sample gets its own forward/backward
/// (variable window counts) and gradients are averaged over the batch.
template <typename S>
TrainResult<S> train_adapter(std::span<const TrainingSample> samples, AdapterParams<S> params,
                             double logit_scale, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(cfg.warmup_fraction > 0.0 && cfg.warmup_fraction < 1.0)) {
    throw ValidationError("warmup fraction must lie in (0,1)");
  }
  TrainResult<S> result{std::move(params), {}};
  if (cfg.epochs == 0) return result;
  if (samples.empty()) throw ValidationError("no training samples");

  const GroupRates peak = peak_rates(cfg, result.params.kind);
  if (!(peak.visual > 0.0 && peak.text > 0.0)) throw ValidationError("learning rates must be positive");
  const std::size_t n = samples.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const auto total = static_cast<std::int64_t>(batches_per_epoch) * cfg.epochs;

  std::vector<Mat<S>> features;
  features.reserve(n);
  for (const auto& s : samples) features.push_back(s.features.template cast<S>());

  AdamState<S> adam(result.params);
  AdapterParams<S> grad = zeros_like(result.params);
  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  const bool text_only = result.params.kind == AdapterKind::kText;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      visit_tensors(grad, [](const std::string&, ParamGroup, Mat<S>& t) { t.setZero(); });
      S batch_loss = S(0);
      for (std::size_t j = start; j < end; ++j) {
        batch_loss += accumulate_loss_grad(features[order[j]], samples[order[j]].label,
                                           result.params, static_cast<S>(logit_scale), &grad,
                                           static_cast<Mat<S>*>(nullptr));
      }
      const S count = static_cast<S>(end - start);
      batch_loss /= count;
      if (!std::isfinite(static_cast<double>(batch_loss))) {
        throw RuntimeError("training diverged: non-finite loss at step " + std::to_string(step));
      }
      visit_tensors(grad, [&](const std::string&, ParamGroup, Mat<S>& t) { t /= count; });
      ++step;
      const GroupRates lr{lr_at(step, total, peak.visual, cfg.warmup_fraction),
                          lr_at(step, total, peak.text, cfg.warmup_fraction)};
      adam_step(result.params, grad, adam, lr);
      result.curve.push_back({step, text_only ? lr.text : lr.visual, static_cast<double>(batch_loss)});
    }
  }
  return result;
}

/// "step,lr,loss" CSV.
std::string loss_curve_csv(std::span<const LossPoint> curve);

}  // namespace evclip
