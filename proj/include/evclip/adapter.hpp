#pragma once

// Feature adapters over frozen per-window embeddings:
//  * a permutation-equivariant transformer (pre-LN, no positional encoding)
//    mixed with the input through the residual ratio alpha,
//  * a fixed-capacity MLP baseline that concatenates frames into a global
//    feature (order-sensitive by construction),
//  * tunable text classifier weights.
// Parameters are dense Eigen matrices templated on the scalar type. Every
// tensor, biases included, is a Mat<S>; biases are 1 x n.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "evclip/error.hpp"
#include "evclip/rng.hpp"
#include "evclip/zeroshot.hpp"

namespace evclip {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct Linear {
  Mat<S> weight;  // in x out
  Mat<S> bias;    // 1 x out

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }
};

template <typename S>
struct LayerNorm {
  Mat<S> scale;  // 1 x width
  Mat<S> shift;  // 1 x width
};

template <typename S>
struct EncoderBlock {
  LayerNorm<S> ln1;
  Linear<S> query;
  Linear<S> key;
  Linear<S> value;
  Linear<S> attn_out;
  LayerNorm<S> ln2;
  Linear<S> fc1;
  Linear<S> fc2;
};

struct TransformerShape {
  int width = 256;
  int heads = 4;
  int mlp_hidden = 1024;
  int depth = 2;

  int head_dim() const { return width / heads; }
  friend bool operator==(const TransformerShape&, const TransformerShape&) = default;
};

template <typename S>
struct TransformerAdapter {
  TransformerShape shape;
  Linear<S> in_proj;  // D -> width
  std::vector<EncoderBlock<S>> blocks;
  Linear<S> out_proj;  // width -> D
};

template <typename S>
struct MlpAdapter {
  int max_frames = 8;
  Linear<S> global;  // (max_frames * D) -> D
  Linear<S> fuse;    // D -> D
};

enum class AdapterKind { kVisualTransformer, kVisualMlp, kText, kJoint };

AdapterKind parse_adapter_kind(std::string_view name);
std::string_view adapter_kind_name(AdapterKind kind);

/// Residual ratio defaults: one visual adapter 0.5, joint training 0.8.
double default_alpha(AdapterKind kind);

enum class ParamGroup { kVisual, kText };

/// Full model state. `text` is always present (K x D); it is frozen unless
/// the kind trains it. Exactly one of transformer / mlp is set for visual and
/// joint kinds.
template <typename S>
struct AdapterParams {
  AdapterKind kind = AdapterKind::kJoint;
  S alpha = S(1);
  std::optional<TransformerAdapter<S>> transformer;
  std::optional<MlpAdapter<S>> mlp;
  Mat<S> text;

  int dim() const { return static_cast<int>(text.cols()); }
  int num_classes() const { return static_cast<int>(text.rows()); }

  bool trains(ParamGroup g) const {
    if (g == ParamGroup::kText) return kind == AdapterKind::kText || kind == AdapterKind::kJoint;
    return kind != AdapterKind::kText;
  }
};

/// Calls f(name, group, tensor) for every tensor in declaration order:
/// transformer or MLP tensors first, text weights last. P may be const.
template <typename P, typename F>
void visit_tensors(P& params, F&& f) {
  auto lin = [&](std::string prefix, auto& l) {
    f(prefix + ".weight", ParamGroup::kVisual, l.weight);
    f(prefix + ".bias", ParamGroup::kVisual, l.bias);
  };
  if (params.transformer) {
    auto& t = *params.transformer;
    lin("in_proj", t.in_proj);
    for (std::size_t b = 0; b < t.blocks.size(); ++b) {
      auto& blk = t.blocks[b];
      const std::string p = "block" + std::to_string(b) + ".";
      f(p + "ln1.scale", ParamGroup::kVisual, blk.ln1.scale);
      f(p + "ln1.shift", ParamGroup::kVisual, blk.ln1.shift);
      lin(p + "query", blk.query);
      lin(p + "key", blk.key);
      lin(p + "value", blk.value);
      lin(p + "attn_out", blk.attn_out);
      f(p + "ln2.scale", ParamGroup::kVisual, blk.ln2.scale);
      f(p + "ln2.shift", ParamGroup::kVisual, blk.ln2.shift);
      lin(p + "fc1", blk.fc1);
      lin(p + "fc2", blk.fc2);
    }
    lin("out_proj", t.out_proj);
  }
  if (params.mlp) {
    lin("mlp.global", params.mlp->global);
    lin("mlp.fuse", params.mlp->fuse);
  }
  f(std::string("text"), ParamGroup::kText, params.text);
}

template <typename S>
std::size_t parameter_count(const AdapterParams<S>& params) {
  std::size_t n = 0;
  visit_tensors(params, [&](const std::string&, ParamGroup, const Mat<S>& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

/// Same structure, every tensor zero.
template <typename S>
AdapterParams<S> zeros_like(const AdapterParams<S>& params) {
  AdapterParams<S> out = params;
  visit_tensors(out, [](const std::string&, ParamGroup, Mat<S>& m) { m.setZero(); });
  return out;
}

struct AdapterOptions {
  TransformerShape shape;
  int mlp_max_frames = 8;
};

/// Xavier-uniform projections except the zeroed output projection, zero
/// biases, unit LayerNorm scale. The text
/// weights start as an exact copy of `text`.
template <typename S>
AdapterParams<S> init_adapter(AdapterKind kind, const Mat<S>& text, double alpha,
                              std::uint64_t seed, const AdapterOptions& opts = {}) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
  const auto& shape = opts.shape;
  if (shape.width < 1 || shape.heads < 1 || shape.width % shape.heads != 0) {
    throw ValidationError("transformer width must be a positive multiple of the head count");
  }
  if (opts.mlp_max_frames < 1) throw ValidationError("MLP adapter capacity must be >= 1");

  AdapterParams<S> p;
  p.kind = kind;
  p.alpha = static_cast<S>(alpha);
  p.text = text;
  const int d = static_cast<int>(text.cols());
  Rng rng(mix_seed(seed, 0x61646170ULL));

  auto xavier = [&](int in, int out) {
    const double limit = std::sqrt(6.0 / (in + out));
    Linear<S> l{Mat<S>(in, out), Mat<S>::Zero(1, out)};
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
        l.weight(i, j) = static_cast<S>(rng.uniform(-limit, limit));
      }
    }
    return l;
  };
  auto layer_norm = [&](int width) {
    return LayerNorm<S>{Mat<S>::Ones(1, width), Mat<S>::Zero(1, width)};
  };

  if (kind == AdapterKind::kVisualTransformer || kind == AdapterKind::kJoint) {
    TransformerAdapter<S> t;
    t.shape = shape;
    t.in_proj = xavier(d, shape.width);
    for (int b = 0; b < shape.depth; ++b) {
      EncoderBlock<S> blk;
      blk.ln1 = layer_norm(shape.width);
      blk.query = xavier(shape.width, shape.width);
      blk.key = xavier(shape.width, shape.width);
      blk.value = xavier(shape.width, shape.width);
      blk.attn_out = xavier(shape.width, shape.width);
      blk.ln2 = layer_norm(shape.width);
      blk.fc1 = xavier(shape.width, shape.mlp_hidden);
      blk.fc2 = xavier(shape.mlp_hidden, shape.width);
      t.blocks.push_back(std::move(blk));
    }
    // Output projections start at zero so an untrained adapter reproduces zero-shot.
    t.out_proj = Linear<S>{Mat<S>::Zero(shape.width, d), Mat<S>::Zero(1, d)};
    p.transformer = std::move(t);
  } else if (kind == AdapterKind::kVisualMlp) {
    MlpAdapter<S> m;
    m.max_frames = opts.mlp_max_frames;
    m.global = xavier(opts.mlp_max_frames * d, d);
    m.fuse = Linear<S>{Mat<S>::Zero(d, d), Mat<S>::Zero(1, d)};
    p.mlp = std::move(m);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass. The *Cache structs hold the intermediates the backward pass
// in train.hpp needs; pass nullptr for inference.

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  ColVec<S> inv_std;
};

template <typename S>
struct BlockCache {
  LayerNormCache<S> ln1;
  Mat<S> h1;  // LN1 output
  Mat<S> q, k, v;
  std::vector<Mat<S>> attn;  // per head, M x M row-stochastic
  Mat<S> heads;              // concatenated head outputs
  LayerNormCache<S> ln2;
  Mat<S> h2;  // LN2 output
  Mat<S> pre_act;
  Mat<S> act;
};

template <typename S>
struct TransformerCache {
  Mat<S> input;
  std::vector<BlockCache<S>> blocks;
  Mat<S> last;  // encoder output before out_proj
  Mat<S> encoded;
};

template <typename S>
struct MlpCache {
  Mat<S> flat;  // 1 x (max_frames * D)
  Mat<S> pre;   // M x D, f_i + g
};

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  return cdf + x * pdf;
}

template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, const LayerNorm<S>& ln, LayerNormCache<S>* cache) {
  const S n = static_cast<S>(x.cols());
  const ColVec<S> mean = x.rowwise().sum() / n;
  Mat<S> centered = x.colwise() - mean;
  const ColVec<S> var = centered.array().square().rowwise().sum().matrix() / n;
  const ColVec<S> inv_std = (var.array() + static_cast<S>(kLayerNormEps)).rsqrt().matrix();
  Mat<S> xhat = centered.array().colwise() * inv_std.array();
  Mat<S> y = (xhat.array().rowwise() * ln.scale.row(0).array()).matrix();
  y.rowwise() += ln.shift.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

template <typename S>
void softmax_rows_inplace(Mat<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

/// Multi-head self-attention over all rows; no mask.
template <typename S>
Mat<S> self_attention(const EncoderBlock<S>& blk, const TransformerShape& shape, const Mat<S>& h,
                      BlockCache<S>* cache) {
  Mat<S> q = blk.query.forward(h);
  Mat<S> k = blk.key.forward(h);
  Mat<S> v = blk.value.forward(h);
  const int dh = shape.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> heads(h.rows(), shape.width);
  if (cache) cache->attn.resize(static_cast<std::size_t>(shape.heads));
  for (int hd = 0; hd < shape.heads; ++hd) {
    Mat<S> a = (q.middleCols(hd * dh, dh) * k.middleCols(hd * dh, dh).transpose()) * scale;
    softmax_rows_inplace(a);
    heads.middleCols(hd * dh, dh) = a * v.middleCols(hd * dh, dh);
    if (cache) cache->attn[static_cast<std::size_t>(hd)] = std::move(a);
  }
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->heads = heads;
  }
  return blk.attn_out.forward(heads);
}

/// Pre-LN encoder block: x + Attn(LN1(x)), then + MLP(LN2(.)).
template <typename S>
Mat<S> encoder_block_forward(const EncoderBlock<S>& blk, const TransformerShape& shape,
                             const Mat<S>& x, BlockCache<S>* cache) {
  LayerNormCache<S>* ln1 = cache ? &cache->ln1 : nullptr;
  LayerNormCache<S>* ln2 = cache ? &cache->ln2 : nullptr;
  Mat<S> h1 = layer_norm_forward(x, blk.ln1, ln1);
  Mat<S> x1 = x + self_attention(blk, shape, h1, cache);
  Mat<S> h2 = layer_norm_forward(x1, blk.ln2, ln2);
  Mat<S> pre = blk.fc1.forward(h2);
  Mat<S> act = pre.unaryExpr([](S u) { return gelu(u); });
  Mat<S> out = x1 + blk.fc2.forward(act);
  if (cache) {
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

/// The raw transformer output out_proj(encoder(in_proj(F))), before mixing.
template <typename S>
Mat<S> transformer_encode(const Mat<S>& features, const TransformerAdapter<S>& t,
                          TransformerCache<S>* cache = nullptr) {
  if (features.cols() != t.in_proj.weight.rows()) {
    throw ValidationError("transformer adapter expects dim " +
                          std::to_string(t.in_proj.weight.rows()) + ", got " +
                          std::to_string(features.cols()));
  }
  if (features.rows() < 1) throw ValidationError("transformer adapter needs at least one frame");
  Mat<S> z = t.in_proj.forward(features);
  if (cache) {
    cache->input = features;
    cache->blocks.resize(t.blocks.size());
  }
  for (std::size_t b = 0; b < t.blocks.size(); ++b) {
    z = encoder_block_forward(t.blocks[b], t.shape, z, cache ? &cache->blocks[b] : nullptr);
  }
  Mat<S> encoded = t.out_proj.forward(z);
  if (cache) {
    cache->last = std::move(z);
    cache->encoded = encoded;
  }
  return encoded;
}

/// alpha * F + (1 - alpha) * transformer_encode(F).
template <typename S>
Mat<S> transformer_forward(const Mat<S>& features, const TransformerAdapter<S>& t, S alpha,
                           TransformerCache<S>* cache = nullptr) {
  return alpha * features + (S(1) - alpha) * transformer_encode(features, t, cache);
}

/// g = global(zero-padded concat of rows); out_i = ratio f_i + (1-ratio) fuse(f_i + g).
template <typename S>
Mat<S> mlp_forward(const Mat<S>& features, const MlpAdapter<S>& m, S ratio,
                   MlpCache<S>* cache = nullptr) {
  const auto frames = features.rows();
  const auto d = features.cols();
  if (frames < 1) throw ValidationError("MLP adapter needs at least one frame");
  if (frames > m.max_frames) {
    throw ValidationError("MLP adapter holds at most " + std::to_string(m.max_frames) +
                          " frames, got " + std::to_string(frames));
  }
  if (m.fuse.weight.rows() != d) {
    throw ValidationError("MLP adapter expects dim " + std::to_string(m.fuse.weight.rows()) +
                          ", got " + std::to_string(d));
  }
  Mat<S> flat = Mat<S>::Zero(1, m.max_frames * d);
  for (Eigen::Index i = 0; i < frames; ++i) flat.block(0, i * d, 1, d) = features.row(i);
  const Mat<S> g = m.global.forward(flat);
  Mat<S> pre = features;
  pre.rowwise() += g.row(0);
  Mat<S> out = ratio * features + (S(1) - ratio) * m.fuse.forward(pre);
  if (cache) {
    cache->flat = std::move(flat);
    cache->pre = std::move(pre);
  }
  return out;
}

/// Row indices of `m` in lexicographic order.
template <typename S>
std::vector<Eigen::Index> lexicographic_rows(const Mat<S>& m) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(a, j) != m(b, j)) return m(a, j) < m(b, j);
    }
    return false;
  });
  return order;
}

/// Visual-adapter output for any kind (identity for text-only). The
/// transformer sees its windows in lexicographic order so attention sums run
/// in a fixed order and shuffled windows give bit-identical rows.
template <typename S>
Mat<S> adapt_features(const Mat<S>& features, const AdapterParams<S>& params) {
  if (params.transformer) {
    const auto order = lexicographic_rows(features);
    Mat<S> sorted(features.rows(), features.cols());
    for (std::size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = features.row(order[i]);
    const Mat<S> out = transformer_forward(sorted, *params.transformer, params.alpha);
    Mat<S> restored(out.rows(), out.cols());
    for (std::size_t i = 0; i < order.size(); ++i) restored.row(order[i]) = out.row(static_cast<Eigen::Index>(i));
    return restored;
  }
  if (params.mlp) return mlp_forward(features, *params.mlp, params.alpha);
  return features;
}

/// Adapted features and tuned text weights through the zero-shot classifier.
template <typename S>
Prediction adapted_predict(const Mat<S>& features, const AdapterParams<S>& params,
                           double logit_scale) {
  if (features.cols() != params.text.cols()) {
    throw ValidationError("feature dim " + std::to_string(features.cols()) + " vs text dim " +
                          std::to_string(params.text.cols()));
  }
  const Mat<S> adapted = adapt_features(features, params);
  return predict_features(adapted.template cast<double>(), params.text.template cast<double>(),
                          logit_scale);
}

/// ADP1 checkpoint: header, per-tensor shapes, then f64 tensors (column-major)
/// in visit_tensors order.
Bytes write_checkpoint(const AdapterParams<double>& params);
AdapterParams<double> read_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace evclip
