#include "evclip/embed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "evclip/rng.hpp"

namespace evclip {
namespace {

constexpr std::uint32_t kEmbVersion = 1;

// Weights mapping `in` unit cells onto `out` equal bins; each row sums to 1.
Eigen::MatrixXd area_weights(int out, int in) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
  const double step = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * step;
    const double hi = (o + 1) * step;
    for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
      const double overlap = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
      if (overlap > 0) w(o, i) = overlap / step;
    }
  }
  return w;
}

}  // namespace

Bytes write_embeddings(const EmbeddingSet& set) {
  if (static_cast<std::size_t>(set.vectors.rows()) != set.ids.size()) {
    throw ValidationError("EMB1: " + std::to_string(set.ids.size()) + " ids for " +
                          std::to_string(set.vectors.rows()) + " rows");
  }
  ByteWriter w;
  w.put_magic("EMB1");
  w.put<std::uint32_t>(kEmbVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.vectors.cols()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.vectors.rows()));
  w.put<float>(set.logit_scale);
  w.put<std::uint8_t>(set.normalized ? 1 : 0);
  for (const auto& id : set.ids) w.put_string16(id);
  w.put_array(std::span<const float>(set.vectors.data(), static_cast<std::size_t>(set.vectors.size())));
  return std::move(w).bytes();
}

EmbeddingSet read_embeddings(std::span<const std::uint8_t> bytes, EmbeddingReadReport* report) {
  ByteReader r(bytes, "EMB1");
  r.expect_magic("EMB1");
  const auto version = r.get<std::uint32_t>();
  if (version != kEmbVersion) {
    throw ValidationError("EMB1: unsupported version " + std::to_string(version));
  }
  const auto dim = r.get<std::uint32_t>();
  const auto rows = r.get<std::uint32_t>();
  EmbeddingSet set;
  set.logit_scale = r.get<float>();
  set.normalized = r.get<std::uint8_t>() != 0;
  if (!(set.logit_scale > 0.0f) || !std::isfinite(set.logit_scale)) {
    throw ValidationError("EMB1: logit_scale must be positive and finite");
  }
  if (dim == 0) throw ValidationError("EMB1: zero dimension");
  set.ids.reserve(rows);
  for (std::uint32_t i = 0; i < rows; ++i) set.ids.push_back(r.get_string16());
  const std::size_t payload = static_cast<std::size_t>(rows) * dim * sizeof(float);
  if (r.remaining() != payload) {
    throw ValidationError("EMB1: dimension mismatch, header says " + std::to_string(rows) + "x" +
                          std::to_string(dim) + " but " + std::to_string(r.remaining()) +
                          " payload bytes follow");
  }
  set.vectors.resize(rows, dim);
  r.get_array(std::span<float>(set.vectors.data(), static_cast<std::size_t>(set.vectors.size())));

  int fixed = 0;
  for (Eigen::Index i = 0; i < set.vectors.rows(); ++i) {
    auto row = set.vectors.row(i);
    if (!row.allFinite()) {
      throw ValidationError("EMB1: non-finite value in row " + std::to_string(i) + " (" +
                            set.ids[static_cast<std::size_t>(i)] + ")");
    }
    const double norm = row.cast<double>().norm();
    if (norm == 0.0) throw ValidationError("EMB1: zero vector in row " + std::to_string(i));
    if (std::abs(norm - 1.0) > 1e-3) {
      row = (row.cast<double>() / norm).cast<float>();
      ++fixed;
    }
  }
  set.normalized = true;
  if (report) report->rows_renormalized = fixed;
  return set;
}

EmbeddingSet load_embeddings(const std::string& path, EmbeddingReadReport* report) {
  return read_embeddings(read_file(path), report);
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  write_file(path, write_embeddings(set));
}

std::string frame_id(std::string_view sample_id, int frame_index) {
  return std::string(sample_id) + "/" + std::to_string(frame_index);
}

FrameIndex::FrameIndex(const EmbeddingSet& set) : set_(&set) {
  std::unordered_map<std::string, std::vector<std::pair<int, int>>> tmp;
  for (int row = 0; row < set.rows(); ++row) {
    const std::string& id = set.ids[static_cast<std::size_t>(row)];
    const auto slash = id.rfind('/');
    int frame = 0;
    std::string sample = id;
    if (slash != std::string::npos) {
      const char* first = id.data() + slash + 1;
      const char* last = id.data() + id.size();
      auto [ptr, ec] = std::from_chars(first, last, frame);
      if (ec == std::errc{} && ptr == last) sample = id.substr(0, slash);
      else frame = 0;
    }
    tmp[sample].emplace_back(frame, row);
  }
  for (auto& [sample, frames] : tmp) {
    std::sort(frames.begin(), frames.end());
    auto& rows = rows_[sample];
    for (const auto& fr : frames) rows.push_back(fr.second);
  }
}

bool FrameIndex::contains(std::string_view sample_id) const {
  return rows_.contains(std::string(sample_id));
}

Eigen::MatrixXd FrameIndex::features(std::string_view sample_id) const {
  const auto it = rows_.find(std::string(sample_id));
  if (it == rows_.end()) {
    throw ValidationError("no embeddings for id \"" + std::string(sample_id) + "\"");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(it->second.size()), set_->dim());
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = set_->vectors.row(it->second[i]).cast<double>();
  }
  return out;
}

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  const auto first = text_.find(kPlaceholder);
  if (first == std::string::npos) {
    throw ValidationError("prompt template \"" + text_ + "\" has no [CLASS] placeholder");
  }
  if (text_.find(kPlaceholder, first + 1) != std::string::npos) {
    throw ValidationError("prompt template \"" + text_ + "\" has more than one [CLASS]");
  }
}

std::string PromptTemplate::apply(std::string_view class_name) const {
  std::string out = text_;
  out.replace(out.find(kPlaceholder), kPlaceholder.size(), class_name);
  return out;
}

std::vector<std::string> build_prompts(const std::vector<std::string>& classes,
                                       const PromptTemplate& tpl) {
  if (classes.empty()) throw ValidationError("build_prompts: empty class list");
  std::vector<std::string> out;
  out.reserve(classes.size());
  for (const auto& c : classes) out.push_back(tpl.apply(c));
  return out;
}

RealGrid area_downsample(const RealGrid& grid, int rows, int cols) {
  const Eigen::MatrixXd wy = area_weights(rows, static_cast<int>(grid.rows()));
  const Eigen::MatrixXd wx = area_weights(cols, static_cast<int>(grid.cols()));
  return wy * grid * wx.transpose();
}

SyntheticEncoder::SyntheticEncoder(int dim, std::uint64_t seed) {
  if (dim < 8) throw ValidationError("synthetic encoder dimension must be >= 8");
  Rng rng(mix_seed(seed, 0x656e636fULL));
  projection_.resize(kGrid * kGrid, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index j = 0; j < projection_.cols(); ++j) {
    for (Eigen::Index i = 0; i < projection_.rows(); ++i) projection_(i, j) = scale * rng.normal();
  }
}

Eigen::VectorXd SyntheticEncoder::encode_intensity(const RealGrid& intensity) const {
  const RealGrid small = area_downsample(intensity, kGrid, kGrid);
  const Eigen::Map<const Eigen::RowVectorXd> flat(small.data(), small.size());
  Eigen::VectorXd f = (flat * projection_).transpose();
  const double norm = f.norm();
  if (norm > 0.0) f /= norm;
  return f;
}

Eigen::VectorXd SyntheticEncoder::encode(const Histogram2& hist) const {
  const auto norm = normalize(hist);
  return encode_intensity(norm.pos + norm.neg);
}

RealGrid SyntheticEncoder::class_prototype(int class_index, int num_classes, std::uint16_t width,
                                           std::uint16_t height) {
  if (class_index < 0 || class_index >= num_classes) {
    throw ValidationError("class index " + std::to_string(class_index) + " outside [0," +
                          std::to_string(num_classes) + ")");
  }
  RealGrid img = RealGrid::Zero(height, width);
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double half_len = bar_half_length(width, height);
  const double theta = class_angle(class_index, num_classes);
  constexpr double kStep = 0.125;
  for (const double a : {theta, std::numbers::pi - theta}) {
    for (double u = -half_len; u <= half_len; u += kStep) {
      for (double v = -kBarHalfThickness; v <= kBarHalfThickness; v += kStep) {
        const long x = std::lround(cx + u * std::cos(a) - v * std::sin(a));
        const long y = std::lround(cy + u * std::sin(a) + v * std::cos(a));
        if (x < 0 || y < 0 || x >= width || y >= height) continue;
        img(y, x) += 1.0;
      }
    }
  }
  return img / img.maxCoeff();
}

Eigen::VectorXd synthetic_encode(const EventFrame& frame, int dim, std::uint64_t seed) {
  return SyntheticEncoder(dim, seed).encode(frame);
}

Eigen::VectorXd synthetic_text_encode(int class_index, int num_classes, int dim,
                                      std::uint64_t seed, std::uint16_t width,
                                      std::uint16_t height) {
  return SyntheticEncoder(dim, seed)
      .encode_intensity(SyntheticEncoder::class_prototype(class_index, num_classes, width, height));
}

Eigen::MatrixXd encode_stream(const EventStream& stream, const WindowingConfig& cfg,
                              const SyntheticEncoder& encoder) {
  const auto windows = window_events(stream, cfg);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(windows.size()), encoder.dim());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto hist = build_histogram(windows[i], stream.width, stream.height);
    out.row(static_cast<Eigen::Index>(i)) =
        encoder.encode(hist).cast<float>().cast<double>().transpose();
  }
  return out;
}

Eigen::MatrixXd synthetic_text_weights(int num_classes, const SyntheticEncoder& encoder,
                                       std::uint16_t width, std::uint16_t height) {
  Eigen::MatrixXd w(num_classes, encoder.dim());
  for (int c = 0; c < num_classes; ++c) {
    w.row(c) = encoder.encode_intensity(SyntheticEncoder::class_prototype(c, num_classes, width, height))
                   .cast<float>()
                   .cast<double>()
                   .transpose();
  }
  return w;
}

}  // namespace evclip
