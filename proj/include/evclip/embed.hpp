#pragma once

// Embedding-file contract (EMB1), prompt construction, and the deterministic
// synthetic encoder that stands in for a frozen vision-language model.

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "evclip/binary_io.hpp"
#include "evclip/frames.hpp"

namespace evclip {

using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr float kDefaultLogitScale = 100.0f;

/// Rows of frame features or class text weights. logit_scale is the inverse
/// softmax temperature that travels with the encoder checkpoint.
struct EmbeddingSet {
  FloatRows vectors;
  std::vector<std::string> ids;
  float logit_scale = kDefaultLogitScale;
  bool normalized = false;

  int dim() const { return static_cast<int>(vectors.cols()); }
  int rows() const { return static_cast<int>(vectors.rows()); }
  Eigen::MatrixXd as_double() const { return vectors.cast<double>(); }
};

struct EmbeddingReadReport {
  int rows_renormalized = 0;
};

Bytes write_embeddings(const EmbeddingSet& set);

/// Rows whose norm is off unit length by more than 1e-3 are rescaled.
EmbeddingSet read_embeddings(std::span<const std::uint8_t> bytes,
                             EmbeddingReadReport* report = nullptr);

EmbeddingSet load_embeddings(const std::string& path, EmbeddingReadReport* report = nullptr);
void save_embeddings(const EmbeddingSet& set, const std::string& path);

/// Frame ids are "<sample_id>/<frame_index>"; groups rows per sample in frame
/// order.
class FrameIndex {
 public:
  explicit FrameIndex(const EmbeddingSet& set);

  bool contains(std::string_view sample_id) const;
  /// M x D features of one sample; throws ValidationError naming the id.
  Eigen::MatrixXd features(std::string_view sample_id) const;

 private:
  const EmbeddingSet* set_;
  std::unordered_map<std::string, std::vector<int>> rows_;
};

std::string frame_id(std::string_view sample_id, int frame_index);

class PromptTemplate {
 public:
  static constexpr std::string_view kPlaceholder = "[CLASS]";
  static constexpr std::string_view kDefault = "a point cloud image of a [CLASS]";

  explicit PromptTemplate(std::string text = std::string(kDefault));

  std::string apply(std::string_view class_name) const;
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::vector<std::string> build_prompts(const std::vector<std::string>& classes,
                                       const PromptTemplate& tpl);

/// Linear stand-in encoder: area-average (pos + neg) of the normalized
/// histogram onto a 16x16 grid, project with a seeded Gaussian 256 x D
/// matrix, L2-normalize.
class SyntheticEncoder {
 public:
  static constexpr int kGrid = 16;

  SyntheticEncoder(int dim, std::uint64_t seed);

  int dim() const { return static_cast<int>(projection_.cols()); }

  Eigen::VectorXd encode(const Histogram2& hist) const;
  Eigen::VectorXd encode(const EventFrame& frame) const { return encode(frame.histogram); }
  /// Encodes an arbitrary non-negative intensity image (height x width).
  Eigen::VectorXd encode_intensity(const RealGrid& intensity) const;

  /// Noise-free rendering of a synthetic class on a width x height sensor.
  static RealGrid class_prototype(int class_index, int num_classes, std::uint16_t width,
                                  std::uint16_t height);

 private:
  Eigen::MatrixXd projection_;  // 256 x D
};

Eigen::VectorXd synthetic_encode(const EventFrame& frame, int dim, std::uint64_t seed);
Eigen::VectorXd synthetic_text_encode(int class_index, int num_classes, int dim,
                                      std::uint64_t seed, std::uint16_t width = 64,
                                      std::uint16_t height = 64);

/// Area-weighted downsampling of an h x w grid to rows x cols.
RealGrid area_downsample(const RealGrid& grid, int rows, int cols);

/// Windows -> histograms -> synthetic encoder, one row per window. Rows are
/// rounded through f32 so they match what an EMB1 round trip would give.
Eigen::MatrixXd encode_stream(const EventStream& stream, const WindowingConfig& cfg,
                              const SyntheticEncoder& encoder);

/// K x D text weights of the synthetic classes (rounded through f32).
Eigen::MatrixXd synthetic_text_weights(int num_classes, const SyntheticEncoder& encoder,
                                       std::uint16_t width = 64, std::uint16_t height = 64);

}  // namespace evclip
