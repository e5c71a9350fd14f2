#include "evclip/adapter.hpp"

namespace evclip {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::uint8_t kind_tag(AdapterKind kind) { return static_cast<std::uint8_t>(kind); }

}  // namespace

AdapterKind parse_adapter_kind(std::string_view name) {
  if (name == "visual_transformer") return AdapterKind::kVisualTransformer;
  if (name == "visual_mlp") return AdapterKind::kVisualMlp;
  if (name == "text") return AdapterKind::kText;
  if (name == "joint") return AdapterKind::kJoint;
  throw ValidationError("unknown adapter kind \"" + std::string(name) +
                        "\" (visual_transformer | visual_mlp | text | joint)");
}

std::string_view adapter_kind_name(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::kVisualTransformer:
      return "visual_transformer";
    case AdapterKind::kVisualMlp:
      return "visual_mlp";
    case AdapterKind::kText:
      return "text";
    case AdapterKind::kJoint:
      return "joint";
  }
  return "?";
}

double default_alpha(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::kJoint:
      return 0.8;
    case AdapterKind::kText:
      return 1.0;
    default:
      return 0.5;
  }
}

Bytes write_checkpoint(const AdapterParams<double>& params) {
  ByteWriter w;
  w.put_magic("ADP1");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(kind_tag(params.kind));
  w.put<double>(params.alpha);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.num_classes()));
  if (params.transformer) {
    const auto& s = params.transformer->shape;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.width));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.heads));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.mlp_hidden));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.depth));
  }
  if (params.mlp) w.put<std::uint32_t>(static_cast<std::uint32_t>(params.mlp->max_frames));

  std::uint32_t count = 0;
  visit_tensors(params, [&](const std::string&, ParamGroup, const Mat<double>&) { ++count; });
  w.put<std::uint32_t>(count);
  visit_tensors(params, [&](const std::string&, ParamGroup, const Mat<double>& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  });
  visit_tensors(params, [&](const std::string&, ParamGroup, const Mat<double>& m) {
    w.put_array(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  });
  return std::move(w).bytes();
}

AdapterParams<double> read_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "ADP1");
  r.expect_magic("ADP1");
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw ValidationError("ADP1: unsupported version " + std::to_string(v));
  }
  const auto tag = r.get<std::uint8_t>();
  if (tag > kind_tag(AdapterKind::kJoint)) {
    throw ValidationError("ADP1: unknown adapter kind tag " + std::to_string(tag));
  }
  const auto kind = static_cast<AdapterKind>(tag);
  const double alpha = r.get<double>();
  const int dim = static_cast<int>(r.get<std::uint32_t>());
  const int classes = static_cast<int>(r.get<std::uint32_t>());
  AdapterOptions opts;
  if (kind == AdapterKind::kVisualTransformer || kind == AdapterKind::kJoint) {
    opts.shape.width = static_cast<int>(r.get<std::uint32_t>());
    opts.shape.heads = static_cast<int>(r.get<std::uint32_t>());
    opts.shape.mlp_hidden = static_cast<int>(r.get<std::uint32_t>());
    opts.shape.depth = static_cast<int>(r.get<std::uint32_t>());
  }
  if (kind == AdapterKind::kVisualMlp) opts.mlp_max_frames = static_cast<int>(r.get<std::uint32_t>());

  AdapterParams<double> p = init_adapter<double>(kind, Mat<double>::Zero(classes, dim), alpha, 0, opts);
  p.alpha = alpha;

  const auto count = r.get<std::uint32_t>();
  std::vector<Mat<double>*> tensors;
  visit_tensors(p, [&](const std::string&, ParamGroup, Mat<double>& m) { tensors.push_back(&m); });
  if (count != tensors.size()) {
    throw ValidationError("ADP1: expected " + std::to_string(tensors.size()) + " tensors, found " +
                          std::to_string(count));
  }
  for (auto* m : tensors) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows != m->rows() || cols != m->cols()) {
      throw ValidationError("ADP1: tensor shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " does not match the declared architecture");
    }
  }
  for (auto* m : tensors) r.get_array(std::span<double>(m->data(), static_cast<std::size_t>(m->size())));
  r.expect_end();
  return p;
}

}  // namespace evclip
