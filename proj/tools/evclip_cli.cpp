// evclip command-line front end. Every subcommand reads an optional
// key=value config file (--config); flags override the file, which overrides
// the built-in defaults. Exit codes: 0 ok, 1 validation error, 2 runtime error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evclip/embed.hpp"
#include "evclip/error.hpp"
#include "evclip/events.hpp"
#include "evclip/frames.hpp"
#include "evclip/pseudo.hpp"
#include "evclip/train.hpp"
#include "evclip/zeroshot.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace evclip {
namespace {

constexpr double kReferenceEventToFrameMs = 6.76;

// ---------------------------------------------------------------------------
// Dataset layout: <root>/<class>/<id>.{evt,csv}. Classes are the sorted
// sub-directory names; labels are their indices. Files directly under <root>
// are unlabeled.

struct SampleFile {
  std::string id;
  std::string class_name;
  std::optional<int> label;
  fs::path path;
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<SampleFile> samples;  // sorted by (class, id)
};

bool is_stream_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return fs::is_regular_file(p) && (ext == ".evt" || ext == ".csv");
}

Dataset scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ValidationError("input directory " + root.string() + " not found");
  Dataset ds;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  auto add_files = [&](const fs::path& dir, const std::string& cls, std::optional<int> label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (is_stream_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds.samples.push_back({f.stem().string(), cls, label, f});
  };
  for (const auto& d : dirs) {
    ds.classes.push_back(d.filename().string());
    add_files(d, ds.classes.back(), static_cast<int>(ds.classes.size()) - 1);
  }
  add_files(root, "", std::nullopt);
  std::map<std::string, int> seen;
  for (const auto& s : ds.samples) {
    if (seen[s.id]++) throw ValidationError("duplicate sample id \"" + s.id + "\" under " + root.string());
  }
  return ds;
}

std::vector<EventStream> load_dataset(const Dataset& ds) {
  std::vector<EventStream> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    auto st = load_stream(s.path.string());
    st.id = s.id;
    st.label = s.label;
    out.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines manifests. Rows carry at least "id" and "label" (int or null).

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot write " + path.string());
  for (const auto& r : rows) os << r.dump() << '\n';
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read manifest " + path.string());
  std::vector<json> rows;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    if (!rows.back().contains("id")) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": row without \"id\"");
    }
  }
  return rows;
}

std::optional<int> row_label(const json& row) {
  if (!row.contains("label") || row["label"].is_null()) return std::nullopt;
  return row["label"].get<int>();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot write " + path.string());
  os << text;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands.

struct Common {
  std::string config;
};

void add_config(CLI::App* app) {
  // Consumed by expand_config before parsing; registered so it shows in --help.
  app->add_option("--config", "key=value config file (flags take precedence)");
}

// Splices `--key=value` for every config entry whose flag is not on the command
// line. Unknown keys, blank lines, '#' comments and [section] headers are skipped.
std::vector<std::string> expand_config(int argc, char** argv, const CLI::App& app) {
  std::vector<std::string> args(argv, argv + argc);
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty() || args.size() < 2) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands([](const CLI::App*) { return true; })) {
    if (s->get_name() == args[1]) sub = s;
  }
  if (sub == nullptr) return args;
  std::ifstream is(file);
  if (!is) throw ValidationError("cannot read config file " + file);
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<std::string> injected;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(file + ":" + std::to_string(n) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (key == "config" || sub->get_option_no_throw(flag) == nullptr) continue;
    const bool on_cli = std::any_of(args.begin() + 2, args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!on_cli) injected.push_back(flag + "=" + value);
  }
  args.insert(args.begin() + 2, injected.begin(), injected.end());
  return args;
}

struct TrainOpts {
  TrainConfig cfg;
  std::string kind = "joint";
  std::optional<double> alpha;
  int width = 256;
  int mlp_frames = 8;

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "adapter: visual_transformer | visual_mlp | text | joint")
        ->capture_default_str();
    app->add_option("--alpha", alpha, "residual ratio (default 0.5 visual, 0.8 joint)");
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--batch", cfg.batch_size)->capture_default_str();
    app->add_option("--lr-visual", cfg.peak_lr_visual)->capture_default_str();
    app->add_option("--lr-text", cfg.peak_lr_text, "default 1e-3 text-only, lr-visual joint");
    app->add_option("--warmup", cfg.warmup_fraction)->capture_default_str();
    app->add_option("--seed", cfg.seed)->capture_default_str();
    app->add_option("--adapter-width", width, "transformer token width")->capture_default_str();
    app->add_option("--mlp-frames", mlp_frames, "MLP adapter frame capacity")->capture_default_str();
  }

  AdapterKind adapter_kind() const { return parse_adapter_kind(kind); }
  double resolved_alpha() const { return alpha.value_or(default_alpha(adapter_kind())); }
  AdapterOptions options() const {
    AdapterOptions o;
    o.shape.width = width;
    o.mlp_max_frames = mlp_frames;
    return o;
  }
};

// Image/text embeddings plus the sample manifest they describe.
struct EmbeddingInputs {
  std::string image;
  std::string text;
  std::string manifest;

  void add(CLI::App* app) {
    app->add_option("--image", image, "EMB1 frame embeddings")->required();
    app->add_option("--text", text, "EMB1 class text embeddings")->required();
    app->add_option("--manifest", manifest, "JSON-lines sample list (id, label)")->required();
  }
};

EmbeddingSet load_checked(const std::string& path, const char* what) {
  EmbeddingReadReport rep;
  auto set = load_embeddings(path, &rep);
  if (rep.rows_renormalized) {
    std::cerr << what << ": renormalized " << rep.rows_renormalized << " rows of " << path << "\n";
  }
  return set;
}

// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const SyntheticDatasetSpec& spec, const std::string& out, const std::string& format) {
  if (format != "evt1" && format != "csv") throw ValidationError("format must be evt1 or csv");
  const auto data = gen_synthetic(spec);
  const int digits = static_cast<int>(std::to_string(spec.num_classes - 1).size());
  for (const auto& s : data) {
    std::ostringstream cls;
    cls << "class" << std::setw(digits) << std::setfill('0') << *s.label;
    save_stream(s, (fs::path(out) / cls.str() / (s.id + (format == "csv" ? ".csv" : ".evt"))).string());
  }
  std::cout << "wrote " << data.size() << " streams to " << out << "\n";
  return 0;
}

struct ConvertOpts {
  std::string input, out, split = "test", colormap = "gray";
  int window = 20'000;
  int crop = 0;
  bool frm = false;
  unsigned threads = 1;
};

int cmd_convert(const ConvertOpts& o) {
  const auto ds = scan_dataset(o.input);
  const WindowingConfig cfg{o.window};
  const ColorMap map = parse_colormap(o.colormap);
  const fs::path split_dir = fs::path(o.out) / o.split;
  std::vector<json> rows;
  for (const auto& s : ds.samples) {
    EventStream st;
    try {
      st = load_stream(s.path.string());
    } catch (const ValidationError& e) {
      throw ValidationError(s.path.string() + ": " + e.what());
    }
    const auto frames = convert_parallel(st, cfg, map, std::max(1u, o.threads));
    const fs::path dir = split_dir / (s.class_name.empty() ? "unlabeled" : s.class_name) / s.id;
    json paths = json::array();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto rgb = o.crop > 0 ? resize_center_crop(frames[i].rgb, o.crop) : frames[i].rgb;
      const fs::path png = dir / ("frame_" + std::to_string(i) + ".png");
      write_png(rgb, png.string());
      paths.push_back(fs::relative(png, o.out).generic_string());
    }
    if (o.frm) write_file(dir / "frames.frm", write_frames(frames));
    json row;
    row["id"] = s.id;
    row["class"] = s.class_name;
    row["label"] = s.label ? json(*s.label) : json(nullptr);
    row["M"] = frames.size();
    row["N"] = o.window;
    row["width"] = st.width;
    row["height"] = st.height;
    row["frames"] = paths;
    rows.push_back(std::move(row));
  }
  write_jsonl(split_dir / "manifest.jsonl", rows);
  std::cout << "converted " << rows.size() << " samples into " << split_dir.string() << "\n";
  return 0;
}

struct EmbedSyntheticOpts {
  std::string input, out, prompt = std::string(PromptTemplate::kDefault);
  int dim = 64;
  std::uint64_t seed = 0;
  int window = 20'000;
  bool augment = false;
};

int cmd_embed_synthetic(const EmbedSyntheticOpts& o) {
  const auto ds = scan_dataset(o.input);
  const auto streams = load_dataset(ds);
  const SyntheticEncoder enc(o.dim, o.seed);
  const WindowingConfig cfg{o.window};
  const PromptTemplate tpl(o.prompt);

  EmbeddingSet image;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<json> manifest;
  std::uint16_t width = 64, height = 64;
  for (const auto& st : streams) {
    width = st.width;
    height = st.height;
    for (auto aug : kAllAugmentations) {
      if (!o.augment && aug != Augmentation::kIdentity) continue;
      const auto f = encode_stream(augment(st, aug), cfg, enc);
      for (Eigen::Index m = 0; m < f.rows(); ++m) {
        image.ids.push_back(frame_id(augmented_id(st.id, aug), static_cast<int>(m)));
        rows.push_back(f.row(m));
      }
    }
    json row;
    row["id"] = st.id;
    row["label"] = st.label ? json(*st.label) : json(nullptr);
    row["M"] = window_events(st, cfg).size();
    manifest.push_back(std::move(row));
  }
  image.vectors.resize(static_cast<Eigen::Index>(rows.size()), o.dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    image.vectors.row(static_cast<Eigen::Index>(r)) = rows[r].cast<float>();
  }
  image.normalized = true;

  const auto k = static_cast<int>(ds.classes.size());
  if (k < 2) throw ValidationError("synthetic text embeddings need at least 2 class directories");
  EmbeddingSet text;
  text.vectors = synthetic_text_weights(k, enc, width, height).cast<float>();
  text.ids = ds.classes;
  text.normalized = true;

  const fs::path out(o.out);
  save_embeddings(image, (out / "image.emb").string());
  save_embeddings(text, (out / "text.emb").string());
  write_jsonl(out / "samples.jsonl", manifest);
  std::string prompts;
  for (const auto& p : build_prompts(ds.classes, tpl)) prompts += p + "\n";
  write_text(out / "prompts.txt", prompts);
  std::cout << "embedded " << streams.size() << " samples (" << rows.size() << " rows, D=" << o.dim
            << ") into " << out.string() << "\n";
  return 0;
}

struct EvalOpts {
  EmbeddingInputs in;
  std::string checkpoint, logits, out;
  std::optional<double> lambda;
  std::vector<double> lambda_grid;
};

json accuracy_report(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  std::vector<int> hit(static_cast<std::size_t>(k), 0), total(static_cast<std::size_t>(k), 0);
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++total[static_cast<std::size_t>(truth[i])];
    if (truth[i] == pred[i]) {
      ++correct;
      ++hit[static_cast<std::size_t>(truth[i])];
    }
  }
  json per_class = json::array();
  for (int c = 0; c < k; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    per_class.push_back(total[cu] ? json(100.0 * hit[cu] / total[cu]) : json(nullptr));
  }
  json r;
  r["top1"] = truth.empty() ? 0.0 : 100.0 * correct / static_cast<double>(truth.size());
  r["samples"] = truth.size();
  r["per_class_top1"] = per_class;
  return r;
}

int cmd_eval(EvalOpts o, bool grid_default) {
  const auto image = load_checked(o.in.image, "image");
  const auto text_set = load_checked(o.in.text, "text");
  const auto rows = read_jsonl(o.in.manifest);
  const FrameIndex index(image);
  const Eigen::MatrixXd text = text_set.as_double();
  const double scale = image.logit_scale;

  std::optional<AdapterParams<double>> params;
  if (!o.checkpoint.empty()) {
    params = read_checkpoint(read_file(o.checkpoint));
    if (params->text.rows() != text.rows() || params->dim() != text.cols()) {
      throw ValidationError("checkpoint shape does not match the text embeddings");
    }
  }
  std::optional<LogitTable> external;
  if (!o.logits.empty()) external = read_logits(read_file(o.logits));
  if (grid_default && o.lambda_grid.empty()) o.lambda_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  if (o.lambda) o.lambda_grid.insert(o.lambda_grid.begin(), *o.lambda);
  if (!o.lambda_grid.empty() && !external) throw ValidationError("lambda given without --logits");

  std::vector<int> truth, pred;
  std::vector<std::vector<int>> ens_pred(o.lambda_grid.size());
  int unlabeled = 0;
  for (const auto& row : rows) {
    const auto id = row["id"].get<std::string>();
    const auto label = row_label(row);
    const Eigen::MatrixXd f = index.features(id);
    const Prediction p = params ? adapted_predict(f, *params, scale) : predict_features(f, text, scale);
    if (!label) {
      ++unlabeled;
      continue;
    }
    if (*label < 0 || *label >= text.rows()) {
      throw ValidationError("sample \"" + id + "\" has label " + std::to_string(*label) + " outside [0," +
                            std::to_string(text.rows()) + ")");
    }
    truth.push_back(*label);
    pred.push_back(p.label);
    for (std::size_t g = 0; g < o.lambda_grid.size(); ++g) {
      const auto ext = external->row(id);
      if (ext.size() != text.rows()) throw ValidationError("external logits have the wrong class count");
      ens_pred[g].push_back(ensemble(probability_logits(p.probs), ext, {o.lambda_grid[g]}).label);
    }
  }

  const int k = static_cast<int>(text.rows());
  json report;
  report["model"] = params ? std::string(adapter_kind_name(params->kind)) : std::string("zero_shot");
  report["logit_scale"] = scale;
  report["unlabeled_skipped"] = unlabeled;
  report["accuracy"] = accuracy_report(truth, pred, k);
  if (!o.lambda_grid.empty()) {
    json ens = json::array();
    for (std::size_t g = 0; g < o.lambda_grid.size(); ++g) {
      json r;
      r["lambda"] = o.lambda_grid[g];
      r["top1"] = accuracy_report(truth, ens_pred[g], k)["top1"];
      ens.push_back(r);
      std::cout << "lambda=" << o.lambda_grid[g] << " top1=" << r["top1"].get<double>() << "\n";
    }
    report["ensemble"] = ens;
  }
  std::cout << "top1=" << report["accuracy"]["top1"].get<double>() << " over " << truth.size()
            << " samples\n";
  if (!o.out.empty()) write_text(o.out, report.dump(2) + "\n");
  return 0;
}

std::vector<TrainingSample> gather(const FrameIndex& index, const std::vector<json>& rows, bool need_labels) {
  std::vector<TrainingSample> out;
  for (const auto& row : rows) {
    const auto id = row["id"].get<std::string>();
    const auto label = row_label(row);
    if (!label) {
      if (need_labels) throw ValidationError("training sample \"" + id + "\" has no label");
      continue;
    }
    out.push_back({id, index.features(id), *label});
  }
  return out;
}

struct TrainCmdOpts {
  EmbeddingInputs in;
  TrainOpts train;
  std::string out_dir;
  int shots = 0;
};

void write_training_outputs(const fs::path& dir, const AdapterParams<double>& params,
                            std::span<const LossPoint> curve) {
  const auto bytes = write_checkpoint(params);
  write_file(dir / "checkpoint.adp", bytes);
  write_text(dir / "loss.csv", loss_curve_csv(curve));
  std::cout << "checkpoint " << (dir / "checkpoint.adp").string() << " digest " << hex64(fnv1a64(bytes))
            << "\n";
}

int cmd_train(const TrainCmdOpts& o) {
  const auto image = load_checked(o.in.image, "image");
  const auto text_set = load_checked(o.in.text, "text");
  const FrameIndex index(image);
  auto samples = gather(index, read_jsonl(o.in.manifest), true);
  if (o.shots > 0) {
    std::vector<LabeledId> ids;
    for (const auto& s : samples) ids.push_back({s.id, s.label});
    const auto sel = sample_few_shot(ids, o.shots, o.train.cfg.seed);
    for (const auto& w : sel.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<TrainingSample> chosen;
    for (auto i : sel.indices) chosen.push_back(samples[i]);
    samples = std::move(chosen);
  }
  const Eigen::MatrixXd text = text_set.as_double();
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= text.rows()) {
      throw ValidationError("sample \"" + s.id + "\" has label " + std::to_string(s.label) + " outside [0," +
                            std::to_string(text.rows()) + ")");
    }
  }
  auto init = init_adapter<double>(o.train.adapter_kind(), text, o.train.resolved_alpha(), o.train.cfg.seed,
                                   o.train.options());
  const auto result = train_adapter<double>(samples, std::move(init), image.logit_scale, o.train.cfg);
  std::cout << "trained " << adapter_kind_name(result.params.kind) << " on " << samples.size()
            << " samples, " << result.curve.size() << " steps";
  if (!result.curve.empty()) std::cout << ", final loss " << result.curve.back().loss;
  std::cout << "\n";
  write_training_outputs(o.out_dir, result.params, result.curve);
  return 0;
}

struct PseudoCmdOpts {
  EmbeddingInputs in;
  TrainOpts train;
  std::string labeled, out_dir;
  std::optional<double> threshold;
  int top_k = 30;
};

int cmd_pseudolabel(PseudoCmdOpts o) {
  const auto image = load_checked(o.in.image, "image");
  const auto text_set = load_checked(o.in.text, "text");
  const FrameIndex index(image);
  const auto rows = read_jsonl(o.in.manifest);
  std::vector<std::string> ids;
  std::vector<std::optional<int>> truth;
  for (const auto& r : rows) {
    ids.push_back(r["id"].get<std::string>());
    truth.push_back(row_label(r));
  }
  std::vector<TrainingSample> labeled;
  if (!o.labeled.empty()) labeled = gather(index, read_jsonl(o.labeled), true);

  SelfTrainConfig cfg;
  cfg.pseudo.conf_threshold = o.threshold.value_or(labeled.empty() ? 0.999 : kSemiSupervisedThreshold);
  cfg.pseudo.top_k = o.top_k;
  cfg.train = o.train.cfg;
  cfg.kind = o.train.adapter_kind();
  cfg.alpha = o.train.resolved_alpha();
  cfg.adapter = o.train.options();

  const bool any_truth = std::any_of(truth.begin(), truth.end(), [](const auto& t) { return t.has_value(); });
  if (!ids.empty() && !index.contains(augmented_id(ids.front(), Augmentation::kHflip))) {
    throw ValidationError("no augmented embeddings for \"" + ids.front() +
                          "\"; run embed-synthetic with --augment");
  }
  const EmbeddingFeatureSource source(image, ids);
  const auto report = self_train(source, labeled, text_set.as_double(), image.logit_scale, cfg,
                                 any_truth ? std::span<const std::optional<int>>(truth)
                                           : std::span<const std::optional<int>>{});

  const fs::path dir(o.out_dir);
  write_text(dir / "pseudo_labels.csv", pseudo_label_csv(report.records));
  write_training_outputs(dir, report.params, report.curve);
  json j;
  j["mode"] = labeled.empty() ? "unsupervised" : "semi_supervised";
  j["conf_threshold"] = cfg.pseudo.conf_threshold;
  j["top_k"] = cfg.pseudo.top_k;
  j["acceptance_rate"] = report.acceptance_rate;
  j["per_class_accepted"] = report.per_class_accepted;
  j["purity"] = report.purity ? json(*report.purity) : json(nullptr);
  j["unfiltered_purity"] = report.unfiltered_purity ? json(*report.unfiltered_purity) : json(nullptr);
  write_text(dir / "report.json", j.dump(2) + "\n");
  std::cout << "accepted " << report.acceptance_rate * 100.0 << "% of " << ids.size() << " samples\n";
  return 0;
}

struct BenchOpts {
  int width = 640, height = 480, events = 70'000, window = 0, runs = 100;
  unsigned threads = 0;
  std::string colormap = "gray";
  std::uint64_t seed = 0;
};

std::string cpu_model() {
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(line.find_first_not_of(' ', colon + 1));
    }
  }
  return "unknown";
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

int cmd_bench(const BenchOpts& o) {
  if (o.runs < 100) throw ValidationError("bench needs at least 100 runs");
  if (o.width < 1 || o.height < 1 || o.width > 65535 || o.height > 65535) {
    throw ValidationError("bad sensor size");
  }
  Rng rng(o.seed);
  std::vector<Event> ev(static_cast<std::size_t>(o.events));
  for (auto& e : ev) {
    e = {static_cast<std::uint16_t>(rng.uniform_int(0, o.width - 1)),
         static_cast<std::uint16_t>(rng.uniform_int(0, o.height - 1)),
         static_cast<std::uint64_t>(rng.uniform_int(0, 1'000'000)),
         static_cast<std::int8_t>(rng.uniform_int(0, 1) ? 1 : -1)};
  }
  const auto stream = make_stream(static_cast<std::uint16_t>(o.width), static_cast<std::uint16_t>(o.height),
                                  std::move(ev));
  const WindowingConfig cfg{o.window > 0 ? o.window : o.events};
  const ColorMap map = parse_colormap(o.colormap);
  const unsigned par = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());

  auto time_runs = [&](unsigned threads) {
    std::vector<double> ms;
    std::size_t frames = 0;
    for (int r = 0; r < o.runs; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = threads == 1 ? convert(stream, cfg, map) : convert_parallel(stream, cfg, map, threads);
      const auto t1 = std::chrono::steady_clock::now();
      frames = out.size();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return std::pair(ms, frames);
  };
  const auto [single, frames] = time_runs(1);
  const auto parallel = time_runs(par).first;

  json row;
  row["width"] = o.width;
  row["height"] = o.height;
  row["events"] = o.events;
  row["N"] = cfg.events_per_window;
  row["frames"] = frames;
  row["colormap"] = colormap_name(map);
  row["runs"] = o.runs;
  row["median_ms"] = percentile(single, 0.5);
  row["p95_ms"] = percentile(single, 0.95);
  row["parallel_threads"] = par;
  row["parallel_median_ms"] = percentile(parallel, 0.5);
  row["parallel_p95_ms"] = percentile(parallel, 0.95);
  row["reference_ms"] = kReferenceEventToFrameMs;
  row["cpu"] = cpu_model();
  row["hardware_concurrency"] = std::thread::hardware_concurrency();
#if defined(__clang__)
  row["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
  row["compiler"] = "gcc " __VERSION__;
#else
  row["compiler"] = "unknown";
#endif
  std::cout << row.dump() << "\n";
  std::cout << std::fixed << std::setprecision(3) << "event-to-frame median " << row["median_ms"].get<double>()
            << " ms (p95 " << row["p95_ms"].get<double>() << " ms), reference "
            << std::setprecision(2) << kReferenceEventToFrameMs << " ms\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Event-camera zero/few-shot classification with frozen vision-language embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evclip 1.0");

  // gen-synthetic
  SyntheticDatasetSpec spec;
  std::string gen_out, gen_format = "evt1";
  auto* gen = app.add_subcommand("gen-synthetic", "write the oriented-bar synthetic dataset");
  add_config(gen);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", spec.num_classes)->capture_default_str();
  gen->add_option("--samples-per-class", spec.samples_per_class)->capture_default_str();
  gen->add_option("--width", spec.width)->capture_default_str();
  gen->add_option("--height", spec.height)->capture_default_str();
  gen->add_option("--events", spec.events_per_sample)->capture_default_str();
  gen->add_option("--noise", spec.noise_fraction)->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--format", gen_format, "evt1 | csv")->capture_default_str();

  // convert
  ConvertOpts conv;
  auto* convert_cmd = app.add_subcommand("convert", "event streams -> frame PNGs + manifest");
  add_config(convert_cmd);
  convert_cmd->add_option("--input", conv.input, "dataset directory <class>/<id>.evt")->required();
  convert_cmd->add_option("--out", conv.out, "output root")->required();
  convert_cmd->add_option("--split", conv.split)->capture_default_str();
  convert_cmd->add_option("--window", conv.window, "events per window N")->capture_default_str();
  convert_cmd->add_option("--colormap", conv.colormap, "gray | red_blue")->capture_default_str();
  convert_cmd->add_option("--crop", conv.crop, "resize + center-crop side (0: sensor size)");
  convert_cmd->add_flag("--frm", conv.frm, "also write frames.frm per sample");
  convert_cmd->add_option("--threads", conv.threads)->capture_default_str();

  // embed-synthetic
  EmbedSyntheticOpts emb;
  auto* embed_cmd = app.add_subcommand("embed-synthetic", "synthetic-encoder EMB1 files for a dataset");
  add_config(embed_cmd);
  embed_cmd->add_option("--input", emb.input, "dataset directory")->required();
  embed_cmd->add_option("--out", emb.out, "output directory")->required();
  embed_cmd->add_option("--dim", emb.dim)->capture_default_str();
  embed_cmd->add_option("--encoder-seed", emb.seed)->capture_default_str();
  embed_cmd->add_option("--window", emb.window)->capture_default_str();
  embed_cmd->add_option("--template", emb.prompt)->capture_default_str();
  embed_cmd->add_flag("--augment", emb.augment, "also embed hflip / treverse variants");

  // eval and ensemble-grid
  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy, optionally ensembled");
  add_config(eval_cmd);
  ev.in.add(eval_cmd);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "ADP1 adapter (default: zero-shot)");
  eval_cmd->add_option("--logits", ev.logits, "LGT1 external classifier logits");
  eval_cmd->add_option("--lambda", ev.lambda, "ensemble weight on the external logits");
  eval_cmd->add_option("--lambda-grid", ev.lambda_grid, "several ensemble weights");
  eval_cmd->add_option("--report", ev.out, "write the JSON report here");

  EvalOpts eg;
  auto* grid_cmd = app.add_subcommand("ensemble-grid", "ensemble accuracy over a lambda grid");
  add_config(grid_cmd);
  eg.in.add(grid_cmd);
  grid_cmd->add_option("--checkpoint", eg.checkpoint);
  grid_cmd->add_option("--logits", eg.logits)->required();
  grid_cmd->add_option("--lambda-grid", eg.lambda_grid, "default 0 0.25 0.5 0.75 1");
  grid_cmd->add_option("--report", eg.out);

  // train
  TrainCmdOpts tr;
  auto* train_cmd = app.add_subcommand("train", "train an adapter on labeled embeddings");
  add_config(train_cmd);
  tr.in.add(train_cmd);
  tr.train.add(train_cmd);
  train_cmd->add_option("--shots", tr.shots, "sample this many per class (0: use all)");
  train_cmd->add_option("--out-dir", tr.out_dir)->required();

  // pseudolabel
  PseudoCmdOpts ps;
  auto* pseudo_cmd = app.add_subcommand("pseudolabel", "augmentation-consistent pseudo-labels + self-training");
  add_config(pseudo_cmd);
  ps.in.add(pseudo_cmd);
  ps.train.add(pseudo_cmd);
  pseudo_cmd->add_option("--labeled", ps.labeled, "labeled few-shot manifest (semi-supervised)");
  pseudo_cmd->add_option("--threshold", ps.threshold, "default 0.999 unsupervised, 0.5 semi-supervised");
  pseudo_cmd->add_option("--top-k", ps.top_k)->capture_default_str();
  pseudo_cmd->add_option("--out-dir", ps.out_dir)->required();

  // bench
  BenchOpts bo;
  auto* bench_cmd = app.add_subcommand("bench", "time event-to-frame conversion");
  add_config(bench_cmd);
  bench_cmd->add_option("--width", bo.width)->capture_default_str();
  bench_cmd->add_option("--height", bo.height)->capture_default_str();
  bench_cmd->add_option("--events", bo.events)->capture_default_str();
  bench_cmd->add_option("--window", bo.window, "events per window (0: all in one)");
  bench_cmd->add_option("--runs", bo.runs)->capture_default_str();
  bench_cmd->add_option("--threads", bo.threads, "parallel run threads (0: all cores)");
  bench_cmd->add_option("--colormap", bo.colormap)->capture_default_str();
  bench_cmd->add_option("--seed", bo.seed)->capture_default_str();

  try {
    const auto args = expand_config(argc, argv, app);
    std::vector<const char*> ptrs;
    for (const auto& a : args) ptrs.push_back(a.c_str());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) return cmd_gen_synthetic(spec, gen_out, gen_format);
  if (convert_cmd->parsed()) return cmd_convert(conv);
  if (embed_cmd->parsed()) return cmd_embed_synthetic(emb);
  if (eval_cmd->parsed()) return cmd_eval(ev, false);
  if (grid_cmd->parsed()) return cmd_eval(eg, true);
  if (train_cmd->parsed()) return cmd_train(tr);
  if (pseudo_cmd->parsed()) return cmd_pseudolabel(ps);
  if (bench_cmd->parsed()) return cmd_bench(bo);
  return 1;
}

}  // namespace
}  // namespace evclip

int main(int argc, char** argv) {
  try {
    return evclip::run(argc, argv);
  } catch (const evclip::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
