#include "evclip/train.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>

namespace evclip {

GroupRates peak_rates(const TrainConfig& cfg, AdapterKind kind) {
  GroupRates r;
  r.visual = cfg.peak_lr_visual;
  if (cfg.peak_lr_text) {
    r.text = *cfg.peak_lr_text;
  } else {
    r.text = kind == AdapterKind::kText ? 1e-3 : cfg.peak_lr_visual;
  }
  return r;
}

double lr_at(std::int64_t step, std::int64_t total_steps, double peak, double warmup_fraction) {
  if (total_steps <= 0 || step <= 0) return 0.0;
  step = std::min(step, total_steps);
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_fraction * total_steps));
  if (step < warmup || total_steps <= warmup) {
    return peak * static_cast<double>(step) / static_cast<double>(std::max<std::int64_t>(warmup, 1));
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

FewShotSelection sample_few_shot(std::span<const LabeledId> dataset, int shots, std::uint64_t seed,
                                 std::span<const std::string> exclude) {
  if (dataset.empty()) throw ValidationError("sample_few_shot: empty dataset");
  if (shots < 1) throw ValidationError("sample_few_shot: shots must be >= 1");
  const std::unordered_set<std::string> skip(exclude.begin(), exclude.end());
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!skip.contains(dataset[i].id)) by_class[dataset[i].label].push_back(i);
  }
  FewShotSelection out;
  for (auto& [label, members] : by_class) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(members.begin(), members.end());
    if (members.size() < static_cast<std::size_t>(shots)) {
      out.warnings.push_back("class " + std::to_string(label) + " has only " +
                             std::to_string(members.size()) + " samples for " +
                             std::to_string(shots) + " shots; taking all");
    }
    const auto take = std::min(members.size(), static_cast<std::size_t>(shots));
    out.indices.insert(out.indices.end(), members.begin(), members.begin() + take);
  }
  return out;
}

std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::ostringstream os;
  os.precision(17);
  os << "step,lr,loss\n";
  for (const auto& p : curve) os << p.step << ',' << p.lr << ',' << p.loss << '\n';
  return os.str();
}

}  // namespace evclip
