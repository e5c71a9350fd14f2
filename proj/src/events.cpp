#include "evclip/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "evclip/rng.hpp"

namespace evclip {
namespace {

constexpr std::string_view kEvt1Magic = "EVT1";

void sort_by_time(std::vector<Event>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
    field.remove_suffix(1);
  }
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc{} || ptr != end || field.empty()) {
    throw ValidationError("CSV line " + std::to_string(line_no) + ": bad number \"" +
                          std::string(field) + "\"");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

EventStream parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError("CSV: missing \"width,height\" header");

  const auto header = split(lines[0], ',');
  if (header.size() != 2) throw ValidationError("CSV: header must be \"width,height\"");
  const auto width = parse_number<std::uint32_t>(header[0], 1);
  const auto height = parse_number<std::uint32_t>(header[1], 1);
  if (width == 0 || height == 0 || width > 0xffff || height > 0xffff) {
    throw ValidationError("CSV: sensor size out of range");
  }

  std::vector<Event> events;
  events.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], ',');
    if (f.size() != 4) {
      throw ValidationError("CSV line " + std::to_string(i + 1) + ": expected x,y,t,p");
    }
    const auto x = parse_number<std::int64_t>(f[0], i + 1);
    const auto y = parse_number<std::int64_t>(f[1], i + 1);
    const auto t = parse_number<std::uint64_t>(f[2], i + 1);
    const auto p = parse_number<int>(f[3], i + 1);
    if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(width) ||
        y >= static_cast<std::int64_t>(height)) {
      throw ValidationError("CSV line " + std::to_string(i + 1) + ": event (" +
                            std::to_string(x) + "," + std::to_string(y) + ") outside " +
                            std::to_string(width) + "x" + std::to_string(height) + " sensor");
    }
    std::int8_t pol;
    if (p == 1) {
      pol = 1;
    } else if (p == -1 || p == 0) {
      pol = -1;
    } else {
      throw ValidationError("CSV line " + std::to_string(i + 1) + ": polarity " +
                            std::to_string(p) + " not in {-1,0,1}");
    }
    events.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t, pol});
  }
  return make_stream(static_cast<std::uint16_t>(width), static_cast<std::uint16_t>(height),
                     std::move(events));
}

EventStream parse_evt1(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "EVT1");
  r.expect_magic(kEvt1Magic);
  const auto width = r.get<std::uint16_t>();
  const auto height = r.get<std::uint16_t>();
  const auto count = r.get<std::uint64_t>();
  constexpr std::size_t kRecord = 8 + 2 + 2 + 1;
  if (count > r.remaining() / kRecord) {
    throw ValidationError("EVT1: truncated record section (" + std::to_string(count) +
                          " events declared)");
  }
  std::vector<Event> events(count);
  for (auto& e : events) {
    e.t = r.get<std::uint64_t>();
    e.x = r.get<std::uint16_t>();
    e.y = r.get<std::uint16_t>();
    e.p = r.get<std::int8_t>();
  }
  r.expect_end();
  return make_stream(width, height, std::move(events));
}

}  // namespace

EventStream make_stream(std::uint16_t width, std::uint16_t height, std::vector<Event> events,
                        std::string id, std::optional<int> label) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw ValidationError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                            std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " sensor");
    }
    if (e.p != 1 && e.p != -1) {
      throw ValidationError("event " + std::to_string(i) + ": polarity " + std::to_string(e.p) +
                            " not in {-1,+1}");
    }
  }
  if (!std::is_sorted(events.begin(), events.end(),
                      [](const Event& a, const Event& b) { return a.t < b.t; })) {
    sort_by_time(events);
  }
  return EventStream{width, height, std::move(events), label, std::move(id)};
}

EventStream parse_stream(std::span<const std::uint8_t> bytes, StreamFormat format) {
  if (format == StreamFormat::kCsv) {
    return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  return parse_evt1(bytes);
}

Bytes write_stream(const EventStream& stream, StreamFormat format) {
  if (format == StreamFormat::kCsv) {
    std::string text = std::to_string(stream.width) + "," + std::to_string(stream.height) + "\n";
    for (const auto& e : stream.events) {
      text += std::to_string(e.x) + "," + std::to_string(e.y) + "," + std::to_string(e.t) + "," +
              std::to_string(static_cast<int>(e.p)) + "\n";
    }
    return Bytes(text.begin(), text.end());
  }
  ByteWriter w;
  w.put_magic(kEvt1Magic);
  w.put<std::uint16_t>(stream.width);
  w.put<std::uint16_t>(stream.height);
  w.put<std::uint64_t>(stream.events.size());
  for (const auto& e : stream.events) {
    w.put<std::uint64_t>(e.t);
    w.put<std::uint16_t>(e.x);
    w.put<std::uint16_t>(e.y);
    w.put<std::int8_t>(e.p);
  }
  return std::move(w).bytes();
}

EventStream load_stream(const std::string& path) {
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  return parse_stream(read_file(path), csv ? StreamFormat::kCsv : StreamFormat::kEvt1);
}

void save_stream(const EventStream& stream, const std::string& path) {
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  write_file(path, write_stream(stream, csv ? StreamFormat::kCsv : StreamFormat::kEvt1));
}

EventStream hflip(const EventStream& stream) {
  EventStream out = stream;
  for (auto& e : out.events) e.x = static_cast<std::uint16_t>(stream.width - 1 - e.x);
  return out;
}

EventStream treverse(const EventStream& stream) {
  EventStream out = stream;
  if (out.events.empty()) return out;
  std::uint64_t t_max = 0;
  for (const auto& e : out.events) t_max = std::max(t_max, e.t);
  for (auto& e : out.events) {
    e.t = t_max - e.t;
    e.p = static_cast<std::int8_t>(-e.p);
  }
  // Sorted input reversed is sorted by the new timestamps; equal stamps keep
  // the reversed relative order.
  std::reverse(out.events.begin(), out.events.end());
  sort_by_time(out.events);
  return out;
}

std::pair<int, int> jitter_offset(int max_shift, std::uint64_t seed) {
  if (max_shift <= 0) return {0, 0};
  Rng rng(mix_seed(seed, 0x6a697474ULL));
  const int dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  const int dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  return {dx, dy};
}

EventStream jitter(const EventStream& stream, int max_shift, std::uint64_t seed) {
  if (max_shift < 0) throw ValidationError("jitter: negative shift range");
  const auto [dx, dy] = jitter_offset(max_shift, seed);
  EventStream out = stream;
  if (dx == 0 && dy == 0) return out;
  out.events.clear();
  for (const auto& e : stream.events) {
    const int x = e.x + dx;
    const int y = e.y + dy;
    if (x < 0 || y < 0 || x >= stream.width || y >= stream.height) continue;
    out.events.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), e.t, e.p});
  }
  return out;
}

EventStream augment(const EventStream& stream, Augmentation aug) {
  switch (aug) {
    case Augmentation::kIdentity:
      return stream;
    case Augmentation::kHflip:
      return hflip(stream);
    case Augmentation::kTreverse:
      return treverse(stream);
    case Augmentation::kHflipTreverse:
      return treverse(hflip(stream));
  }
  return stream;
}

std::string_view augmentation_name(Augmentation aug) {
  switch (aug) {
    case Augmentation::kIdentity:
      return "identity";
    case Augmentation::kHflip:
      return "hflip";
    case Augmentation::kTreverse:
      return "treverse";
    case Augmentation::kHflipTreverse:
      return "hflip+treverse";
  }
  return "?";
}

double class_angle(int class_index, int num_classes) {
  return (class_index + 0.5) * std::numbers::pi / (2.0 * num_classes);
}

double bar_half_length(std::uint16_t width, std::uint16_t height) {
  return 0.45 * std::min(width, height);
}

std::vector<EventStream> gen_synthetic(const SyntheticDatasetSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("synthetic dataset needs >= 2 classes");
  if (spec.events_per_sample < 1) throw ValidationError("events_per_sample must be >= 1");
  if (spec.samples_per_class < 0) throw ValidationError("samples_per_class must be >= 0");
  if (spec.width == 0 || spec.height == 0) throw ValidationError("empty sensor");
  if (!(spec.noise_fraction >= 0.0 && spec.noise_fraction <= 1.0)) {
    throw ValidationError("noise_fraction must lie in [0,1]");
  }

  constexpr std::uint64_t kDuration = 100'000;
  const double cx = (spec.width - 1) / 2.0;
  const double cy = (spec.height - 1) / 2.0;
  const double half_len = bar_half_length(spec.width, spec.height);
  const int n_noise =
      static_cast<int>(std::lround(spec.noise_fraction * spec.events_per_sample));
  const int n_signal = spec.events_per_sample - n_noise;

  std::vector<EventStream> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
  for (int c = 0; c < spec.num_classes; ++c) {
    const double theta = class_angle(c, spec.num_classes);
    const double arms[2] = {theta, std::numbers::pi - theta};
    for (int s = 0; s < spec.samples_per_class; ++s) {
      Rng rng(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(c)),
                       static_cast<std::uint64_t>(s)));
      std::vector<Event> events;
      events.reserve(spec.events_per_sample);
      while (static_cast<int>(events.size()) < n_signal) {
        const double a = arms[rng.uniform_int(0, 1)];
        const double u = rng.uniform(-half_len, half_len);
        const double v = rng.uniform(-kBarHalfThickness, kBarHalfThickness);
        const long x = std::lround(cx + u * std::cos(a) - v * std::sin(a));
        const long y = std::lround(cy + u * std::sin(a) + v * std::cos(a));
        if (x < 0 || y < 0 || x >= spec.width || y >= spec.height) continue;
        const auto t = static_cast<std::uint64_t>(rng.uniform_int(0, kDuration));
        events.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t,
                          static_cast<std::int8_t>(v >= 0.0 ? 1 : -1)});
      }
      for (int i = 0; i < n_noise; ++i) {
        const auto x = static_cast<std::uint16_t>(rng.uniform_int(0, spec.width - 1));
        const auto y = static_cast<std::uint16_t>(rng.uniform_int(0, spec.height - 1));
        const auto t = static_cast<std::uint64_t>(rng.uniform_int(0, kDuration));
        const auto p = static_cast<std::int8_t>(rng.uniform_int(0, 1) == 1 ? 1 : -1);
        events.push_back({x, y, t, p});
      }
      out.push_back(make_stream(spec.width, spec.height, std::move(events),
                                "c" + std::to_string(c) + "_s" + std::to_string(s), c));
    }
  }
  return out;
}

}  // namespace evclip
