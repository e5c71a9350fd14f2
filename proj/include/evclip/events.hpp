#pragma once

// Event data model, EVT1/CSV formats, stream augmentations and the synthetic
// oriented-bar dataset generator.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evclip/binary_io.hpp"

namespace evclip {

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::int8_t p = 1;    // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

/// An ordered recording from one sensor. Construct through make_stream() or
/// parse_stream() to get the sorted / in-bounds guarantees.
struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<Event> events;
  std::optional<int> label;
  std::string id;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

enum class StreamFormat { kEvt1, kCsv };

/// Validates bounds and polarity, then stable-sorts by timestamp.
EventStream make_stream(std::uint16_t width, std::uint16_t height, std::vector<Event> events,
                        std::string id = {}, std::optional<int> label = std::nullopt);

EventStream parse_stream(std::span<const std::uint8_t> bytes, StreamFormat format);
Bytes write_stream(const EventStream& stream, StreamFormat format = StreamFormat::kEvt1);

/// Picks the format from the extension (.csv => CSV, anything else EVT1).
EventStream load_stream(const std::string& path);
void save_stream(const EventStream& stream, const std::string& path);

// Augmentations. None of them touch label, id, width or height.

/// x -> width - 1 - x.
EventStream hflip(const EventStream& stream);
/// t -> t_max - t with polarity inverted, re-sorted ascending.
EventStream treverse(const EventStream& stream);
/// One global integer shift drawn uniformly from [-J, J]^2; events leaving
/// the sensor are dropped.
EventStream jitter(const EventStream& stream, int max_shift, std::uint64_t seed);

/// The shift jitter() applies for a given (max_shift, seed).
std::pair<int, int> jitter_offset(int max_shift, std::uint64_t seed);

enum class Augmentation { kIdentity, kHflip, kTreverse, kHflipTreverse };

inline constexpr Augmentation kAllAugmentations[] = {
    Augmentation::kIdentity, Augmentation::kHflip, Augmentation::kTreverse,
    Augmentation::kHflipTreverse};

EventStream augment(const EventStream& stream, Augmentation aug);
std::string_view augmentation_name(Augmentation aug);

struct SyntheticDatasetSpec {
  int num_classes = 10;
  int samples_per_class = 10;
  std::uint16_t width = 64;
  std::uint16_t height = 64;
  int events_per_sample = 2000;
  double noise_fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Geometry of a synthetic class: a bar through the sensor centre at
/// class_angle(c) together with its horizontal mirror image, so that the
/// class is unchanged by hflip. Angles are bin centres over [0, pi/2), which
/// keeps every class a genuine cross (angle 0 would collapse to one bar).
double class_angle(int class_index, int num_classes);
inline constexpr double kBarHalfThickness = 1.5;  // pixels
double bar_half_length(std::uint16_t width, std::uint16_t height);

/// Samples are ordered class-major; ids are "c<class>_s<sample>".
std::vector<EventStream> gen_synthetic(const SyntheticDatasetSpec& spec);

}  // namespace evclip
