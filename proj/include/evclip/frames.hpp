#pragma once

// Event-to-frame conversion: count windows, 2-channel polarity histograms,
// joint-max normalization, colorization and CLIP-style resize/crop.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evclip/events.hpp"

namespace evclip {

enum class RemainderPolicy { kMergeIntoLast, kOwnWindowIfGeHalf };

struct WindowingConfig {
  int events_per_window = 20'000;
  RemainderPolicy remainder = RemainderPolicy::kOwnWindowIfGeHalf;
};

using EventWindow = std::span<const Event>;

std::vector<EventWindow> window_events(const EventStream& stream, const WindowingConfig& cfg);

using CountGrid = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel polarity counts; grids are height x width (row = y).
struct Histogram2 {
  CountGrid pos;
  CountGrid neg;

  int width() const { return static_cast<int>(pos.cols()); }
  int height() const { return static_cast<int>(pos.rows()); }
  std::int64_t total() const { return pos.cast<std::int64_t>().sum() + neg.cast<std::int64_t>().sum(); }
};

Histogram2 build_histogram(EventWindow window, int width, int height);

struct NormalizedHistogram {
  RealGrid pos;
  RealGrid neg;
};

/// Both channels divided by their joint maximum count; all-zero stays zero.
NormalizedHistogram normalize(const Histogram2& hist);

enum class ColorMap { kGray, kRedBlue };

ColorMap parse_colormap(const std::string& name);
std::string colormap_name(ColorMap map);

/// 8-bit interleaved RGB, row-major, height x width x 3.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t* pixel(int x, int y) { return data.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* pixel(int x, int y) const {
    return data.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

RgbImage colorize(const RealGrid& pos, const RealGrid& neg, ColorMap map);

/// Bilinear resize so the shorter side equals `side`, then central crop.
RgbImage resize_center_crop(const RgbImage& image, int side);

struct EventFrame {
  Histogram2 histogram;
  RgbImage rgb;
  ColorMap colormap = ColorMap::kGray;
};

EventFrame make_frame(EventWindow window, int width, int height, ColorMap map);

std::vector<EventFrame> convert(const EventStream& stream, const WindowingConfig& cfg,
                                ColorMap map);

/// Same result as convert(), with windows processed on `threads` workers.
std::vector<EventFrame> convert_parallel(const EventStream& stream, const WindowingConfig& cfg,
                                         ColorMap map, unsigned threads);

/// FRM1: magic, u16 M, u16 height, u16 width, then M*H*W*3 bytes.
Bytes write_frames(std::span<const EventFrame> frames);
std::vector<RgbImage> read_frames(std::span<const std::uint8_t> bytes);

void write_png(const RgbImage& image, const std::string& path);

}  // namespace evclip
