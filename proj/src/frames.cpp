#include "evclip/frames.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

namespace evclip {
namespace {

std::uint8_t round_half_up(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

std::vector<EventWindow> window_events(const EventStream& stream, const WindowingConfig& cfg) {
  if (cfg.events_per_window < 1) throw ValidationError("events per window must be >= 1");
  const std::size_t n = stream.events.size();
  const auto size = static_cast<std::size_t>(cfg.events_per_window);
  std::vector<EventWindow> windows;
  if (n == 0) return windows;
  const EventWindow all(stream.events);
  if (n < size) {
    windows.push_back(all);
    return windows;
  }
  const std::size_t full = n / size;
  const std::size_t rem = n % size;
  const bool own = rem != 0 && cfg.remainder == RemainderPolicy::kOwnWindowIfGeHalf &&
                   rem >= (size + 1) / 2;
  for (std::size_t i = 0; i < full; ++i) windows.push_back(all.subspan(i * size, size));
  if (own) {
    windows.push_back(all.subspan(full * size));
  } else if (rem != 0) {
    windows.back() = all.subspan((full - 1) * size);
  }
  return windows;
}

Histogram2 build_histogram(EventWindow window, int width, int height) {
  Histogram2 h{CountGrid::Zero(height, width), CountGrid::Zero(height, width)};
  std::int32_t* pos = h.pos.data();
  std::int32_t* neg = h.neg.data();
  for (const Event& e : window) {
    const std::size_t idx = static_cast<std::size_t>(e.y) * width + e.x;
    if (e.p > 0) {
      ++pos[idx];
    } else {
      ++neg[idx];
    }
  }
  return h;
}

NormalizedHistogram normalize(const Histogram2& hist) {
  const std::int32_t m = std::max(hist.pos.size() ? hist.pos.maxCoeff() : 0,
                                  hist.neg.size() ? hist.neg.maxCoeff() : 0);
  if (m == 0) {
    return {RealGrid::Zero(hist.height(), hist.width()), RealGrid::Zero(hist.height(), hist.width())};
  }
  const double inv = 1.0 / m;
  return {hist.pos.cast<double>() * inv, hist.neg.cast<double>() * inv};
}

ColorMap parse_colormap(const std::string& name) {
  if (name == "gray") return ColorMap::kGray;
  if (name == "red_blue") return ColorMap::kRedBlue;
  throw ValidationError("unknown colormap \"" + name + "\" (gray | red_blue)");
}

std::string colormap_name(ColorMap map) { return map == ColorMap::kGray ? "gray" : "red_blue"; }

RgbImage colorize(const RealGrid& pos, const RealGrid& neg, ColorMap map) {
  RgbImage img;
  img.width = static_cast<int>(pos.cols());
  img.height = static_cast<int>(pos.rows());
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  const double* pn = pos.data();
  const double* nn = neg.data();
  std::uint8_t* out = img.data.data();
  const auto count = static_cast<std::size_t>(pos.size());
  for (std::size_t i = 0; i < count; ++i, out += 3) {
    if (pn[i] == 0.0 && nn[i] == 0.0) {
      out[0] = out[1] = out[2] = 255;
      continue;
    }
    if (map == ColorMap::kGray) {
      // 254 cap: an occupied pixel never reads as the white background.
      const std::uint8_t v = std::min<std::uint8_t>(round_half_up(127.0 * pn[i] + 127.0 * nn[i]), 254);
      out[0] = out[1] = out[2] = v;
    } else {
      out[0] = round_half_up(255.0 * pn[i]);
      out[1] = 0;
      out[2] = round_half_up(255.0 * nn[i]);
    }
  }
  return img;
}

RgbImage resize_center_crop(const RgbImage& image, int side) {
  if (side < 1) throw ValidationError("crop side must be >= 1");
  if (image.width <= 0 || image.height <= 0) throw ValidationError("cannot resize an empty image");
  const double scale = static_cast<double>(side) / std::min(image.width, image.height);
  const int rw = std::max(side, static_cast<int>(std::lround(image.width * scale)));
  const int rh = std::max(side, static_cast<int>(std::lround(image.height * scale)));
  const double sx = static_cast<double>(image.width) / rw;
  const double sy = static_cast<double>(image.height) / rh;
  const int x0 = (rw - side) / 2;
  const int y0 = (rh - side) / 2;

  RgbImage out{side, side, std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side * 3)};
  for (int oy = 0; oy < side; ++oy) {
    const double fy = std::clamp((oy + y0 + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int ya = static_cast<int>(std::floor(fy));
    const int yb = std::min(ya + 1, image.height - 1);
    const double wy = fy - ya;
    for (int ox = 0; ox < side; ++ox) {
      const double fx = std::clamp((ox + x0 + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int xa = static_cast<int>(std::floor(fx));
      const int xb = std::min(xa + 1, image.width - 1);
      const double wx = fx - xa;
      std::uint8_t* dst = out.pixel(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * image.pixel(xa, ya)[c] + wx * image.pixel(xb, ya)[c];
        const double bottom = (1.0 - wx) * image.pixel(xa, yb)[c] + wx * image.pixel(xb, yb)[c];
        dst[c] = round_half_up((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

EventFrame make_frame(EventWindow window, int width, int height, ColorMap map) {
  EventFrame frame;
  frame.histogram = build_histogram(window, width, height);
  const auto norm = normalize(frame.histogram);
  frame.rgb = colorize(norm.pos, norm.neg, map);
  frame.colormap = map;
  return frame;
}

std::vector<EventFrame> convert(const EventStream& stream, const WindowingConfig& cfg,
                                ColorMap map) {
  std::vector<EventFrame> frames;
  for (const auto& window : window_events(stream, cfg)) {
    frames.push_back(make_frame(window, stream.width, stream.height, map));
  }
  return frames;
}

std::vector<EventFrame> convert_parallel(const EventStream& stream, const WindowingConfig& cfg,
                                         ColorMap map, unsigned threads) {
  const auto windows = window_events(stream, cfg);
  std::vector<EventFrame> frames(windows.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(windows.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < windows.size(); ++i) {
      frames[i] = make_frame(windows[i], stream.width, stream.height, map);
    }
    return frames;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < windows.size(); i = next++) {
        frames[i] = make_frame(windows[i], stream.width, stream.height, map);
      }
    });
  }
  pool.clear();
  return frames;
}

Bytes write_frames(std::span<const EventFrame> frames) {
  ByteWriter w;
  w.put_magic("FRM1");
  if (frames.size() > 0xffff) throw ValidationError("FRM1 holds at most 65535 frames");
  const int height = frames.empty() ? 0 : frames.front().rgb.height;
  const int width = frames.empty() ? 0 : frames.front().rgb.width;
  if (height > 0xffff || width > 0xffff) throw ValidationError("FRM1 frame too large");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(frames.size()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(height));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(width));
  for (const auto& f : frames) {
    if (f.rgb.width != width || f.rgb.height != height) {
      throw ValidationError("FRM1 frames must share one size");
    }
    w.put_array(std::span<const std::uint8_t>(f.rgb.data));
  }
  return std::move(w).bytes();
}

std::vector<RgbImage> read_frames(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "FRM1");
  r.expect_magic("FRM1");
  const int m = r.get<std::uint16_t>();
  const int height = r.get<std::uint16_t>();
  const int width = r.get<std::uint16_t>();
  std::vector<RgbImage> out(m);
  for (auto& img : out) {
    img.width = width;
    img.height = height;
    img.data.resize(static_cast<std::size_t>(width) * height * 3);
    r.get_array(std::span<std::uint8_t>(img.data));
  }
  r.expect_end();
  return out;
}

void write_png(const RgbImage& image, const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw RuntimeError("writing " + path + ": " + png.message);
  }
}

}  // namespace evclip
