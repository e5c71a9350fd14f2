#include <gtest/gtest.h>

#include <filesystem>

#include "evclip/error.hpp"
#include "evclip/frames.hpp"
#include "oracles.hpp"

namespace evclip {
namespace {

EventStream counted_stream(std::size_t n) {
  std::vector<Event> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = {0, 0, i, 1};
  return make_stream(1, 1, std::move(ev));
}

std::vector<std::size_t> sizes(const std::vector<EventWindow>& w) {
  std::vector<std::size_t> out;
  for (const auto& x : w) out.push_back(x.size());
  return out;
}

TEST(Windowing, RemainderRule) {
  const WindowingConfig cfg;  // N = 20,000
  EXPECT_EQ(sizes(window_events(counted_stream(25'000), cfg)), (std::vector<std::size_t>{25'000}));
  EXPECT_EQ(sizes(window_events(counted_stream(35'000), cfg)),
            (std::vector<std::size_t>{20'000, 15'000}));
  EXPECT_EQ(sizes(window_events(counted_stream(40'000), cfg)),
            (std::vector<std::size_t>{20'000, 20'000}));
  EXPECT_EQ(sizes(window_events(counted_stream(30'000), cfg)),
            (std::vector<std::size_t>{20'000, 10'000}));
  EXPECT_EQ(sizes(window_events(counted_stream(7), cfg)), (std::vector<std::size_t>{7}));
  EXPECT_TRUE(window_events(counted_stream(0), cfg).empty());
}

TEST(Windowing, OddWindowHalfRoundsUp) {
  const WindowingConfig cfg{5};
  EXPECT_EQ(sizes(window_events(counted_stream(13), cfg)), (std::vector<std::size_t>{5, 5, 3}));
  EXPECT_EQ(sizes(window_events(counted_stream(12), cfg)), (std::vector<std::size_t>{5, 7}));
}

TEST(Windowing, MergePolicyAndOrder) {
  const WindowingConfig cfg{4, RemainderPolicy::kMergeIntoLast};
  const auto s = counted_stream(11);
  const auto w = window_events(s, cfg);
  EXPECT_EQ(sizes(w), (std::vector<std::size_t>{4, 7}));
  EXPECT_EQ(w[1].front().t, 4u);
  EXPECT_EQ(w[1].back().t, 10u);
  EXPECT_THROW(window_events(s, WindowingConfig{0}), ValidationError);
}

TEST(Histogram, WorkedExample) {
  const auto s = make_stream(2, 2, {{1, 0, 0, 1}, {1, 0, 1, 1}, {0, 1, 2, -1}});
  const auto h = build_histogram(s.events, 2, 2);
  EXPECT_EQ(h.pos(0, 1), 2);
  EXPECT_EQ(h.neg(1, 0), 1);
  EXPECT_EQ(h.total(), 3);
  EXPECT_EQ(h.pos.sum(), 2);
  EXPECT_EQ(h.neg.sum(), 1);
}

TEST(Histogram, EmptyWindow) {
  const auto h = build_histogram({}, 3, 2);
  EXPECT_EQ(h.height(), 2);
  EXPECT_EQ(h.width(), 3);
  EXPECT_EQ(h.total(), 0);
}

TEST(Histogram, MatchesCountingOracle) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto s = testing::random_stream(rng, 1000, 64);
    const auto h = build_histogram(s.events, s.width, s.height);
    EXPECT_TRUE(testing::matches(h, testing::count_events(s.events, s.width, s.height)));
    EXPECT_EQ(h.total(), static_cast<std::int64_t>(s.events.size()));
  }
}

TEST(Histogram, HflipMirrorsColumns) {
  Rng rng(12);
  for (int i = 0; i < 30; ++i) {
    const auto s = testing::random_stream(rng, 500, 40);
    const auto a = build_histogram(hflip(s).events, s.width, s.height);
    const auto b = build_histogram(s.events, s.width, s.height);
    EXPECT_EQ(a.pos, b.pos.rowwise().reverse().eval());
    EXPECT_EQ(a.neg, b.neg.rowwise().reverse().eval());
  }
}

TEST(Normalize, JointMax) {
  Histogram2 h{CountGrid::Zero(1, 2), CountGrid::Zero(1, 2)};
  h.pos(0, 0) = 2;
  h.neg(0, 1) = 1;
  const auto n = normalize(h);
  EXPECT_EQ(n.pos(0, 0), 1.0);
  EXPECT_EQ(n.neg(0, 1), 0.5);
}

TEST(Normalize, ZeroAndRange) {
  const auto z = normalize(Histogram2{CountGrid::Zero(2, 2), CountGrid::Zero(2, 2)});
  EXPECT_EQ(z.pos.maxCoeff(), 0.0);
  EXPECT_EQ(z.neg.maxCoeff(), 0.0);
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    const auto s = testing::random_stream(rng, 300, 16);
    if (s.events.empty()) continue;
    const auto n = normalize(build_histogram(s.events, s.width, s.height));
    EXPECT_GE(std::min(n.pos.minCoeff(), n.neg.minCoeff()), 0.0);
    EXPECT_EQ(std::max(n.pos.maxCoeff(), n.neg.maxCoeff()), 1.0);
  }
}

RealGrid one(double v) { return RealGrid::Constant(1, 1, v); }

TEST(Colorize, Examples) {
  auto px = [](const RgbImage& im) {
    return std::array<int, 3>{im.data[0], im.data[1], im.data[2]};
  };
  EXPECT_EQ(px(colorize(one(1.0), one(0.0), ColorMap::kGray)), (std::array<int, 3>{127, 127, 127}));
  EXPECT_EQ(px(colorize(one(0.0), one(0.0), ColorMap::kGray)), (std::array<int, 3>{255, 255, 255}));
  EXPECT_EQ(px(colorize(one(1.0), one(0.5), ColorMap::kRedBlue)), (std::array<int, 3>{255, 0, 128}));
  EXPECT_EQ(px(colorize(one(0.0), one(0.0), ColorMap::kRedBlue)), (std::array<int, 3>{255, 255, 255}));
  // Capped below the background value.
  EXPECT_EQ(px(colorize(one(1.0), one(1.0), ColorMap::kGray)), (std::array<int, 3>{254, 254, 254}));
  // Half-up rounding: 127 * 0.5 = 63.5.
  EXPECT_EQ(px(colorize(one(0.5), one(0.0), ColorMap::kGray))[0], 64);
}

TEST(Colorize, ParseNames) {
  EXPECT_EQ(parse_colormap("gray"), ColorMap::kGray);
  EXPECT_EQ(parse_colormap("red_blue"), ColorMap::kRedBlue);
  EXPECT_THROW(parse_colormap("viridis"), ValidationError);
}

RgbImage pattern(int w, int h) {
  RgbImage im{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto* p = im.pixel(x, y);
      p[0] = static_cast<std::uint8_t>(x % 256);
      p[1] = static_cast<std::uint8_t>(y % 256);
      p[2] = static_cast<std::uint8_t>((x * 7 + y * 3) % 256);
    }
  }
  return im;
}

TEST(ResizeCrop, SquareInputIsIdentity) {
  const auto im = pattern(50, 50);
  const auto out = resize_center_crop(im, 50);
  for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_LE(std::abs(im.data[i] - out.data[i]), 1);
}

TEST(ResizeCrop, SolidColorPreserved) {
  RgbImage im{448, 448, {}};
  for (int i = 0; i < 448 * 448; ++i) {
    im.data.insert(im.data.end(), {12, 200, 77});
  }
  const auto out = resize_center_crop(im, 224);
  ASSERT_EQ(out.width, 224);
  ASSERT_EQ(out.height, 224);
  for (int i = 0; i < 224 * 224; ++i) {
    EXPECT_EQ(out.data[3 * i], 12);
    EXPECT_EQ(out.data[3 * i + 1], 200);
    EXPECT_EQ(out.data[3 * i + 2], 77);
  }
}

TEST(ResizeCrop, WideInputCropsCentralColumns) {
  const auto im = pattern(448, 224);
  const auto out = resize_center_crop(im, 224);
  ASSERT_EQ(out.width, 224);
  for (int y = 0; y < 224; y += 17) {
    for (int x = 0; x < 224; ++x) {
      const auto* a = out.pixel(x, y);
      const auto* b = im.pixel(x + 112, y);
      EXPECT_EQ(a[0], b[0]);
      EXPECT_EQ(a[1], b[1]);
      EXPECT_EQ(a[2], b[2]);
    }
  }
}

TEST(ResizeCrop, Errors) {
  EXPECT_THROW(resize_center_crop(RgbImage{}, 10), ValidationError);
  EXPECT_THROW(resize_center_crop(pattern(4, 4), 0), ValidationError);
}

TEST(Convert, EqualsManualComposition) {
  Rng rng(14);
  for (auto map : {ColorMap::kGray, ColorMap::kRedBlue}) {
    const auto s = testing::random_stream(rng, 3000, 48);
    const WindowingConfig cfg{700};
    const auto frames = convert(s, cfg, map);
    const auto windows = window_events(s, cfg);
    ASSERT_EQ(frames.size(), windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const auto h = build_histogram(windows[i], s.width, s.height);
      const auto n = normalize(h);
      EXPECT_EQ(frames[i].histogram.pos, h.pos);
      EXPECT_EQ(frames[i].histogram.neg, h.neg);
      EXPECT_EQ(frames[i].rgb, colorize(n.pos, n.neg, map));
    }
  }
  EXPECT_TRUE(convert(make_stream(4, 4, {}), {}, ColorMap::kGray).empty());
}

TEST(Convert, WhiteExactlyWhereEmpty) {
  Rng rng(15);
  const auto s = testing::random_stream(rng, 400, 30);
  for (const auto& f : convert(s, WindowingConfig{100}, ColorMap::kGray)) {
    for (int y = 0; y < f.rgb.height; ++y) {
      for (int x = 0; x < f.rgb.width; ++x) {
        const bool empty = f.histogram.pos(y, x) == 0 && f.histogram.neg(y, x) == 0;
        EXPECT_EQ(f.rgb.pixel(x, y)[0] == 255, empty);
      }
    }
  }
}

TEST(Convert, ParallelMatchesSequential) {
  Rng rng(16);
  const auto s = testing::random_stream(rng, 10'000, 64);
  const WindowingConfig cfg{900};
  const auto a = convert(s, cfg, ColorMap::kGray);
  const auto b = convert_parallel(s, cfg, ColorMap::kGray, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].rgb, b[i].rgb);
}

TEST(Frm1, RoundTripAndLayout) {
  Rng rng(17);
  const auto s = testing::random_stream(rng, 2000, 20);
  const auto frames = convert(s, WindowingConfig{500}, ColorMap::kRedBlue);
  const auto bytes = write_frames(frames);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FRM1");
  EXPECT_EQ(bytes.size(), 10 + frames.size() * s.width * s.height * 3);
  const auto back = read_frames(bytes);
  ASSERT_EQ(back.size(), frames.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], frames[i].rgb);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(read_frames(truncated), ValidationError);
}

TEST(Png, WritesFile) {
  const auto path = std::filesystem::temp_directory_path() / "evclip_png_test" / "f.png";
  write_png(pattern(8, 6), path.string());
  ASSERT_TRUE(std::filesystem::exists(path));
  EXPECT_GT(std::filesystem::file_size(path), 8u);
  std::filesystem::remove_all(path.parent_path());
}

}  // namespace
}  // namespace evclip
