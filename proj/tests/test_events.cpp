#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include "evclip/error.hpp"
#include "evclip/events.hpp"
#include "oracles.hpp"

namespace evclip {
namespace {

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

TEST(ParseStream, Csv) {
  const auto s = parse_stream(as_bytes("2,2\n0,1,100,1\n1,0,250,-1"), StreamFormat::kCsv);
  EXPECT_EQ(s.width, 2);
  EXPECT_EQ(s.height, 2);
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_EQ(s.events[0], (Event{0, 1, 100, 1}));
  EXPECT_EQ(s.events[1], (Event{1, 0, 250, -1}));
}

TEST(ParseStream, CsvZeroOnePolarity) {
  const auto s = parse_stream(as_bytes("3,3\n0,0,5,0\n1,1,6,1\n"), StreamFormat::kCsv);
  EXPECT_EQ(s.events[0].p, -1);
  EXPECT_EQ(s.events[1].p, 1);
}

TEST(ParseStream, CsvOutOfBounds) {
  EXPECT_THROW(parse_stream(as_bytes("2,2\n5,0,1,1"), StreamFormat::kCsv), ValidationError);
}

TEST(ParseStream, CsvBadPolarityAndHeader) {
  EXPECT_THROW(parse_stream(as_bytes("2,2\n0,0,1,3"), StreamFormat::kCsv), ValidationError);
  EXPECT_THROW(parse_stream(as_bytes("two,2\n"), StreamFormat::kCsv), ValidationError);
  EXPECT_THROW(parse_stream(as_bytes(""), StreamFormat::kCsv), ValidationError);
}

TEST(ParseStream, UnsortedInputIsStablySorted) {
  const auto s = parse_stream(as_bytes("4,4\n0,0,9,1\n1,0,3,1\n2,0,3,-1\n"), StreamFormat::kCsv);
  EXPECT_EQ(s.events[0], (Event{1, 0, 3, 1}));
  EXPECT_EQ(s.events[1], (Event{2, 0, 3, -1}));
  EXPECT_EQ(s.events[2], (Event{0, 0, 9, 1}));
}

TEST(Evt1, RoundTripIsByteExact) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto s = testing::random_stream(rng, 500, 300);
    const auto bytes = write_stream(s);
    const auto back = parse_stream(bytes, StreamFormat::kEvt1);
    EXPECT_EQ(back.events, s.events);
    EXPECT_EQ(write_stream(back), bytes);
  }
}

TEST(Evt1, LayoutAndErrors) {
  const auto s = make_stream(3, 2, {{2, 1, 7, -1}});
  const auto bytes = write_stream(s);
  ASSERT_EQ(bytes.size(), 4u + 2 + 2 + 8 + (8 + 2 + 2 + 1));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "EVT1");
  EXPECT_EQ(bytes[4], 3);
  EXPECT_EQ(bytes[6], 2);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(parse_stream(truncated, StreamFormat::kEvt1), ValidationError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_stream(bad_magic, StreamFormat::kEvt1), ValidationError);
  auto bad_pol = bytes;
  bad_pol.back() = 2;
  EXPECT_THROW(parse_stream(bad_pol, StreamFormat::kEvt1), ValidationError);
}

TEST(Evt1, FileFormatChosenByExtension) {
  const auto dir = std::filesystem::temp_directory_path() / "evclip_events_test";
  std::filesystem::create_directories(dir);
  const auto s = make_stream(4, 4, {{1, 2, 3, 1}, {3, 3, 10, -1}}, "x");
  save_stream(s, (dir / "a.csv").string());
  save_stream(s, (dir / "a.evt").string());
  EXPECT_EQ(load_stream((dir / "a.csv").string()).events, s.events);
  EXPECT_EQ(load_stream((dir / "a.evt").string()).events, s.events);
  std::filesystem::remove_all(dir);
}

TEST(Hflip, Reflection) {
  auto s = make_stream(240, 10, {{0, 0, 1, 1}});
  EXPECT_EQ(hflip(s).events[0].x, 239);
  auto two = make_stream(2, 2, {{0, 0, 1, 1}, {1, 1, 2, -1}});
  const auto f = hflip(two);
  EXPECT_EQ(f.events[0].x, 1);
  EXPECT_EQ(f.events[1].x, 0);
  EXPECT_EQ(f.events[0].y, 0);
  EXPECT_EQ(f.events[1].t, 2u);
}

TEST(Hflip, InvolutionAndMetadata) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto s = testing::random_stream(rng, 300, 64);
    s.label = 4;
    const auto f = hflip(s);
    EXPECT_EQ(f.label, s.label);
    EXPECT_EQ(f.width, s.width);
    EXPECT_EQ(hflip(f), s);
  }
}

TEST(Treverse, Examples) {
  const auto s = treverse(make_stream(4, 4, {{0, 0, 1, 1}, {1, 0, 5, -1}}));
  ASSERT_EQ(s.events.size(), 2u);
  EXPECT_EQ(s.events[0].t, 0u);
  EXPECT_EQ(s.events[0].p, 1);
  EXPECT_EQ(s.events[0].x, 1);
  EXPECT_EQ(s.events[1].t, 4u);
  EXPECT_EQ(s.events[1].p, -1);
  EXPECT_EQ(s.events[1].x, 0);

  const auto one = treverse(make_stream(4, 4, {{2, 2, 7, 1}}));
  EXPECT_EQ(one.events[0], (Event{2, 2, 0, -1}));
  EXPECT_TRUE(treverse(make_stream(4, 4, {})).events.empty());
}

TEST(Treverse, MultisetInvolution) {
  Rng rng(6);
  auto key = [](const Event& e) { return std::tuple(e.t, e.x, e.y, e.p); };
  for (int i = 0; i < 20; ++i) {
    const auto s = testing::random_stream(rng, 300, 32);
    auto a = s.events;
    auto b = treverse(treverse(s)).events;
    // Timestamps shift by the minimum when it is nonzero; compare relative to it.
    const std::uint64_t t0 = a.empty() ? 0 : a.front().t;
    for (auto& e : a) e.t -= t0;
    auto by_key = [&](const Event& l, const Event& r) { return key(l) < key(r); };
    std::sort(a.begin(), a.end(), by_key);
    std::sort(b.begin(), b.end(), by_key);
    EXPECT_EQ(a, b);
  }
}

TEST(Jitter, ZeroIsIdentity) {
  Rng rng(8);
  const auto s = testing::random_stream(rng, 200, 32);
  EXPECT_EQ(jitter(s, 0, 123), s);
}

TEST(Jitter, GoldenDraw) {
  EXPECT_EQ(jitter_offset(1, 0), std::make_pair(1, 1));
  EXPECT_EQ(jitter_offset(1, 2), std::make_pair(-1, 0));
  const auto s = jitter(make_stream(2, 2, {{0, 0, 1, 1}}), 1, 0);
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.events[0].x, 1);
  EXPECT_EQ(s.events[0].y, 1);
}

TEST(Jitter, DropsEventsLeavingTheSensor) {
  // seed 0 shifts by (+1, +1).
  const auto s = make_stream(2, 2, {{0, 0, 1, 1}, {1, 0, 2, 1}, {0, 1, 3, -1}});
  const auto j = jitter(s, 1, 0);
  EXPECT_EQ(j.events.size(), 1u);
  EXPECT_THROW(jitter(s, -1, 0), ValidationError);
}

TEST(Synthetic, CleanClassZeroIsShallowCross) {
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 3;
  const auto data = gen_synthetic(spec);
  ASSERT_EQ(data.size(), 30u);
  // Classes sit at the centres of equal bins over [0, pi/2).
  EXPECT_DOUBLE_EQ(class_angle(0, 10), std::numbers::pi / 40);
  EXPECT_DOUBLE_EQ(class_angle(9, 10), 19 * std::numbers::pi / 40);
  const double cx = (spec.width - 1) / 2.0, cy = (spec.height - 1) / 2.0;
  const double t = std::tan(std::numbers::pi / 40);
  for (int s = 0; s < 3; ++s) {
    const auto& st = data[s];
    EXPECT_EQ(st.label, 0);
    EXPECT_EQ(st.id, "c0_s" + std::to_string(s));
    EXPECT_EQ(st.events.size(), 2000u);
    for (const auto& e : st.events) {
      const double dx = e.x - cx, dy = e.y - cy;
      EXPECT_LE(std::min(std::abs(dy - t * dx), std::abs(dy + t * dx)), 2.0);
    }
  }
}

TEST(Synthetic, EveryClassHflipInvariant) {
  // Mirror-pair classes: the flipped stream stays near its own class's bars.
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 1;
  const auto data = gen_synthetic(spec);
  const double cx = (spec.width - 1) / 2.0, cy = (spec.height - 1) / 2.0;
  for (const auto& st : data) {
    const double theta = class_angle(*st.label, spec.num_classes);
    for (const auto& e : hflip(st).events) {
      const double dx = e.x - cx, dy = e.y - cy;
      const double d1 = std::abs(-dx * std::sin(theta) + dy * std::cos(theta));
      const double d2 = std::abs(dx * std::sin(theta) + dy * std::cos(theta));
      EXPECT_LE(std::min(d1, d2), 2.5);
    }
  }
}

TEST(Synthetic, Deterministic) {
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 2;
  spec.noise_fraction = 0.3;
  const auto a = gen_synthetic(spec);
  const auto b = gen_synthetic(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(write_stream(a[i]), write_stream(b[i]));
  spec.seed = 1;
  EXPECT_NE(write_stream(gen_synthetic(spec)[0]), write_stream(a[0]));
}

TEST(Synthetic, PureNoiseClassesIndistinguishable) {
  SyntheticDatasetSpec spec;
  spec.samples_per_class = 5;
  spec.noise_fraction = 1.0;
  const auto data = gen_synthetic(spec);
  constexpr int kBlocks = 8;  // 8x8 spatial cells of 8x8 pixels
  std::vector<std::vector<double>> table(spec.num_classes,
                                         std::vector<double>(kBlocks * kBlocks, 0.0));
  for (const auto& st : data) {
    for (const auto& e : st.events) table[*st.label][(e.y / 8) * kBlocks + e.x / 8] += 1;
  }
  const auto [stat, df] = testing::chi_square_independence(table);
  EXPECT_GT(testing::chi_square_upper_tail(stat, df), 0.01) << "chi2=" << stat << " df=" << df;
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticDatasetSpec spec;
  spec.num_classes = 1;
  EXPECT_THROW(gen_synthetic(spec), ValidationError);
  spec = {};
  spec.events_per_sample = 0;
  EXPECT_THROW(gen_synthetic(spec), ValidationError);
  spec = {};
  spec.noise_fraction = 1.5;
  EXPECT_THROW(gen_synthetic(spec), ValidationError);
}

}  // namespace
}  // namespace evclip
