#include <gtest/gtest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "vthcl/dataset_io.hpp"
#include "vthcl/synth_data.hpp"

using namespace vthcl;

namespace {

GeneratorConfig small_config(int frames = 64) {
  GeneratorConfig g;
  g.height = g.width = 16;
  g.min_radius = 3;
  g.max_radius = 4;
  g.frames = frames;
  return g;
}

}  // namespace

TEST(GenerateDataset, NineInstancesCoverEveryLabelPair) {
  const auto data = generate_dataset(9, 0, small_config());
  std::set<std::pair<int, int>> seen;
  for (const auto& v : data) seen.insert({static_cast<int>(v.shape_label), static_cast<int>(v.speed_label)});
  EXPECT_EQ(seen.size(), 9u);
}

TEST(GenerateDataset, SameSeedIsBitIdentical) {
  const auto a = generate_dataset(9, 0, small_config());
  const auto b = generate_dataset(9, 0, small_config());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].frames == b[i].frames);
    EXPECT_TRUE(a[i].mask == b[i].mask);
  }
  const auto c = generate_dataset(9, 1, small_config());
  EXPECT_FALSE(a[0].frames == c[0].frames);
}

TEST(GenerateDataset, DesktopCorpusIsBalanced) {
  // Label assignment does not depend on pixels; count what the generator emits.
  std::map<std::pair<int, int>, int> counts;
  GeneratorConfig g = small_config();
  for (int i = 0; i < 200; ++i) {
    const auto v = generate_instance(i, 7, g);
    ++counts[{static_cast<int>(v.shape_label), static_cast<int>(v.speed_label)}];
  }
  ASSERT_EQ(counts.size(), 9u);
  for (const auto& [cell, n] : counts) EXPECT_LE(std::abs(n * 9 - 200), 9) << n;
}

TEST(GenerateDataset, RejectsInvalidConfig) {
  GeneratorConfig g;
  g.height = 8;
  EXPECT_THROW(generate_dataset(1, 0, g), ConfigError);
  EXPECT_THROW(generate_dataset(0, 0, small_config()), ConfigError);
  g = small_config();
  g.frames = 32;
  EXPECT_THROW(generate_dataset(1, 0, g), ConfigError);
}

TEST(GenerateDataset, ObjectMovesAtLabelledSpeed) {
  // Mask centroid displacement per frame tracks the nominal speed, away from
  // bounces; check the median step.
  GeneratorConfig g;
  for (int id : {0, 3, 6}) {
    const auto v = generate_instance(id, 11, g);
    std::vector<double> steps;
    double px = -1, py = -1;
    for (int t = 0; t < 64; ++t) {
      double sx = 0, sy = 0, n = 0;
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
          if (v.mask.at(t, y, x) > 0) sx += x, sy += y, ++n;
      sx /= n;
      sy /= n;
      if (t > 0) steps.push_back(std::hypot(sx - px, sy - py));
      px = sx;
      py = sy;
    }
    std::nth_element(steps.begin(), steps.begin() + steps.size() / 2, steps.end());
    const double nominal = g.speeds[static_cast<int>(v.speed_label)];
    EXPECT_NEAR(steps[steps.size() / 2], nominal, 0.35 * nominal + 0.1) << "id " << id;
  }
}

TEST(SampleRawClip, FullVideoUnchanged) {
  const auto v = generate_instance(0, 0, small_config(64));
  const auto raw = sample_raw_clip(v, 0);
  EXPECT_TRUE(raw.frames == v.frames);
}

TEST(SampleRawClip, LastSixtyFourFrames) {
  const auto v = generate_instance(1, 0, small_config(128));
  const auto raw = sample_raw_clip(v, 64);
  const std::size_t fs = v.frames.size() / 128;
  ASSERT_EQ(raw.frames.dim(0), 64u);
  for (std::size_t i = 0; i < raw.frames.size(); ++i) ASSERT_EQ(raw.frames[i], v.frames[64 * fs + i]);
}

TEST(SampleRawClip, OutOfRangeStart) {
  const auto v = generate_instance(1, 0, small_config(100));
  EXPECT_THROW(sample_raw_clip(v, 40), BoundsError);
  EXPECT_NO_THROW(sample_raw_clip(v, 36));
  EXPECT_THROW(sample_raw_clip(v, -1), BoundsError);
}

TEST(MakeTempoPair, DefaultStrides) {
  EXPECT_EQ(slow_frame_indices(8), (std::vector<int>{0, 8, 16, 24, 32, 40, 48, 56}));
  std::vector<int> fast;
  for (int i = 0; i < 64; i += 4) fast.push_back(i);
  EXPECT_EQ(fast_frame_indices(8, 2), fast);

  const auto v = generate_instance(2, 0, small_config());
  const auto p = make_tempo_pair(sample_raw_clip(v, 0), 8, 2);
  ASSERT_EQ(p.slow.dim(0), 8u);
  ASSERT_EQ(p.fast.dim(0), 16u);
  const std::size_t fs = v.frames.size() / 64;
  for (std::size_t j = 0; j < 16; ++j)
    for (std::size_t k = 0; k < fs; ++k) ASSERT_EQ(p.fast[j * fs + k], v.frames[(4 * j) * fs + k]);
}

TEST(MakeTempoPair, AlphaOneIsIdentity) {
  const auto v = generate_instance(3, 0, small_config());
  const auto p = make_tempo_pair(sample_raw_clip(v, 0), 8, 1);
  EXPECT_EQ(p.slow.dim(0), 8u);
  EXPECT_TRUE(p.slow == p.fast);
}

TEST(MakeTempoPair, AlphaFour) {
  std::vector<int> want;
  for (int i = 0; i < 64; i += 2) want.push_back(i);
  EXPECT_EQ(fast_frame_indices(8, 4), want);
  const auto v = generate_instance(4, 0, small_config());
  EXPECT_EQ(make_tempo_pair(sample_raw_clip(v, 0), 8, 4).fast.dim(0), 32u);
}

TEST(MakeTempoPair, NonDivisibleRejected) {
  const auto raw = sample_raw_clip(generate_instance(0, 0, small_config()), 0);
  EXPECT_THROW(make_tempo_pair(raw, 8, 3), ConfigError);
  EXPECT_THROW(make_tempo_pair(raw, 7, 1), ConfigError);
  EXPECT_THROW(make_tempo_pair(raw, 8, 0), ConfigError);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = oracle::scratch_dir("dataset_io");
  const auto g = small_config();
  const auto data = generate_dataset(3, 5, g);
  save_dataset(dir, data, g, 5);
  const auto info = read_dataset_info(dir);
  EXPECT_EQ(info.num_instances, 3);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(back[i].frames == data[i].frames);
    EXPECT_TRUE(back[i].mask == data[i].mask);
    EXPECT_EQ(back[i].speed_label, data[i].speed_label);
    EXPECT_EQ(back[i].shape_label, data[i].shape_label);
  }
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, MissingDirectory) {
  EXPECT_THROW(read_dataset_info("/nonexistent/vthcl"), IoError);
}
