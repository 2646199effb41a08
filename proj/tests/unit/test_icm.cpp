#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"
#include "vthcl/icm.hpp"
#include "vthcl/trainer.hpp"

using namespace vthcl;

namespace {

// phi(x) = x for non-negative x.
ProjectionHead<double> identity_head(std::size_t d) {
  ProjectionHead<double> h{Tensor<double>({d, d}), Tensor<double>({d}), Tensor<double>({d, d}), Tensor<double>({d})};
  for (std::size_t i = 0; i < d; ++i) h.w1.at(i, i) = h.w2.at(i, i) = 1.0;
  return h;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST(ComputeIcm, ParallelLocationsGiveOnes) {
  Tensor<double> a({3, 2, 2, 2});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 8; ++p) a[c * 8 + p] = 1.0 + static_cast<double>(c);
  std::vector<double> ref{2, 4, 6};
  const auto m = compute_icm<double>(a, ref, identity_head(3));
  for (double v : m.values.storage()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(ComputeIcm, OrthogonalReferenceGivesZeros) {
  Tensor<double> a({3, 1, 2, 2});
  for (std::size_t p = 0; p < 4; ++p) a[p] = 1.0 + static_cast<double>(p), a[4 + p] = 0.5;
  std::vector<double> ref{0, 0, 1};
  const auto m = compute_icm<double>(a, ref, identity_head(3));
  for (double v : m.values.storage()) EXPECT_EQ(v, 0.0);
  for (double v : m.normalized.storage()) EXPECT_EQ(v, 0.0);  // flat map
}

TEST(ComputeIcm, HandFilledTwoByOneByTwoByTwo) {
  // activation[c][0][h][w]
  const double x[2][4] = {{1, 0, 3, 2}, {0, 2, 4, 0}};
  Tensor<double> a({2, 1, 2, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t p = 0; p < 4; ++p) a[c * 4 + p] = x[c][p];
  std::vector<double> ref{3, 4};
  const auto m = compute_icm<double>(a, ref, identity_head(2));
  const double want[4] = {3.0 / 5, 4.0 / 5, (9 + 16) / (5.0 * 5), 6 / (2 * 5.0)};
  for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(m.values[p], want[p], 1e-15);
  const auto unnorm = compute_icm<double>(a, ref, identity_head(2), false);
  const double raw[4] = {3.0 / 5, 8.0 / 5, 25.0 / 5, 6.0 / 5};
  for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(unnorm.values[p], raw[p], 1e-15);
  EXPECT_NEAR(m.normalized[0], 0.0, 1e-15);
  EXPECT_NEAR(m.normalized[2], 1.0, 1e-15);
}

TEST(ComputeIcm, Errors) {
  Tensor<double> a({3, 1, 2, 2}, 1.0);
  std::vector<double> ref{1, 1};
  EXPECT_THROW(compute_icm<double>(a, ref, identity_head(2)), ShapeError);
  std::vector<double> zero{0, 0, 0};
  EXPECT_THROW(compute_icm<double>(a, zero, identity_head(3)), DegenerateInputError);
  std::vector<double> short_ref{1, 1};
  Tensor<double> a2({2, 1, 2, 2}, 1.0);
  EXPECT_THROW(compute_icm<double>(a2, short_ref, identity_head(3)), ShapeError);
}

TEST(ComputeIcm, RangesOnAnInitialModel) {
  const TrainConfig c;
  const auto model = init_model<float>(c);
  GeneratorConfig g;
  g.height = g.width = 32;
  const auto v = generate_instance(0, 1, g);
  const auto pair = make_tempo_pair(sample_raw_clip(v, 0), 8, 2);
  for (auto ref : {Pathway::fast, Pathway::slow}) {
    const auto m = icm_for_pair(model, pair, "res5", ref);
    // map lives on the other pathway's grid: 8 slow frames or 16 fast frames
    EXPECT_EQ(m.values.dim(0), ref == Pathway::fast ? 8u : 16u);
    EXPECT_EQ(m.values.dim(1), 2u);
    for (double x : m.values.storage()) EXPECT_TRUE(x >= -1 - 1e-6 && x <= 1 + 1e-6);
    for (double x : m.normalized.storage()) EXPECT_TRUE(x >= 0 && x <= 1);
  }
  EXPECT_THROW(icm_for_pair(model, pair, "res2", Pathway::fast), ConfigError);
}

TEST(ComputeIcm, PooledLocationsApproximateLossEmbedding) {
  // Mean of projected location embeddings vs projection of the pooled
  // feature: not equal (the head is non-linear); the deviation is recorded.
  TrainConfig c;
  c.stage_channels = {4, 6, 8, 8};
  c.embedding_dim = 8;
  const auto model = init_model<double>(c);
  GeneratorConfig g;
  g.height = g.width = 32;
  const auto pair = make_tempo_pair(sample_raw_clip(generate_instance(3, 1, g), 0), 8, 2);
  const auto fp = encode(pair.slow, model.slow);
  const auto& act = fp.activations.at("res5");
  const auto& head = model.heads.slow.at("res5");
  const std::size_t C = act.dim(0), P = act.size() / C;
  Tensor<double> loc({P, C});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t p = 0; p < P; ++p) loc[p * C + ch] = act[ch * P + p];
  const auto proj = head_forward(head, loc).output;
  oracle::Vec mean(head.out_dim(), 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += proj[p * mean.size() + k] / static_cast<double>(P);
  const auto& pooled = fp.pooled.at("res5");
  const auto z = head_forward(head, Tensor<double>({1, C}, pooled)).output.to_vector();
  const double cos = oracle::dot(mean, z) / (oracle::norm(mean) * oracle::norm(z));
  RecordProperty("cosine_mean_of_locations_vs_pooled", std::to_string(cos));
  EXPECT_GT(cos, 0.5);
}

TEST(LocalizationScore, UniformMapIsOne) {
  Tensor<double> map({1, 2, 2}, 0.7), mask({1, 2, 2});
  mask[0] = 1;
  EXPECT_DOUBLE_EQ(localization_score(map, mask), 1.0);
}

TEST(LocalizationScore, MapEqualToMaskHitsEpsilonBound) {
  Tensor<double> mask({2, 2, 2});
  mask[1] = mask[6] = 1;
  EXPECT_EQ(localization_score(mask, mask), 1.0 / kLocalizationEpsilon);
}

TEST(LocalizationScore, EmptyMaskIsAnError) {
  Tensor<double> map({1, 2, 2}, 0.5), mask({1, 2, 2});
  EXPECT_THROW(localization_score(map, mask), DegenerateInputError);
  EXPECT_THROW(localization_score(map, Tensor<double>({1, 2, 3})), ShapeError);
}

TEST(DownsampleMask, CellsCentredOnStrideMultiples) {
  // 16x16 mask on a 4x4 grid: cell (i,j) covers pixels [4i-2, 4i+2).
  Tensor<float> mask({1, 16, 16});
  mask.at(0, 9, 13) = 1;  // nearest centre: (8, 12) -> cell (2, 3)
  auto g = downsample_mask(mask, 4, 4, 0.0625);
  double total = 0;
  for (double v : g.storage()) total += v;
  EXPECT_EQ(total, 1.0);
  EXPECT_EQ(g.at(0, 2, 3), 1.0);
  // Top-left cell is clipped to 2x2 pixels, so one pixel covers a quarter.
  Tensor<float> corner({1, 16, 16});
  corner.at(0, 0, 0) = 1;
  g = downsample_mask(corner, 4, 4, 0.25);
  EXPECT_EQ(g.at(0, 0, 0), 1.0);
  EXPECT_THROW(downsample_mask(corner, 32, 4), ShapeError);
}

TEST(RenderIcm, ZeroMapReproducesSourceAtBlendFloor) {
  CorrespondenceMap m;
  m.normalized = Tensor<double>({2, 2, 2});
  Tensor<float> frames({2, 4, 4, 3});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = static_cast<float>(i % 7) / 7;
  const auto out = render_icm(m, frames);
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(out[t][i], frames[t * 48 + i]);
}

TEST(RenderIcm, PeakAtUpsampledLocation) {
  CorrespondenceMap m;
  m.normalized = Tensor<double>({1, 4, 4});
  m.normalized.at(0, 1, 2) = 1.0;
  Tensor<float> frames({1, 16, 16, 3}, 0.5f);
  const auto img = render_icm(m, frames).front();
  std::size_t best = 0;
  for (std::size_t p = 0; p < 256; ++p)
    if (img[p * 3] > img[best * 3]) best = p;
  EXPECT_EQ(best / 16, 4u);  // cell row 1 at stride 4
  EXPECT_EQ(best % 16, 8u);  // cell col 2
  EXPECT_NEAR(img[best * 3], 0.4 * 0.5 + 0.6, 1e-6);
}

TEST(RenderIcm, FrameCountMismatch) {
  CorrespondenceMap m;
  m.normalized = Tensor<double>({2, 2, 2});
  EXPECT_THROW(render_icm(m, Tensor<float>({3, 4, 4, 3})), ShapeError);
}

TEST(RenderIcm, FilesAreByteStable) {
  TrainConfig c;
  c.stage_channels = {4, 6, 8, 8};
  c.embedding_dim = 8;
  c.seed = 4;
  GeneratorConfig g;
  g.height = g.width = 32;
  const auto pair = make_tempo_pair(sample_raw_clip(generate_instance(1, 2, g), 0), 8, 2);
  auto render = [&](const std::string& name) {
    const auto dir = oracle::scratch_dir(name);
    const auto map = icm_for_pair(init_model<float>(c), pair, "res5", Pathway::fast);
    return write_frames(dir, "icm", render_icm(map, pair.slow));
  };
  const auto a = render("render_a"), b = render("render_b");
  ASSERT_EQ(a.size(), 8u);
  EXPECT_EQ(a.front().filename(), "icm_000.ppm");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto sa = slurp(a[i]);
    EXPECT_EQ(sa, slurp(b[i]));
    EXPECT_EQ(sa.rfind("P6\n32 32\n255\n", 0), 0u);
    EXPECT_EQ(sa.size(), 13 + 32 * 32 * 3u);
  }
  std::filesystem::remove_all(a.front().parent_path());
  std::filesystem::remove_all(b.front().parent_path());
}
