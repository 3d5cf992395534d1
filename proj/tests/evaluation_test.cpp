#include <gtest/gtest.h>

#include <set>

#include "multimae/evaluation.hpp"

using namespace multimae;

namespace {

ModelConfig small_config() {
  ModelConfig c = ModelConfig::desk();
  c.resolution = 32;
  c.encoder = {16, 1, 2, 2};
  c.decoder = {16, 1, 2, 2};
  c.class_embed_dim = 4;
  c.num_classes = 16;
  return c;
}

std::vector<std::uint8_t> square_map(std::size_t side, std::size_t x0, std::size_t x1, std::uint8_t cls) {
  std::vector<std::uint8_t> m(side * side, 0);
  for (std::size_t y = 2; y < side - 2; ++y)
    for (std::size_t x = x0; x < x1; ++x) m[y * side + x] = cls;
  return m;
}

bool patch_equal(const RgbImage& a, const RgbImage& b, std::size_t patch, std::size_t index) {
  const std::size_t grid = a.width / patch;
  for (std::size_t y = (index / grid) * patch; y < (index / grid + 1) * patch; ++y)
    for (std::size_t x = (index % grid) * patch; x < (index % grid + 1) * patch; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        if (a.pixels[(y * a.width + x) * 3 + c] != b.pixels[(y * b.width + x) * 3 + c]) return false;
  return true;
}

}  // namespace

TEST(Palette, FixedDistinctAndBackgroundBlack) {
  const auto& p = semseg_palette();
  ASSERT_EQ(p.size(), 133u);
  EXPECT_EQ(p[0], (std::array<std::uint8_t, 3>{0, 0, 0}));
  std::set<std::array<std::uint8_t, 3>> unique(p.begin(), p.end());
  EXPECT_EQ(unique.size(), 133u);
}

TEST(DepthColormap, MinBlackMaxWhiteInvalidMarked) {
  const std::vector<float> d{1.0f, 2.0f, 3.0f, 0.0f};
  const std::vector<std::uint8_t> v{1, 1, 1, 0};
  const auto img = render_depth(d, v, 2, 1.0f, 3.0f);
  EXPECT_EQ(img.pixels[0], 0);
  EXPECT_EQ(img.pixels[3], 128);
  EXPECT_EQ(img.pixels[6], 255);
  EXPECT_EQ(img.pixels[9], kInvalidDepth[0]);
  EXPECT_EQ(img.pixels[10], kInvalidDepth[1]);
}

TEST(EdgeAgreement, IdenticalAndOnePixelShiftScoreOne) {
  const std::size_t side = 16;
  const std::vector<char> all(side * side, 1);
  const auto a = square_map(side, 4, 10, 3);
  EXPECT_EQ(edge_agreement(a, a, side, all).score(), 1.0);
  EXPECT_EQ(edge_agreement(a, square_map(side, 5, 11, 3), side, all).score(), 1.0);
  EXPECT_LT(edge_agreement(a, square_map(side, 8, 14, 3), side, all).score(), 0.5);
}

TEST(EdgeAgreement, MissingObjectScoresZeroAndEmptyScoresOne) {
  const std::size_t side = 16;
  const std::vector<char> all(side * side, 1);
  const std::vector<std::uint8_t> blank(side * side, 0);
  EXPECT_EQ(edge_agreement(square_map(side, 4, 10, 3), blank, side, all).score(), 0.0);
  EXPECT_EQ(edge_agreement(blank, blank, side, all).score(), 1.0);
}

TEST(EdgeAgreement, RegionRestrictsCountedPixels) {
  const std::size_t side = 16;
  std::vector<char> left(side * side, 0);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < 8; ++x) left[y * side + x] = 1;
  const auto truth = square_map(side, 2, 5, 3);
  auto pred = truth;
  for (std::size_t y = 2; y < side - 2; ++y) pred[y * side + 12] = 7;  // wrong only on the right half
  EXPECT_EQ(edge_agreement(truth, pred, side, left).score(), 1.0);
}

TEST(Reconstruct, OverlayCopiesVisibleInputPixelsExactly) {
  const auto c = small_config();
  const auto model = MultiMae<float>::initialize(c, 3);
  SyntheticParams sp;
  sp.resolution = c.resolution;
  sp.num_classes = c.num_classes;
  const auto sample = generate_synthetic_scene(5, sp);
  DirichletParams dp;
  dp.num_visible = 5;
  const auto plan = build_mask_plan(dp, c.inputs, c.caps(), 9);
  const auto rec = reconstruct(model, sample, plan);
  ASSERT_EQ(rec.panels.size(), 3u);
  for (const auto& t : rec.panels) {
    const auto& vis = plan.visible[plan.slot(t.modality)];
    for (std::size_t i = 0; i < c.tokens_per_modality(); ++i) {
      const bool visible = std::binary_search(vis.begin(), vis.end(), i);
      if (visible) {
        EXPECT_TRUE(patch_equal(t.prediction, t.masked, c.patch_size, i)) << modality_name(t.modality) << " " << i;
        EXPECT_TRUE(patch_equal(t.masked, t.truth, c.patch_size, i));
      } else {
        EXPECT_EQ(t.masked.pixels[((i / 2) * 16 * 32 + (i % 2) * 16) * 3], 128);
      }
    }
    EXPECT_EQ(t.combined().width, 3 * c.resolution);
  }
  const auto again = reconstruct(model, sample, plan);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(again.panels[k].prediction, rec.panels[k].prediction);
  EXPECT_EQ(rec.semseg_composite.size(), 64u);
}

TEST(DepthOnly, CountsMaskedSemsegPixelsAndBaseline) {
  const auto c = small_config();
  const auto model = MultiMae<float>::initialize(c, 4);
  SyntheticParams sp;
  sp.resolution = c.resolution;
  sp.num_classes = c.num_classes;
  std::vector<Sample> samples{generate_synthetic_scene(1, sp), generate_synthetic_scene(2, sp)};
  const auto acc = depth_only_semseg_accuracy(model, samples, 4, 0);
  EXPECT_EQ(acc.pixels, 2u * 64u);
  EXPECT_EQ(acc.majority_class, 0u);
  EXPECT_GT(acc.baseline(), 0.3);
  EXPECT_LE(acc.accuracy(), 1.0);
}
