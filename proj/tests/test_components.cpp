#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "advshap/components.hpp"
#include "advshap/error.hpp"
#include "support.hpp"

using namespace advshap;

namespace {

using Groups = std::vector<std::vector<std::size_t>>;

Groups singletons(std::size_t n) {
  Groups g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = {i};
  return g;
}

void expect_partition(const ExtractionResult& r, std::size_t num_players) {
  std::vector<int> seen(num_players, 0);
  for (const Component& c : r.components) for (std::size_t p : c.players) ++seen.at(p);
  for (std::size_t p = 0; p < num_players; ++p) EXPECT_EQ(seen[p], 1) << "player " << p;
}

// Settings under which planted candidates are estimated without batching bias.
ExtractionConfig planted_config(std::uint64_t seed, std::size_t T) {
  ExtractionConfig cfg;
  cfg.seed = seed;
  cfg.K = 4;
  cfg.samples_T = T;
  cfg.m_tilde_fraction = 0.0;  // one candidate per batch
  cfg.gamma_schedule = {GammaRule::absolute(8.0 / 3.0)};
  return cfg;
}

bool matches_planted_blocks(const ExtractionResult& r) {
  const fixtures::PlantedBlockReward reward(8, 2, 1.0);
  if (r.components.size() != reward.num_blocks()) return false;
  for (const Component& c : r.components) {
    if (c.players.size() != 4) return false;
    for (std::size_t p : c.players) if (reward.block_of(p) != reward.block_of(c.players[0])) return false;
  }
  return true;
}

}  // namespace

TEST(MergeThreshold, QuantileRule) {
  const std::vector<double> v{3, 1, 5, 2, 4};
  EXPECT_EQ(merge_threshold(GammaRule::quantile(0.2), v), 4.0);
  EXPECT_EQ(merge_threshold(GammaRule::quantile(0.5), v), 2.0);
  EXPECT_EQ(merge_threshold(GammaRule::quantile(1.0), v), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(merge_threshold(GammaRule::quantile(0.0), v), 5.0);
  EXPECT_EQ(merge_threshold(GammaRule::quantile(0.2), {}), std::numeric_limits<double>::infinity());
}

TEST(MergeThreshold, ShareAboveMatchesTarget) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto v = fixtures::random_vector(10 + s, s, 0.0, 1.0);
    for (double share : {0.2, 0.5}) {
      const double g = merge_threshold(GammaRule::quantile(share), v);
      const auto above = std::count_if(v.begin(), v.end(), [&](double x) { return x > g; });
      EXPECT_EQ(std::size_t(above), std::size_t(std::ceil(share * double(v.size()) - 1e-12)));
    }
  }
}

TEST(MergeThreshold, AbsoluteRule) { EXPECT_EQ(merge_threshold(GammaRule::absolute(0.7), {1, 2, 3}), 0.7); }

TEST(Planted, CubicTermInteraction) {
  // z = x0 x1 x2 with S = {0, 1}: merged value 1/2, members 1/3 each.
  const FunctionGame g(3, [](Coalition s) { return s == 0b111 ? 1.0 : 0.0; });
  EXPECT_NEAR(interaction_exact(g, 0b011).I, -1.0 / 6.0, 1e-12);
}

TEST(Planted, GradientMatchesFiniteDifferences) {
  const fixtures::PlantedBlockReward reward(8, 2, 0.7);
  const auto x = fixtures::random_vector(64, 9, 0.0, 1.0);
  std::vector<double> g(64);
  reward.gradient(x, g);
  for (std::size_t p = 0; p < 64; p += 5) {
    auto a = x, b = x;
    a[p] += 1e-6;
    b[p] -= 1e-6;
    EXPECT_NEAR((reward.value(a) - reward.value(b)) / 2e-6, g[p], 1e-6) << p;
  }
  for (std::size_t b = 0; b < reward.num_blocks(); ++b) EXPECT_EQ(reward.partner(reward.partner(b)), b);
  EXPECT_THROW(fixtures::PlantedBlockReward(6, 2, 1.0), Error);
}

TEST(Planted, WindowEstimatesMatchDerivation) {
  const auto ctx = fixtures::planted_context();
  // Aligned, straddling two blocks, straddling four blocks.
  const std::size_t tops[][2] = {{2, 4}, {2, 3}, {3, 5}};
  Groups cands;
  for (const auto& t : tops) {
    const std::size_t a = t[0] * 8 + t[1];
    cands.push_back({a, a + 1, a + 8, a + 9});
  }
  BatchOptions opt;
  opt.evaluate_all = true;
  const auto r = batched_candidate_rewards(ctx, singletons(64), cands, 4, 100, 4, 2, opt);
  for (std::size_t k = 0; k < cands.size(); ++k) {
    EXPECT_NEAR(r.reward[k] - r.member_sum[k], fixtures::planted_window_interaction(tops[k][0], tops[k][1]), 0.3) << k;
  }
}

TEST(Extract, BelowGammaGivesSingletons) {
  auto reward = std::make_shared<fixtures::LinearReward>(fixtures::random_vector(64, 1));
  const auto ctx = fixtures::context_for(reward, 8, 8, fixtures::random_vector(64, 2));
  ExtractionConfig cfg;
  cfg.samples_T = 4;
  cfg.gamma_schedule = {GammaRule::absolute(1e-6)};
  const auto r = extract_components(ctx, cfg);
  ASSERT_EQ(r.components.size(), 64u);
  for (const Component& c : r.components) {
    EXPECT_EQ(c.level, 0u);
    EXPECT_EQ(c.players.size(), 1u);
  }
  ASSERT_EQ(r.rounds.size(), 1u);
  EXPECT_EQ(r.rounds[0].merges, 0u);
}

TEST(Extract, RecoversPlantedBlocks) {
  const auto r = extract_components(fixtures::planted_context(), planted_config(0, 100));
  EXPECT_TRUE(matches_planted_blocks(r));
  expect_partition(r, 64);
  for (const Component& c : r.components) {
    EXPECT_EQ(c.level, 1u);
    EXPECT_NEAR(c.interaction, -4.0, 0.5);
  }
}

TEST(Extract, QuantileScheduleGrowsByQ) {
  auto reward = std::make_shared<fixtures::BilinearReward>(fixtures::BilinearReward::random(64, 3));
  const auto ctx = fixtures::context_for(reward, 8, 8, fixtures::random_vector(64, 4, 0.2, 1.0));
  ExtractionConfig cfg;
  cfg.samples_T = 6;
  cfg.seed = 5;
  const auto r = extract_components(ctx, cfg);
  expect_partition(r, 64);
  ASSERT_FALSE(r.rounds.empty());
  EXPECT_GT(r.rounds[0].merges, 0u);
  const std::set<std::size_t> sizes{1, 4, 16, 64};
  for (const Component& c : r.components) {
    EXPECT_TRUE(sizes.count(c.players.size())) << c.players.size();
    EXPECT_EQ(c.side * c.side, c.players.size());
    EXPECT_EQ(c.players.size(), std::size_t(1) << (2 * c.level));
    for (std::size_t p : c.players) {
      EXPECT_GE(p / 8, c.row);
      EXPECT_LT(p / 8, c.row + c.side);
      EXPECT_GE(p % 8, c.col);
      EXPECT_LT(p % 8, c.col + c.side);
    }
    if (c.level > 0) EXPECT_NE(c.interaction, 0.0);
  }
  // At most 20% of the first round's candidates pass the threshold.
  EXPECT_LE(r.rounds[0].merges, std::size_t(std::ceil(0.2 * double(r.rounds[0].evaluated))));
}

TEST(Extract, RespectsMaxSize) {
  auto reward = std::make_shared<fixtures::BilinearReward>(fixtures::BilinearReward::random(64, 3));
  const auto ctx = fixtures::context_for(reward, 8, 8, fixtures::random_vector(64, 4, 0.2, 1.0));
  ExtractionConfig cfg;
  cfg.samples_T = 4;
  cfg.max_size = 4;
  cfg.gamma_schedule = {GammaRule::quantile(1.0)};
  const auto r = extract_components(ctx, cfg);
  for (const Component& c : r.components) EXPECT_LE(c.players.size(), 4u);
  expect_partition(r, 64);
}

TEST(Extract, DeterministicPerSeed) {
  auto reward = std::make_shared<fixtures::BilinearReward>(fixtures::BilinearReward::random(64, 7));
  const auto ctx = fixtures::context_for(reward, 8, 8, fixtures::random_vector(64, 8, 0.2, 1.0));
  ExtractionConfig cfg;
  cfg.samples_T = 4;
  cfg.seed = 11;
  const auto a = extract_components(ctx, cfg), b = extract_components(ctx, cfg);
  EXPECT_EQ(a.label_grid(64), b.label_grid(64));
  ASSERT_EQ(a.components.size(), b.components.size());
  for (std::size_t i = 0; i < a.components.size(); ++i) EXPECT_EQ(a.components[i].reward, b.components[i].reward);
}

TEST(Extract, LabelGrid) {
  ExtractionResult r;
  r.components.resize(2);
  r.components[0].id = 0;
  r.components[0].players = {0, 1};
  r.components[1].id = 1;
  r.components[1].players = {2};
  EXPECT_EQ(r.label_grid(3), (std::vector<std::size_t>{0, 0, 1}));
}

TEST(Extract, RejectsBadConfig) {
  const auto ctx = fixtures::planted_context();
  ExtractionConfig cfg;
  cfg.q = 3;
  EXPECT_THROW(extract_components(ctx, cfg), Error);
  cfg.q = 4;
  cfg.gamma_schedule.clear();
  EXPECT_THROW(extract_components(ctx, cfg), Error);
}

namespace {

struct StatsFixture {
  Classifier model = Classifier::initialize(ClassifierSpec{}, 4);
  Image x = synth_dataset(4, 6, 16, 16).images[0];
};

Component component_over(const PixelGameContext& ctx, std::vector<std::size_t> players) {
  Component c;
  c.players = players;
  for (std::size_t p : players) {
    const auto px = ctx.player_pixels(p);
    c.pixels.insert(c.pixels.end(), px.begin(), px.end());
  }
  return c;
}

}  // namespace

TEST(ComponentStats, ZeroDeltaComponent) {
  StatsFixture f;
  std::vector<double> delta = fixtures::random_vector(256, 3, -0.1, 0.1);
  const auto ctx0 = make_classifier_context(f.model, f.x, delta, 0, 1, 4);
  for (std::size_t c : ctx0.players[5]) delta[c] = 0.0;
  const auto ctx = make_classifier_context(f.model, f.x, delta, 0, 1, 4);
  const auto st = component_stats(f.model, ctx, component_over(ctx, {5}), SpatialMask(256, 0));
  EXPECT_EQ(st.dy_true, 0.0);
  EXPECT_EQ(st.dy_target, 0.0);
  // Tie goes to promote-target.
  EXPECT_EQ(st.utility, Utility::kPromoteTarget);
  EXPECT_EQ(st.foreground_ratio, 0.0);
}

TEST(ComponentStats, ForegroundRatio) {
  StatsFixture f;
  const auto ctx = make_classifier_context(f.model, f.x, fixtures::random_vector(256, 3, -0.1, 0.1), 0, 1, 4);
  const Component c = component_over(ctx, {0, 1});
  EXPECT_EQ(component_stats(f.model, ctx, c, SpatialMask(256, 1)).foreground_ratio, 1.0);
  SpatialMask half(256, 0);
  for (std::size_t p : ctx.player_pixels(0)) half[p] = 1;
  EXPECT_DOUBLE_EQ(component_stats(f.model, ctx, c, half).foreground_ratio, 0.5);
}

TEST(ComponentStats, ScoreChangesMatchForwardPasses) {
  StatsFixture f;
  const auto delta = fixtures::random_vector(256, 6, -0.2, 0.2);
  const auto ctx = make_classifier_context(f.model, f.x, delta, 2, 0, 4);
  const Component c = component_over(ctx, {3, 7});
  const auto st = component_stats(f.model, ctx, c, SpatialMask(256, 0));
  std::vector<double> full(256), without(256);
  for (std::size_t i = 0; i < 256; ++i) full[i] = without[i] = f.x.pixels[i] + delta[i];
  for (std::size_t p : c.pixels) without[p] = f.x.pixels[p];
  const auto a = f.model.logits(full), b = f.model.logits(without);
  EXPECT_NEAR(st.dy_true, std::abs(a[2] - b[2]), 1e-12);
  EXPECT_NEAR(st.dy_target, std::abs(a[0] - b[0]), 1e-12);
  EXPECT_EQ(st.utility, st.dy_true > st.dy_target ? Utility::kSuppressTrue : Utility::kPromoteTarget);
}

TEST(ComponentStats, RejectsBadInput) {
  StatsFixture f;
  const auto ctx = make_classifier_context(f.model, f.x, std::vector<double>(256, 0.0), 0, 1, 4);
  EXPECT_THROW(component_stats(f.model, ctx, Component{}, SpatialMask(256, 0)), Error);
  EXPECT_THROW(component_stats(f.model, ctx, component_over(ctx, {0}), SpatialMask(10, 0)), Error);
}

TEST(AggregateRatios, Examples) {
  ComponentStats fg;
  fg.foreground_ratio = 1.0;
  fg.utility = Utility::kSuppressTrue;
  ComponentStats bg;
  bg.foreground_ratio = 0.2;
  const auto all = aggregate_ratios({{fg, fg}, {fg}});
  EXPECT_EQ(all.foreground_ratio, 1.0);
  EXPECT_EQ(all.suppress_true_ratio, 1.0);
  EXPECT_EQ(all.components, 3u);
  const auto mixed = aggregate_ratios({{fg, bg}, {}});
  EXPECT_EQ(mixed.images_analyzed, 1u);
  EXPECT_EQ(mixed.images_skipped, 1u);
  EXPECT_EQ(mixed.foreground_ratio, 0.5);
  EXPECT_EQ(mixed.suppress_true_ratio, 0.5);
  const auto none = aggregate_ratios({});
  EXPECT_EQ(none.components, 0u);
  EXPECT_EQ(none.foreground_ratio, 0.0);
}
