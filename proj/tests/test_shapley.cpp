#include <gtest/gtest.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "advshap/error.hpp"
#include "advshap/shapley.hpp"
#include "support.hpp"

using namespace advshap;
using fixtures::additive_game;
using fixtures::majority3;
using fixtures::random_game;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Shapley, TwoPlayerHandExample) {
  const std::vector<double> r{0, 1, 2, 4};
  const FunctionGame g(2, [&](Coalition s) { return r[s]; });
  const auto est = shapley_exact(g);
  EXPECT_NEAR(est.values[0], 1.5, 1e-12);
  EXPECT_NEAR(est.values[1], 2.5, 1e-12);
  EXPECT_EQ(est.method, ShapleyMethod::kExact);
  EXPECT_NEAR(est.efficiency_residual, 0.0, 1e-12);
}

TEST(Shapley, AdditiveGameGivesWeights) {
  const std::vector<double> w{0.5, -2.0, 3.25, 0.0, 1.0};
  const auto est = shapley_exact(additive_game(w, 7.0));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(est.values[i], w[i], 1e-12);
  EXPECT_DOUBLE_EQ(est.reward_empty, 7.0);
}

TEST(Shapley, MajorityGame) {
  const auto est = shapley_exact(majority3());
  for (double v : est.values) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Shapley, WeightsSumToOne) {
  for (std::size_t n = 1; n <= 12; ++n) {
    double total = 0.0;
    // Each player sees C(n-1, s) coalitions of size s.
    for (std::size_t s = 0; s < n; ++s) total += std::tgamma(double(n)) / (std::tgamma(double(s + 1)) * std::tgamma(double(n - s))) * shapley_weight(n, s);
    EXPECT_NEAR(total, 1.0, 1e-12) << n;
  }
}

TEST(Shapley, EfficiencyOnRandomGames) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t n = 2 + seed % 9;
    const auto g = random_game(n, seed);
    const auto est = shapley_exact(g);
    double sum = 0.0;
    for (double v : est.values) sum += v;
    EXPECT_LE(std::abs(sum - (g.reward(full_coalition(n)) - g.reward(0))), 1e-9) << seed;
    EXPECT_LE(std::abs(est.efficiency_residual), 1e-9);
  }
}

TEST(Shapley, Linearity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 2 + seed % 9;
    const auto v = random_game(n, seed), w = random_game(n, seed + 500);
    const double alpha = -1.7 + 0.3 * double(seed);
    const FunctionGame combo(n, [&](Coalition s) { return alpha * v.reward(s) + w.reward(s); });
    const auto pv = shapley_exact(v).values, pw = shapley_exact(w).values, pc = shapley_exact(combo).values;
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pc[i], alpha * pv[i] + pw[i], 1e-9);
  }
}

TEST(Shapley, Symmetry) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 3 + seed % 8;
    const auto base = random_game(n, seed);
    // Players 0 and n-1 are interchangeable: a coalition holding only one of
    // them is evaluated as if it held player 0.
    const std::size_t j = n - 1;
    const FunctionGame g(n, [&](Coalition s) {
      if (contains(s, j) && !contains(s, 0)) s = (s & ~(Coalition{1} << j)) | 1U;
      return base.reward(s);
    });
    const auto est = shapley_exact(g);
    EXPECT_NEAR(est.values[0], est.values[j], 1e-9) << seed;
  }
}

TEST(Shapley, DummyPlayer) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 2 + seed % 9;
    const auto base = random_game(n, seed);
    const std::size_t d = seed % n;
    const double c = 0.25 * double(seed) - 2.0;
    const Coalition bit = Coalition{1} << d;
    const FunctionGame g(n, [&](Coalition s) { return base.reward(s & ~bit) + (contains(s, d) ? c : 0.0); });
    const auto est = shapley_exact(g);
    EXPECT_NEAR(est.values[d], g.reward(bit) - g.reward(0), 1e-9);
  }
}

TEST(Shapley, ExactRejectsTooManyPlayers) {
  const FunctionGame g(21, [](Coalition) { return 0.0; });
  try {
    shapley_exact(g);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("shapley_sampled"), std::string::npos) << e.what();
  }
}

TEST(ShapleySampled, AdditiveIsExactForAnyT) {
  const std::vector<double> w{1.0, -0.5, 0.25, 2.0, -3.0, 0.125};
  for (std::size_t T : {1u, 3u, 17u}) {
    const auto est = shapley_sampled(additive_game(w, 1.0), T, 11);
    EXPECT_EQ(est.method, ShapleyMethod::kSampled);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(est.values[i], w[i], 1e-12);
  }
}

TEST(ShapleySampled, MajorityWithin005) {
  const auto est = shapley_sampled(majority3(), 2000, 0);
  for (double v : est.values) EXPECT_LT(std::abs(v - 1.0 / 3.0), 0.05);
  EXPECT_EQ(est.samples_used, 3u * 2000u);
}

TEST(ShapleySampled, DeterministicPerSeed) {
  const auto g = random_game(7, 3);
  const auto a = shapley_sampled(g, 50, 99), b = shapley_sampled(g, 50, 99), c = shapley_sampled(g, 50, 100);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(ShapleySampled, IndependentOfThreadCount) {
  const auto g = random_game(8, 5);
  const char* old = std::getenv("ADVSHAP_THREADS");
  const std::string saved = old ? old : "";
  setenv("ADVSHAP_THREADS", "1", 1);
  const auto serial = shapley_sampled(g, 40, 1);
  setenv("ADVSHAP_THREADS", "4", 1);
  const auto parallel = shapley_sampled(g, 40, 1);
  if (old) setenv("ADVSHAP_THREADS", saved.c_str(), 1); else unsetenv("ADVSHAP_THREADS");
  EXPECT_EQ(serial.values, parallel.values);
}

TEST(ShapleySampled, ErrorShrinksWithT) {
  std::vector<double> mean_error;
  for (std::size_t T : {10u, 100u, 1000u}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto g = random_game(8, 1000 + seed);
      total += max_abs_diff(shapley_sampled(g, T, seed).values, shapley_exact(g).values);
    }
    mean_error.push_back(total / 20.0);
  }
  EXPECT_GE(mean_error[0], mean_error[1]);
  EXPECT_GE(mean_error[1], mean_error[2]);
}

TEST(ShapleySampled, ReportsResidual) {
  const auto g = random_game(6, 8);
  const auto est = shapley_sampled(g, 20, 2);
  double sum = 0.0;
  for (double v : est.values) sum += v;
  EXPECT_NEAR(est.efficiency_residual, sum - (est.reward_full - est.reward_empty), 1e-12);
}

TEST(ShapleyMerged, SingletonMatchesExact) {
  const auto g = random_game(5, 4);
  const auto exact = shapley_exact(g).values;
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(shapley_merged(g, Coalition{1} << i), exact[i], 1e-12);
}

TEST(ShapleyMerged, MajorityPair) { EXPECT_NEAR(shapley_merged(majority3(), 0b011), 1.0, 1e-12); }

TEST(ShapleyMerged, WholeSetIsTotalGain) {
  const auto g = random_game(6, 12);
  EXPECT_NEAR(shapley_merged(g, full_coalition(6)), g.reward(full_coalition(6)) - g.reward(0), 1e-12);
}

TEST(ShapleyMerged, EmptyCoalitionThrows) { EXPECT_THROW(shapley_merged(majority3(), 0), Error); }

TEST(MemoizedGame, CachesRepeatedCoalitions) {
  std::atomic<int> calls{0};
  const FunctionGame g(4, [&](Coalition s) {
    ++calls;
    return double(std::popcount(s));
  });
  const MemoizedGame memo(g);
  const std::vector<Coalition> batch{1, 2, 1, 3, 2};
  std::vector<double> out(batch.size());
  memo.rewards(batch, out);
  EXPECT_EQ(out, (std::vector<double>{1, 1, 1, 2, 1}));
  EXPECT_EQ(memo.reward(3), 2.0);
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(memo.evaluations(), 3u);
}

TEST(Coalitions, RoundTrip) {
  const std::vector<std::size_t> players{0, 3, 63};
  const Coalition c = coalition_of(players);
  EXPECT_EQ(players_of(c), players);
  EXPECT_EQ(full_coalition(64), ~Coalition{0});
}
