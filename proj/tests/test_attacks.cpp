#include <gtest/gtest.h>

#include <cmath>

#include "advshap/attacks.hpp"
#include "advshap/error.hpp"
#include "support.hpp"

using namespace advshap;

namespace {

const fixtures::TrainedToy& toy() {
  static const fixtures::TrainedToy t = fixtures::train_toy(16, 7, 120, 12);
  return t;
}

Mask random_mask(std::size_t h, std::size_t w, double density, Rng& rng) {
  Mask m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) if (rng.uniform() < density) m.set(i);
  return m;
}

// Chain of nested masks growing to the full image.
std::vector<Mask> nested_chain(std::size_t h, std::size_t w, std::size_t length, Rng& rng) {
  const auto order = rng.permutation(h * w);
  std::vector<Mask> chain;
  for (std::size_t k = 1; k <= length; ++k) {
    Mask m(h, w);
    const std::size_t count = h * w * k / length;
    for (std::size_t i = 0; i < count; ++i) m.set(order[i]);
    chain.push_back(m);
  }
  return chain;
}

double linf_cost(const AttackResult& r, const LinfAttackConfig& cfg) { return r.success ? r.cost : cfg.failure_cost; }

void expect_valid(const AttackResult& r, std::span<const double> x, const Mask& m) {
  const auto bits = m.expand(1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (bits[i] == 0.0) EXPECT_EQ(r.delta[i], 0.0) << i;
    EXPECT_GE(x[i] + r.delta[i], -1e-12);
    EXPECT_LE(x[i] + r.delta[i], 1.0 + 1e-12);
  }
}

}  // namespace

TEST(Mask, ExpandAcrossChannels) {
  Mask m(2, 2);
  m.set(1);
  EXPECT_EQ(m.count(), 1u);
  EXPECT_EQ(m.expand(2), (std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0}));
}

TEST(Norms, L2AndLinf) {
  const std::vector<double> v{3, -4, 0};
  EXPECT_DOUBLE_EQ(l2_norm(v), 5.0);
  EXPECT_DOUBLE_EQ(linf_norm(v), 4.0);
}

TEST(AttackL2, AlreadyTargetIsFree) {
  const auto& t = toy();
  const Image& x = t.test.images[0];
  const std::size_t pred = t.model.predict(x.pixels);
  const auto r = attack_l2_masked(t.model, x.pixels, pred, Mask(16, 16, true));
  EXPECT_TRUE(r.success);
  EXPECT_LE(r.cost, 1e-12);
  EXPECT_EQ(r.p, Norm::kL2);
}

TEST(AttackL2, ZeroMaskFails) {
  const auto& t = toy();
  const Image& x = t.test.images[0];
  const auto r = attack_l2_masked(t.model, x.pixels, (t.test.labels[0] + 1) % 3, Mask(16, 16));
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.cost, 0.0);
  for (double d : r.delta) EXPECT_EQ(d, 0.0);
}

TEST(AttackL2, InvariantsOnRandomMasks) {
  const auto& t = toy();
  Rng rng(3);
  for (std::size_t i = 0; i < 6; ++i) {
    const Image& x = t.test.images[i];
    const Mask m = random_mask(16, 16, 0.5, rng);
    const auto r = attack_l2_masked(t.model, x.pixels, (t.test.labels[i] + 1) % 3, m);
    expect_valid(r, x.pixels, m);
    EXPECT_NEAR(r.cost, r.success ? l2_norm(r.delta) : 0.0, 1e-9);
    if (r.success) EXPECT_EQ(t.model.predict([&] {
      auto adv = x.pixels;
      for (std::size_t k = 0; k < adv.size(); ++k) adv[k] += r.delta[k];
      return adv;
    }()), (t.test.labels[i] + 1) % 3);
  }
}

TEST(AttackL2, FullMaskIsCheapest) {
  const auto& t = toy();
  Rng rng(5);
  const Image& x = t.test.images[1];
  const std::size_t target = (t.test.labels[1] + 1) % 3;
  const auto full = attack_l2_masked(t.model, x.pixels, target, Mask(16, 16, true));
  ASSERT_TRUE(full.success);
  for (int k = 0; k < 10; ++k) {
    const auto r = attack_l2_masked(t.model, x.pixels, target, random_mask(16, 16, rng.uniform(0.3, 0.9), rng));
    // Optimization noise: Adam does not reach the exact minimum-norm point.
    if (r.success) EXPECT_LE(full.cost, r.cost + 0.05 * r.cost + 1e-3) << k;
  }
}

TEST(AttackL2, Deterministic) {
  const auto& t = toy();
  const Image& x = t.test.images[2];
  const std::size_t target = (t.test.labels[2] + 1) % 3;
  EXPECT_EQ(attack_l2_masked(t.model, x.pixels, target, Mask(16, 16, true)),
            attack_l2_masked(t.model, x.pixels, target, Mask(16, 16, true)));
}

TEST(AttackLinf, AlreadyTargetIsFree) {
  const auto& t = toy();
  const Image& x = t.test.images[0];
  const auto r = attack_linf_masked(t.model, x.pixels, t.model.predict(x.pixels), Mask(16, 16, true));
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.cost, 0.0);
}

TEST(AttackLinf, ZeroMaskFails) {
  const auto& t = toy();
  const auto r = attack_linf_masked(t.model, t.test.images[0].pixels, (t.test.labels[0] + 1) % 3, Mask(16, 16));
  EXPECT_FALSE(r.success);
}

TEST(AttackLinf, CostBoundsPerturbation) {
  const auto& t = toy();
  for (std::size_t i = 0; i < 4; ++i) {
    const Image& x = t.test.images[i];
    const Mask m(16, 16, true);
    const auto r = attack_linf_masked(t.model, x.pixels, (t.test.labels[i] + 1) % 3, m);
    ASSERT_TRUE(r.success);
    expect_valid(r, x.pixels, m);
    EXPECT_LE(linf_norm(r.delta), r.cost + 1e-12);
    EXPECT_NEAR(r.cost * 255.0, std::round(r.cost * 255.0), 1e-9);
    EXPECT_EQ(r.p, Norm::kLinf);
  }
}

TEST(AttackLinf, MonotoneOnNestedChains) {
  const auto& t = toy();
  const LinfAttackConfig cfg;
  Rng rng(11);
  for (std::size_t c = 0; c < 5; ++c) {
    const Image& x = t.test.images[c];
    const std::size_t target = (t.test.labels[c] + 1) % 3;
    double previous = 2.0;
    for (const Mask& m : nested_chain(16, 16, 5, rng)) {
      const double cost = linf_cost(attack_linf_masked(t.model, x.pixels, target, m, cfg), cfg);
      EXPECT_LE(cost, previous) << "chain " << c << " mask size " << m.count();
      previous = cost;
    }
  }
}

TEST(AttackLinf, Deterministic) {
  const auto& t = toy();
  const Image& x = t.test.images[3];
  const std::size_t target = (t.test.labels[3] + 1) % 3;
  Rng rng(2);
  const Mask m = random_mask(16, 16, 0.6, rng);
  EXPECT_EQ(attack_linf_masked(t.model, x.pixels, target, m), attack_linf_masked(t.model, x.pixels, target, m));
}

TEST(ExtendImage, SixthOf48) {
  Image x(48, 48, 1);
  for (std::size_t i = 0; i < x.size(); ++i) x.pixels[i] = double(i % 97) / 96.0;
  const auto e = extend_image(x, 1.0 / 6.0);
  EXPECT_EQ(e.pixels.height, 56u);
  EXPECT_EQ(e.pixels.width, 56u);
  EXPECT_EQ(e.top, 4u);
  EXPECT_EQ(e.left, 4u);
  EXPECT_EQ(e.interior(), x);
  EXPECT_EQ(border_width(1.0 / 6.0, 48), 4u);
}

TEST(ExtendImage, ReplicateEdge) {
  Image x(3, 4, 2);
  for (std::size_t i = 0; i < x.size(); ++i) x.pixels[i] = 0.05 * double(i);
  const auto e = extend_image(x, 1.0);
  const std::size_t b = border_width(1.0, 3);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < e.pixels.height; ++y) {
      for (std::size_t xx = 0; xx < e.pixels.width; ++xx) {
        const std::size_t sy = std::min<std::size_t>(std::max<long>(0, long(y) - long(e.top)), 2);
        const std::size_t sx = std::min<std::size_t>(std::max<long>(0, long(xx) - long(e.left)), 3);
        EXPECT_EQ(e.pixels.at(c, y, xx), x.at(c, sy, sx));
      }
    }
  }
  EXPECT_EQ(e.top, b);
}

TEST(ExtendImage, ConstantFillAndMasks) {
  const Image x(8, 8, 1, 0.5);
  const auto e = extend_image(x, 0.5, BorderFill::kConstant, 0.25);
  EXPECT_EQ(e.pixels.height, 12u);
  EXPECT_EQ(e.pixels.at(0, 0, 0), 0.25);
  EXPECT_EQ(e.interior(), x);
  const Mask in = e.interior_mask(), border = e.border_mask();
  EXPECT_EQ(in.count(), 64u);
  EXPECT_EQ(border.count(), 144u - 64u);
  for (std::size_t i = 0; i < in.bits.size(); ++i) EXPECT_NE(in.bits[i], border.bits[i]);
}

TEST(ExtendImage, ZeroBetaIsIdentity) {
  const Image x(8, 8, 1, 0.5);
  EXPECT_EQ(extend_image(x, 0.0).pixels, x);
  EXPECT_THROW(extend_image(x, -0.1), Error);
}

TEST(Attacks, SuccessRateOnTestSplit) {
  const auto& t = toy();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < t.test.size(); ++i) {
    const auto r = attack_l2_masked(t.model, t.test.images[i].pixels, (t.test.labels[i] + 1) % 3, Mask(16, 16, true));
    ok += r.success ? 1 : 0;
  }
  EXPECT_GE(double(ok) / double(t.test.size()), 0.95);
}
