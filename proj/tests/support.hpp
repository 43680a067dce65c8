#pragma once

// Shared fixtures: closed-form reward functions and small trained models.

#include <bit>
#include <cmath>
#include <memory>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "advshap/attacks.hpp"
#include "advshap/error.hpp"
#include "advshap/interaction.hpp"
#include "advshap/model.hpp"
#include "advshap/random.hpp"
#include "advshap/shapley.hpp"

namespace advshap::fixtures {

// z(x) = w . x + b
class LinearReward final : public DifferentiableReward {
 public:
  LinearReward(std::vector<double> w, double b = 0.0) : w_(std::move(w)), b_(b) {}
  std::size_t input_size() const override { return w_.size(); }
  const std::vector<double>& weights() const { return w_; }
  double value(std::span<const double> x) const override {
    return std::inner_product(w_.begin(), w_.end(), x.begin(), b_);
  }
  double gradient(std::span<const double> x, std::span<double> grad) const override {
    std::copy(w_.begin(), w_.end(), grad.begin());
    return value(x);
  }

 private:
  std::vector<double> w_;
  double b_;
};

// z(x) = sum_i a_i x_i + sum_{i<j} b_ij x_i x_j: multilinear in the pixels.
class BilinearReward final : public DifferentiableReward {
 public:
  BilinearReward(std::vector<double> a, std::vector<double> b) : a_(std::move(a)), b_(std::move(b)) {}
  static BilinearReward random(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> a(n), b(n * n, 0.0);
    for (double& v : a) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) b[i * n + j] = rng.uniform(-1.0, 1.0);
    }
    return BilinearReward(std::move(a), std::move(b));
  }
  std::size_t input_size() const override { return a_.size(); }
  double value(std::span<const double> x) const override {
    const std::size_t n = a_.size();
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z += a_[i] * x[i];
      for (std::size_t j = i + 1; j < n; ++j) z += b_[i * n + j] * x[i] * x[j];
    }
    return z;
  }
  double gradient(std::span<const double> x, std::span<double> grad) const override {
    const std::size_t n = a_.size();
    for (std::size_t i = 0; i < n; ++i) {
      double g = a_[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (j > i) g += b_[i * n + j] * x[j];
        if (j < i) g += b_[j * n + i] * x[j];
      }
      grad[i] = g;
    }
    return value(x);
  }

 private:
  std::vector<double> a_, b_;
};

// z(x) = sum_i a_i x_i + sum_{i<=j} b_ij x_i x_j. The squares make the
// first-order expansion inexact while sub-pixel sums still equal pixel values.
class QuadraticReward final : public DifferentiableReward {
 public:
  static QuadraticReward random(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    QuadraticReward q;
    q.a_.resize(n);
    q.b_.assign(n * n, 0.0);
    for (double& v : q.a_) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) q.b_[i * n + j] = rng.uniform(-1.0, 1.0);
    }
    return q;
  }
  std::size_t input_size() const override { return a_.size(); }
  double value(std::span<const double> x) const override {
    const std::size_t n = a_.size();
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z += a_[i] * x[i];
      for (std::size_t j = i; j < n; ++j) z += b_[i * n + j] * x[i] * x[j];
    }
    return z;
  }
  double gradient(std::span<const double> x, std::span<double> grad) const override {
    const std::size_t n = a_.size();
    for (std::size_t i = 0; i < n; ++i) {
      double g = a_[i] + 2.0 * b_[i * n + i] * x[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (j > i) g += b_[i * n + j] * x[j];
        if (j < i) g += b_[j * n + i] * x[j];
      }
      grad[i] = g;
    }
    return value(x);
  }

 private:
  std::vector<double> a_, b_;
};

// z(x) = exp(w . x): smooth and not multilinear.
class ExpReward final : public DifferentiableReward {
 public:
  explicit ExpReward(std::vector<double> w) : w_(std::move(w)) {}
  std::size_t input_size() const override { return w_.size(); }
  double value(std::span<const double> x) const override {
    return std::exp(std::inner_product(w_.begin(), w_.end(), x.begin(), 0.0));
  }
  double gradient(std::span<const double> x, std::span<double> grad) const override {
    const double v = value(x);
    for (std::size_t i = 0; i < w_.size(); ++i) grad[i] = w_[i] * v;
    return v;
  }

 private:
  std::vector<double> w_;
};

// Planted block structure on a side x side grid of pixels split into
// block x block blocks. Each block's pairs interact with the pixels of its
// partner block, half the block grid away in both axes:
//   z(x) = w * sum_B [sum_{i<j in B} x_i x_j] * [sum_{k in partner(B)} x_k]
// With all players at delta = 1 the exact interaction of a merged 4-pixel
// candidate is -w/6 per (pair inside it, partner pixel) term: -4w for a
// 2x2 block, -4w/3 for a window holding one pair from each of two blocks, 0
// for windows holding no pair and for any window of whole blocks (a block
// and its partner never share a 2x2 window of blocks).
class PlantedBlockReward final : public DifferentiableReward {
 public:
  PlantedBlockReward(std::size_t side, std::size_t block, double w) : side_(side), block_(block), w_(w) {
    if (side % block != 0 || side / block < 4 || (side / block) % 2 != 0) throw Error("PlantedBlockReward", "need an even block grid of at least 4x4");
  }
  std::size_t input_size() const override { return side_ * side_; }
  std::size_t block_of(std::size_t p) const {
    const std::size_t per_row = side_ / block_;
    return (p / side_) / block_ * per_row + (p % side_) / block_;
  }
  std::size_t num_blocks() const { return (side_ / block_) * (side_ / block_); }
  std::size_t partner(std::size_t b) const {
    const std::size_t n = side_ / block_;
    return ((b / n + n / 2) % n) * n + (b % n + n / 2) % n;
  }

  double value(std::span<const double> x) const override {
    std::vector<double> sum, pairs;
    stats(x, sum, pairs);
    double z = 0.0;
    for (std::size_t b = 0; b < sum.size(); ++b) z += pairs[b] * sum[partner(b)];
    return w_ * z;
  }
  double gradient(std::span<const double> x, std::span<double> grad) const override {
    std::vector<double> sum, pairs;
    stats(x, sum, pairs);
    for (std::size_t p = 0; p < x.size(); ++p) {
      const std::size_t b = block_of(p), o = partner(b);
      // partner() is an involution, so x_p is also a partner pixel of block o.
      grad[p] = w_ * ((sum[b] - x[p]) * sum[o] + pairs[o]);
    }
    return value(x);
  }

 private:
  void stats(std::span<const double> x, std::vector<double>& sum, std::vector<double>& pairs) const {
    sum.assign(num_blocks(), 0.0);
    std::vector<double> sq(num_blocks(), 0.0);
    for (std::size_t p = 0; p < x.size(); ++p) {
      sum[block_of(p)] += x[p];
      sq[block_of(p)] += x[p] * x[p];
    }
    pairs.resize(num_blocks());
    for (std::size_t b = 0; b < sum.size(); ++b) pairs[b] = 0.5 * (sum[b] * sum[b] - sq[b]);
  }

  std::size_t side_, block_;
  double w_;
};

// Context with x = 0 and the given delta over single-pixel players.
inline PixelGameContext context_for(std::shared_ptr<const DifferentiableReward> reward, std::size_t height,
                                    std::size_t width, std::vector<double> delta, std::size_t superpixel = 1) {
  Image x(height, width, 1, 0.0);
  return make_pixel_context(std::move(reward), x, std::move(delta), superpixel, 0, 1);
}

// 8x8 planted grid of single-pixel players, every delta = 1.
inline PixelGameContext planted_context(double w = 1.0) {
  return context_for(std::make_shared<PlantedBlockReward>(8, 2, w), 8, 8, std::vector<double>(64, 1.0));
}

// Exact interaction of the 2x2 window of pixels with top-left (row, col) on
// the planted grid, per the derivation above PlantedBlockReward.
inline double planted_window_interaction(std::size_t row, std::size_t col, double w = 1.0) {
  const bool r = row % 2 == 0, c = col % 2 == 0;
  if (r && c) return -4.0 * w;
  if (r || c) return -4.0 * w / 3.0;
  return 0.0;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Game with an explicit random reward per coalition.
inline FunctionGame random_game(std::size_t n, std::uint64_t seed) {
  auto table = std::make_shared<std::vector<double>>(random_vector(std::size_t{1} << n, seed));
  return FunctionGame(n, [table](Coalition s) { return (*table)[s]; });
}

// r(S) = sum_{i in S} w_i + c
inline FunctionGame additive_game(std::vector<double> w, double c = 0.0) {
  const std::size_t n = w.size();
  return FunctionGame(n, [w = std::move(w), c](Coalition s) {
    double r = c;
    for (std::size_t i = 0; i < w.size(); ++i) r += contains(s, i) ? w[i] : 0.0;
    return r;
  });
}

// r(S) = 1 iff |S| >= 2, three players.
inline FunctionGame majority3() {
  return FunctionGame(3, [](Coalition s) { return std::popcount(s) >= 2 ? 1.0 : 0.0; });
}

struct TrainedToy {
  Classifier model;
  ToyDataset train;
  ToyDataset test;
};

// Small classifier trained on synthetic images of the given size.
inline TrainedToy train_toy(std::size_t size, std::uint64_t seed, std::size_t count = 90, std::size_t epochs = 12) {
  ClassifierSpec spec;
  spec.height = spec.width = size;
  TrainedToy t{Classifier::initialize(spec, seed), synth_dataset(seed, count, size, size),
               synth_dataset(seed + 1000, 30, size, size)};
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  t.model = train(t.model, t.train, cfg);
  return t;
}

// As train_toy, but training images are extended with a replicated border;
// test images are left un-extended for the attribution entry points.
inline TrainedToy train_toy_extended(std::size_t interior, double beta, std::uint64_t seed, std::size_t count = 90,
                                     std::size_t epochs = 12) {
  auto extend_all = [&](ToyDataset d) {
    for (Image& img : d.images) img = extend_image(img, beta).pixels;
    return d;
  };
  const ToyDataset train_data = extend_all(synth_dataset(seed, count, interior, interior));
  ClassifierSpec spec;
  spec.height = spec.width = train_data.images[0].height;
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  TrainedToy t{train(Classifier::initialize(spec, seed), train_data, cfg), train_data,
               synth_dataset(seed + 1000, 30, interior, interior)};
  return t;
}

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace advshap::fixtures
