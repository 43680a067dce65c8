#pragma once

// Rewards of perturbation pixels and their interactions. A player is a
// super-pixel (a block of pixels across all channels); a component is a
// disjoint set of players. Sampled estimates use the first-order expansion
// over sub-pixels: each player's perturbation is split into K equal parts.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "advshap/model.hpp"
#include "advshap/shapley.hpp"

namespace advshap {

// Scalar function of an input vector with its gradient.
class DifferentiableReward {
 public:
  virtual ~DifferentiableReward() = default;
  virtual std::size_t input_size() const = 0;
  virtual double value(std::span<const double> x) const = 0;
  // Returns the value and writes d(value)/dx into `grad`.
  virtual double gradient(std::span<const double> x, std::span<double> grad) const = 0;
};

// z(x) = g_target(x) - g_true(x).
class ClassifierMarginReward final : public DifferentiableReward {
 public:
  ClassifierMarginReward(const Classifier& model, std::size_t true_class, std::size_t target_class);
  std::size_t input_size() const override { return model_.spec().input_size(); }
  double value(std::span<const double> x) const override;
  double gradient(std::span<const double> x, std::span<double> grad) const override;

 private:
  const Classifier& model_;
  std::vector<double> selector_;
  std::size_t true_class_, target_class_;
};

struct PixelGameContext {
  std::shared_ptr<const DifferentiableReward> reward;
  std::vector<double> x;      // clean input, planar
  std::vector<double> delta;  // perturbation, same layout
  std::size_t true_class = 0;
  std::size_t target_class = 0;
  std::size_t height = 0, width = 0, channels = 1;
  std::size_t superpixel = 1;
  // players[i]: coordinates of x covered by player i. Players are laid out
  // row-major on a grid_rows x grid_cols grid.
  std::vector<std::vector<std::size_t>> players;
  std::size_t grid_rows = 0, grid_cols = 0;

  std::size_t num_players() const { return players.size(); }
  // Spatial pixel indices (y * width + x) of a player.
  std::vector<std::size_t> player_pixels(std::size_t player) const;
};

// Players are superpixel x superpixel blocks; blocks at the bottom/right edge
// may be smaller when the size does not divide the image.
PixelGameContext make_pixel_context(std::shared_ptr<const DifferentiableReward> reward, const Image& x,
                                    std::vector<double> delta, std::size_t superpixel,
                                    std::size_t true_class = 0, std::size_t target_class = 0);

PixelGameContext make_classifier_context(const Classifier& model, const Image& x, std::vector<double> delta,
                                         std::size_t true_class, std::size_t target_class,
                                         std::size_t superpixel);

// z at x + delta restricted to the given players.
double reward_z(const PixelGameContext& ctx, std::span<const std::size_t> players);

// The masked game over players (at most 64).
class PixelGame final : public Game {
 public:
  explicit PixelGame(const PixelGameContext& ctx);
  std::size_t num_players() const override { return ctx_.num_players(); }
  double reward(Coalition s) const override;

 private:
  const PixelGameContext& ctx_;
};

// Game over n * K sub-players; sub-player (i, k) has index i * K + k and a
// coalition applies (count of i's sub-players / K) * delta_i.
class SubPixelGame final : public Game {
 public:
  SubPixelGame(const PixelGameContext& ctx, std::size_t K);
  std::size_t num_players() const override { return ctx_.num_players() * K_; }
  double reward(Coalition s) const override;

 private:
  const PixelGameContext& ctx_;
  std::size_t K_;
};

struct TaylorEstimate {
  std::vector<double> values;  // one per group
  double reward_full = 0.0;    // z(all groups + pinned)
  double reward_empty = 0.0;   // z(pinned)
  double efficiency_residual = 0.0;
  std::size_t gradient_evaluations = 0;
};

// Shapley value of each group treated as one player among the groups, with
// `pinned` players always present. Groups must be disjoint from each other
// and from `pinned`. One gradient per sampled sub-player subset: samples_T
// subsets for each size s = 0 .. m*K - 1.
TaylorEstimate group_rewards_taylor(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& groups,
                                    std::size_t K, std::size_t samples_T, std::uint64_t seed,
                                    std::span<const std::size_t> pinned = {});

// Each player as its own group.
TaylorEstimate pixel_rewards_taylor(const PixelGameContext& ctx, std::size_t K, std::size_t samples_T,
                                    std::uint64_t seed);

// Reward of components[target] among all components.
double component_reward_taylor(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& components,
                               std::size_t target, std::size_t K, std::size_t samples_T, std::uint64_t seed);

struct InteractionValue {
  std::vector<std::size_t> coalition;
  double phi_merged = 0.0;
  double phi_sum = 0.0;
  double I = 0.0;  // phi_merged - phi_sum
};

// `coalition` lists indices into `components`.
InteractionValue interaction(const PixelGameContext& ctx, std::span<const std::size_t> coalition,
                             const std::vector<std::vector<std::size_t>>& components, std::size_t K,
                             std::size_t samples_T, std::uint64_t seed);

// Exact interaction of a coalition of players of any game with n <= 20.
InteractionValue interaction_exact(const Game& game, Coalition s);

struct BatchOptions {
  bool pin_nearest = true;
  double coverage_stop = 0.9;  // stop once this share of coverable components is covered
  bool evaluate_all = false;   // keep batching until every candidate has an estimate
};

struct BatchedRewards {
  std::vector<double> reward;  // merged-player value per candidate; NaN if not evaluated
  // Sum of the members' values estimated with the same pinned players, so
  // reward - member_sum is the candidate's interaction; NaN if not evaluated.
  std::vector<double> member_sum;
  std::vector<std::uint8_t> evaluated;
  std::size_t batches = 0;
  double coverage = 0.0;
  std::size_t gradient_evaluations = 0;
};

// Each batch merges up to m_tilde / q disjoint candidates (q = members per
// candidate) into single players, keeps the other components as singletons
// and estimates all merged values in one sampling pass. A second pass over
// the same batch with every component separate gives the member sums.
BatchedRewards batched_candidate_rewards(const PixelGameContext& ctx,
                                         const std::vector<std::vector<std::size_t>>& components,
                                         const std::vector<std::vector<std::size_t>>& candidates, std::size_t K,
                                         std::size_t samples_T, std::size_t m_tilde, std::uint64_t seed,
                                         const BatchOptions& options = {});

// Index of the component closest to `members` (centroid distance on the
// player grid), excluding the members themselves; ties go to the lower index.
std::size_t nearest_component(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& components,
                              std::span<const std::size_t> members, std::span<const std::uint8_t> excluded = {});

}  // namespace advshap
