#pragma once

// Cooperative games over at most 64 players with exact, sampled and
// merged-coalition Shapley values.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

namespace advshap {

// Bit i set <=> player i is in the coalition.
using Coalition = std::uint64_t;

inline constexpr std::size_t kMaxExactPlayers = 20;
inline constexpr std::size_t kMaxPlayers = 64;

inline Coalition full_coalition(std::size_t n) { return n >= 64 ? ~Coalition{0} : (Coalition{1} << n) - 1; }
inline bool contains(Coalition s, std::size_t i) { return (s >> i) & 1U; }
inline Coalition with_player(Coalition s, std::size_t i) { return s | (Coalition{1} << i); }
Coalition coalition_of(std::span<const std::size_t> players);
std::vector<std::size_t> players_of(Coalition s);

// Reward functions must be deterministic and safe to call concurrently.
class Game {
 public:
  virtual ~Game() = default;
  virtual std::size_t num_players() const = 0;
  virtual double reward(Coalition s) const = 0;
  // Batch evaluation; the default runs reward() in parallel.
  virtual void rewards(std::span<const Coalition> coalitions, std::span<double> out) const;
};

class FunctionGame final : public Game {
 public:
  FunctionGame(std::size_t n, std::function<double(Coalition)> fn);
  std::size_t num_players() const override { return n_; }
  double reward(Coalition s) const override { return fn_(s); }

 private:
  std::size_t n_;
  std::function<double(Coalition)> fn_;
};

// Caches rewards of an underlying game by coalition. Batches only evaluate
// coalitions not seen before.
class MemoizedGame final : public Game {
 public:
  explicit MemoizedGame(const Game& inner);
  std::size_t num_players() const override { return inner_.num_players(); }
  double reward(Coalition s) const override;
  void rewards(std::span<const Coalition> coalitions, std::span<double> out) const override;
  std::size_t evaluations() const;

 private:
  const Game& inner_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<Coalition, double> cache_;
};

enum class ShapleyMethod { kExact, kSampled };

struct ShapleyEstimate {
  std::vector<double> values;
  ShapleyMethod method = ShapleyMethod::kExact;
  std::size_t samples_used = 0;
  double reward_full = 0.0;   // r(N)
  double reward_empty = 0.0;  // r(empty)
  double efficiency_residual = 0.0;  // sum(values) - (r(N) - r(empty))
};

// Weight s!(n-s-1)!/n! of a size-s coalition in an n-player game.
double shapley_weight(std::size_t n, std::size_t s);

// Enumerates all 2^n coalitions; n <= 20.
ShapleyEstimate shapley_exact(const Game& game);

// Size-stratified Monte Carlo: for each s = 0..n-1, samples_T draws of a
// uniformly random size-s coalition per player, marginals averaged with
// equal stratum weight. Each stratum has its own sub-seed.
ShapleyEstimate shapley_sampled(const Game& game, std::size_t samples_T, std::uint64_t seed);

// Value of coalition S as one player in the (n - |S| + 1)-player quotient
// game. Requires n - |S| <= 20.
double shapley_merged(const Game& game, Coalition s);

}  // namespace advshap
