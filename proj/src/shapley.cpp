#include "advshap/shapley.hpp"

#include <bit>
#include <cmath>

#include "advshap/error.hpp"
#include "advshap/parallel.hpp"
#include "advshap/random.hpp"

namespace advshap {

Coalition coalition_of(std::span<const std::size_t> players) {
  Coalition s = 0;
  for (std::size_t p : players) {
    if (p >= kMaxPlayers) throw Error("coalition_of", "player index " + std::to_string(p) + " exceeds 63");
    s = with_player(s, p);
  }
  return s;
}

std::vector<std::size_t> players_of(Coalition s) {
  std::vector<std::size_t> out;
  while (s) {
    out.push_back(static_cast<std::size_t>(std::countr_zero(s)));
    s &= s - 1;
  }
  return out;
}

void Game::rewards(std::span<const Coalition> coalitions, std::span<double> out) const {
  parallel_for(coalitions.size(), [&](std::size_t i) { out[i] = reward(coalitions[i]); });
}

FunctionGame::FunctionGame(std::size_t n, std::function<double(Coalition)> fn) : n_(n), fn_(std::move(fn)) {
  if (n_ > kMaxPlayers) throw Error("FunctionGame", "at most 64 players supported");
}

MemoizedGame::MemoizedGame(const Game& inner) : inner_(inner) {}

double MemoizedGame::reward(Coalition s) const {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(s); it != cache_.end()) return it->second;
  }
  const double v = inner_.reward(s);
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.try_emplace(s, v).first->second;
}

void MemoizedGame::rewards(std::span<const Coalition> coalitions, std::span<double> out) const {
  std::vector<Coalition> missing;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    std::unordered_map<Coalition, bool> queued;
    for (Coalition s : coalitions) {
      if (!cache_.contains(s) && queued.try_emplace(s, true).second) missing.push_back(s);
    }
  }
  if (!missing.empty()) {
    std::vector<double> values(missing.size());
    inner_.rewards(missing, values);
    std::lock_guard<std::mutex> lock(mutex_);
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.try_emplace(missing[i], values[i]);
  }
  std::lock_guard<std::mutex> lock(mutex_);
  for (std::size_t i = 0; i < coalitions.size(); ++i) out[i] = cache_.at(coalitions[i]);
}

std::size_t MemoizedGame::evaluations() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

double shapley_weight(std::size_t n, std::size_t s) {
  // 1 / (n * C(n-1, s))
  double binom = 1.0;
  const std::size_t k = std::min(s, n - 1 - s);
  for (std::size_t j = 1; j <= k; ++j) {
    binom *= static_cast<double>(n - 1 - k + j) / static_cast<double>(j);
  }
  return 1.0 / (static_cast<double>(n) * binom);
}

namespace {

void fill_endpoints(const Game& game, ShapleyEstimate& est) {
  const Coalition ends[2] = {0, full_coalition(game.num_players())};
  double v[2];
  game.rewards(ends, v);
  est.reward_empty = v[0];
  est.reward_full = v[1];
  double total = 0.0;
  for (double x : est.values) total += x;
  est.efficiency_residual = total - (est.reward_full - est.reward_empty);
}

}  // namespace

ShapleyEstimate shapley_exact(const Game& game) {
  const std::size_t n = game.num_players();
  if (n > kMaxExactPlayers) {
    throw Error("shapley_exact", std::to_string(n) + " players exceed the exact limit of 20; use shapley_sampled");
  }
  ShapleyEstimate est;
  est.method = ShapleyMethod::kExact;
  est.values.assign(n, 0.0);
  if (n == 0) {
    fill_endpoints(game, est);
    return est;
  }
  const std::size_t total = std::size_t{1} << n;
  std::vector<Coalition> all(total);
  for (std::size_t s = 0; s < total; ++s) all[s] = s;
  std::vector<double> r(total);
  game.rewards(all, r);
  std::vector<double> weight(n);
  for (std::size_t s = 0; s < n; ++s) weight[s] = shapley_weight(n, s);
  for (std::size_t i = 0; i < n; ++i) {
    const Coalition bit = Coalition{1} << i;
    double phi = 0.0;
    for (std::size_t s = 0; s < total; ++s) {
      if (s & bit) continue;
      phi += weight[std::popcount(s)] * (r[s | bit] - r[s]);
    }
    est.values[i] = phi;
  }
  est.samples_used = total;
  est.reward_empty = r[0];
  est.reward_full = r[total - 1];
  double sum = 0.0;
  for (double v : est.values) sum += v;
  est.efficiency_residual = sum - (est.reward_full - est.reward_empty);
  return est;
}

ShapleyEstimate shapley_sampled(const Game& game, std::size_t samples_T, std::uint64_t seed) {
  const std::size_t n = game.num_players();
  if (samples_T == 0) throw Error("shapley_sampled", "samples_T must be at least 1");
  ShapleyEstimate est;
  est.method = ShapleyMethod::kSampled;
  est.values.assign(n, 0.0);
  std::vector<Coalition> coalitions(2 * n * samples_T);
  std::vector<double> r(coalitions.size());
  for (std::size_t s = 0; s < n; ++s) {
    // One permutation per draw is shared by all players: player i takes the
    // first s elements of the permutation with i removed.
    Rng rng(derive_seed(seed, s));
    for (std::size_t t = 0; t < samples_T; ++t) {
      const std::vector<std::size_t> perm = rng.permutation(n);
      for (std::size_t i = 0; i < n; ++i) {
        Coalition c = 0;
        for (std::size_t j = 0, taken = 0; taken < s; ++j) {
          if (perm[j] == i) continue;
          c = with_player(c, perm[j]);
          ++taken;
        }
        coalitions[2 * (t * n + i)] = c;
        coalitions[2 * (t * n + i) + 1] = with_player(c, i);
      }
    }
    game.rewards(coalitions, r);
    for (std::size_t t = 0; t < samples_T; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        est.values[i] += r[2 * (t * n + i) + 1] - r[2 * (t * n + i)];
      }
    }
  }
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(samples_T));
  for (double& v : est.values) v *= scale;
  est.samples_used = n * samples_T;
  fill_endpoints(game, est);
  return est;
}

double shapley_merged(const Game& game, Coalition s) {
  const std::size_t n = game.num_players();
  if (s == 0) throw Error("shapley_merged", "coalition must not be empty");
  if ((s & ~full_coalition(n)) != 0) throw Error("shapley_merged", "coalition contains unknown players");
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    if (!contains(s, i)) others.push_back(i);
  }
  if (others.size() > kMaxExactPlayers) {
    throw Error("shapley_merged", "quotient game has too many players for exact enumeration");
  }
  const std::size_t n_prime = others.size() + 1;
  const std::size_t total = std::size_t{1} << others.size();
  std::vector<Coalition> coalitions(2 * total);
  for (std::size_t mask = 0; mask < total; ++mask) {
    Coalition t = 0;
    for (std::size_t j = 0; j < others.size(); ++j) {
      if ((mask >> j) & 1U) t = with_player(t, others[j]);
    }
    coalitions[2 * mask] = t;
    coalitions[2 * mask + 1] = t | s;
  }
  std::vector<double> r(coalitions.size());
  game.rewards(coalitions, r);
  double phi = 0.0;
  for (std::size_t mask = 0; mask < total; ++mask) {
    phi += shapley_weight(n_prime, static_cast<std::size_t>(std::popcount(mask))) * (r[2 * mask + 1] - r[2 * mask]);
  }
  return phi;
}

}  // namespace advshap
