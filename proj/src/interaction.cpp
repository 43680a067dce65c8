#include "advshap/interaction.hpp"

#include <algorithm>
#include <limits>

#include "advshap/error.hpp"
#include "advshap/parallel.hpp"
#include "advshap/random.hpp"

namespace advshap {

ClassifierMarginReward::ClassifierMarginReward(const Classifier& model, std::size_t true_class,
                                               std::size_t target_class)
    : model_(model), selector_(model.num_classes(), 0.0), true_class_(true_class), target_class_(target_class) {
  if (true_class >= model.num_classes() || target_class >= model.num_classes()) {
    throw Error("ClassifierMarginReward", "class index out of range");
  }
  selector_[target_class] += 1.0;
  selector_[true_class] -= 1.0;
}

double ClassifierMarginReward::value(std::span<const double> x) const {
  const std::vector<double> z = model_.logits(x);
  return z[target_class_] - z[true_class_];
}

double ClassifierMarginReward::gradient(std::span<const double> x, std::span<double> grad) const {
  std::vector<double> z;
  const std::vector<double> g = model_.input_gradient(x, selector_, &z);
  std::copy(g.begin(), g.end(), grad.begin());
  return z[target_class_] - z[true_class_];
}

std::vector<std::size_t> PixelGameContext::player_pixels(std::size_t player) const {
  std::vector<std::size_t> out;
  const std::size_t plane = height * width;
  for (std::size_t coord : players.at(player)) {
    if (coord < plane) out.push_back(coord);
  }
  return out;
}

PixelGameContext make_pixel_context(std::shared_ptr<const DifferentiableReward> reward, const Image& x,
                                    std::vector<double> delta, std::size_t superpixel, std::size_t true_class,
                                    std::size_t target_class) {
  if (!reward) throw Error("make_pixel_context", "reward is null");
  if (superpixel == 0) throw Error("make_pixel_context", "superpixel size must be positive");
  if (delta.size() != x.size()) throw Error("make_pixel_context", "delta and image differ in size");
  if (reward->input_size() != x.size()) throw Error("make_pixel_context", "reward input size mismatch");
  PixelGameContext ctx;
  ctx.reward = std::move(reward);
  ctx.x = x.pixels;
  ctx.delta = std::move(delta);
  ctx.true_class = true_class;
  ctx.target_class = target_class;
  ctx.height = x.height;
  ctx.width = x.width;
  ctx.channels = x.channels;
  ctx.superpixel = superpixel;
  ctx.grid_rows = (x.height + superpixel - 1) / superpixel;
  ctx.grid_cols = (x.width + superpixel - 1) / superpixel;
  ctx.players.resize(ctx.grid_rows * ctx.grid_cols);
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t y = 0; y < x.height; ++y) {
      for (std::size_t xx = 0; xx < x.width; ++xx) {
        ctx.players[(y / superpixel) * ctx.grid_cols + xx / superpixel].push_back((c * x.height + y) * x.width + xx);
      }
    }
  }
  return ctx;
}

PixelGameContext make_classifier_context(const Classifier& model, const Image& x, std::vector<double> delta,
                                         std::size_t true_class, std::size_t target_class,
                                         std::size_t superpixel) {
  if (true_class == target_class) throw Error("make_classifier_context", "true and target class must differ");
  auto reward = std::make_shared<ClassifierMarginReward>(model, true_class, target_class);
  return make_pixel_context(std::move(reward), x, std::move(delta), superpixel, true_class, target_class);
}

double reward_z(const PixelGameContext& ctx, std::span<const std::size_t> players) {
  std::vector<double> input = ctx.x;
  for (std::size_t p : players) {
    if (p >= ctx.players.size()) throw Error("reward_z", "player " + std::to_string(p) + " out of range");
    for (std::size_t coord : ctx.players[p]) input[coord] = ctx.x[coord] + ctx.delta[coord];
  }
  return ctx.reward->value(input);
}

PixelGame::PixelGame(const PixelGameContext& ctx) : ctx_(ctx) {
  if (ctx.num_players() > kMaxPlayers) throw Error("PixelGame", "at most 64 players supported");
}

double PixelGame::reward(Coalition s) const {
  const std::vector<std::size_t> players = players_of(s);
  return reward_z(ctx_, players);
}

SubPixelGame::SubPixelGame(const PixelGameContext& ctx, std::size_t K) : ctx_(ctx), K_(K) {
  if (K == 0) throw Error("SubPixelGame", "K must be at least 1");
  if (ctx.num_players() * K > kMaxPlayers) throw Error("SubPixelGame", "n * K must not exceed 64");
}

double SubPixelGame::reward(Coalition s) const {
  std::vector<double> input = ctx_.x;
  for (std::size_t i = 0; i < ctx_.num_players(); ++i) {
    std::size_t count = 0;
    for (std::size_t k = 0; k < K_; ++k) count += contains(s, i * K_ + k);
    const double frac = static_cast<double>(count) / static_cast<double>(K_);
    for (std::size_t coord : ctx_.players[i]) input[coord] = ctx_.x[coord] + frac * ctx_.delta[coord];
  }
  return ctx_.reward->value(input);
}

namespace {

void check_groups(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& groups,
                  std::span<const std::size_t> pinned, const char* where) {
  std::vector<std::uint8_t> seen(ctx.num_players(), 0);
  auto mark = [&](std::size_t p) {
    if (p >= seen.size()) throw Error(where, "player " + std::to_string(p) + " out of range");
    if (seen[p]) throw Error(where, "overlapping components at player " + std::to_string(p));
    seen[p] = 1;
  };
  for (const auto& g : groups) {
    if (g.empty()) throw Error(where, "empty component");
    for (std::size_t p : g) mark(p);
  }
  for (std::size_t p : pinned) mark(p);
}

// Input coordinates covered by each group.
struct GroupCoords {
  std::vector<std::vector<std::size_t>> coords;
};

GroupCoords gather(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& groups) {
  GroupCoords gc;
  gc.coords.resize(groups.size());
  for (std::size_t u = 0; u < groups.size(); ++u) {
    for (std::size_t p : groups[u]) {
      gc.coords[u].insert(gc.coords[u].end(), ctx.players[p].begin(), ctx.players[p].end());
    }
  }
  return gc;
}

// Draws a uniform size-s subset of {0..M-1} \ {excluded} (excluded may be M
// for none) and returns per-group counts.
std::vector<std::size_t> draw_counts(Rng& rng, std::size_t M, std::size_t K, std::size_t s,
                                     std::size_t excluded, std::vector<std::size_t>& pool) {
  pool.clear();
  for (std::size_t j = 0; j < M; ++j) {
    if (j != excluded) pool.push_back(j);
  }
  std::vector<std::size_t> counts(M / K, 0);
  for (std::size_t j = 0; j < s; ++j) {
    const std::size_t pick = j + rng.index(pool.size() - j);
    std::swap(pool[j], pool[pick]);
    ++counts[pool[j] / K];
  }
  return counts;
}

}  // namespace

TaylorEstimate group_rewards_taylor(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& groups,
                                    std::size_t K, std::size_t samples_T, std::uint64_t seed,
                                    std::span<const std::size_t> pinned) {
  if (K == 0) throw Error("group_rewards_taylor", "K must be at least 1");
  if (samples_T == 0) throw Error("group_rewards_taylor", "samples_T must be at least 1");
  check_groups(ctx, groups, pinned, "group_rewards_taylor");
  const std::size_t m = groups.size();
  const std::size_t M = m * K;
  const GroupCoords gc = gather(ctx, groups);
  const double inv_k = 1.0 / static_cast<double>(K);

  std::vector<double> base = ctx.x;
  for (std::size_t p : pinned) {
    for (std::size_t coord : ctx.players[p]) base[coord] += ctx.delta[coord];
  }
  // Input for given per-group counts, and the per-group linear terms
  // A_u = sum (delta / K) * dz/dx at that input.
  auto evaluate = [&](const std::vector<std::size_t>& counts, std::vector<double>& a) {
    std::vector<double> input = base;
    for (std::size_t u = 0; u < m; ++u) {
      const double frac = static_cast<double>(counts[u]) * inv_k;
      for (std::size_t coord : gc.coords[u]) input[coord] += frac * ctx.delta[coord];
    }
    std::vector<double> grad(input.size());
    ctx.reward->gradient(input, grad);
    a.assign(m, 0.0);
    for (std::size_t u = 0; u < m; ++u) {
      double acc = 0.0;
      for (std::size_t coord : gc.coords[u]) acc += ctx.delta[coord] * grad[coord];
      a[u] = acc * inv_k;
    }
  };

  TaylorEstimate est;
  est.values.assign(m, 0.0);
  std::vector<std::size_t> pool;
  std::vector<std::vector<std::size_t>> draws(samples_T);
  std::vector<std::vector<double>> linear(samples_T);
  for (std::size_t s = 0; s < M; ++s) {
    Rng rng(derive_seed(seed, s));
    for (std::size_t t = 0; t < samples_T; ++t) draws[t] = draw_counts(rng, M, K, s, M, pool);
    parallel_for(samples_T, [&](std::size_t t) { evaluate(draws[t], linear[t]); });
    est.gradient_evaluations += samples_T;
    for (std::size_t u = 0; u < m; ++u) {
      double num = 0.0, den = 0.0;
      for (std::size_t t = 0; t < samples_T; ++t) {
        const double w = static_cast<double>(K - draws[t][u]);
        num += w * linear[t][u];
        den += w;
      }
      if (den > 0.0) {
        est.values[u] += num / den;
      } else {
        // Every draw held all of u's sub-players; take one draw that leaves
        // sub-player (u, 0) out.
        Rng extra(derive_seed(seed, s, M + u));
        std::vector<double> a;
        evaluate(draw_counts(extra, M, K, s, u * K, pool), a);
        ++est.gradient_evaluations;
        est.values[u] += a[u];
      }
    }
  }
  for (double& v : est.values) v /= static_cast<double>(m);

  std::vector<double> full = base;
  for (std::size_t u = 0; u < m; ++u) {
    for (std::size_t coord : gc.coords[u]) full[coord] += ctx.delta[coord];
  }
  est.reward_full = ctx.reward->value(full);
  est.reward_empty = ctx.reward->value(base);
  double sum = 0.0;
  for (double v : est.values) sum += v;
  est.efficiency_residual = sum - (est.reward_full - est.reward_empty);
  return est;
}

TaylorEstimate pixel_rewards_taylor(const PixelGameContext& ctx, std::size_t K, std::size_t samples_T,
                                    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> groups(ctx.num_players());
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i] = {i};
  return group_rewards_taylor(ctx, groups, K, samples_T, seed);
}

double component_reward_taylor(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& components,
                               std::size_t target, std::size_t K, std::size_t samples_T, std::uint64_t seed) {
  if (target >= components.size()) throw Error("component_reward_taylor", "target component out of range");
  return group_rewards_taylor(ctx, components, K, samples_T, seed).values[target];
}

InteractionValue interaction(const PixelGameContext& ctx, std::span<const std::size_t> coalition,
                             const std::vector<std::vector<std::size_t>>& components, std::size_t K,
                             std::size_t samples_T, std::uint64_t seed) {
  if (coalition.empty()) throw Error("interaction", "coalition must not be empty");
  std::vector<std::uint8_t> in(components.size(), 0);
  for (std::size_t c : coalition) {
    if (c >= components.size()) throw Error("interaction", "component index out of range");
    if (in[c]) throw Error("interaction", "duplicate component in coalition");
    in[c] = 1;
  }
  InteractionValue out;
  out.coalition.assign(coalition.begin(), coalition.end());
  const TaylorEstimate singles = group_rewards_taylor(ctx, components, K, samples_T, derive_seed(seed, 1));
  for (std::size_t c : coalition) out.phi_sum += singles.values[c];

  std::vector<std::vector<std::size_t>> merged{{}};
  for (std::size_t c = 0; c < components.size(); ++c) {
    if (in[c]) {
      merged[0].insert(merged[0].end(), components[c].begin(), components[c].end());
    } else {
      merged.push_back(components[c]);
    }
  }
  out.phi_merged = group_rewards_taylor(ctx, merged, K, samples_T, derive_seed(seed, 2)).values[0];
  out.I = out.phi_merged - out.phi_sum;
  return out;
}

InteractionValue interaction_exact(const Game& game, Coalition s) {
  InteractionValue out;
  out.coalition = players_of(s);
  const ShapleyEstimate phi = shapley_exact(game);
  for (std::size_t i : out.coalition) out.phi_sum += phi.values[i];
  out.phi_merged = shapley_merged(game, s);
  out.I = out.phi_merged - out.phi_sum;
  return out;
}

std::size_t nearest_component(const PixelGameContext& ctx, const std::vector<std::vector<std::size_t>>& components,
                              std::span<const std::size_t> members, std::span<const std::uint8_t> excluded) {
  auto centroid = [&](const std::vector<std::size_t>& players) {
    double r = 0.0, c = 0.0;
    for (std::size_t p : players) {
      r += static_cast<double>(p / ctx.grid_cols);
      c += static_cast<double>(p % ctx.grid_cols);
    }
    const double n = static_cast<double>(players.size());
    return std::pair<double, double>{r / n, c / n};
  };
  std::vector<std::size_t> joined;
  std::vector<std::uint8_t> skip(components.size(), 0);
  for (std::size_t mbr : members) {
    joined.insert(joined.end(), components.at(mbr).begin(), components.at(mbr).end());
    skip[mbr] = 1;
  }
  for (std::size_t i = 0; i < excluded.size() && i < skip.size(); ++i) skip[i] |= excluded[i];
  const auto [r0, c0] = centroid(joined);
  std::size_t best = components.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (skip[i]) continue;
    const auto [r, c] = centroid(components[i]);
    const double d = (r - r0) * (r - r0) + (c - c0) * (c - c0);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

BatchedRewards batched_candidate_rewards(const PixelGameContext& ctx,
                                         const std::vector<std::vector<std::size_t>>& components,
                                         const std::vector<std::vector<std::size_t>>& candidates, std::size_t K,
                                         std::size_t samples_T, std::size_t m_tilde, std::uint64_t seed,
                                         const BatchOptions& options) {
  check_groups(ctx, components, {}, "batched_candidate_rewards");
  const std::size_t m = components.size();
  BatchedRewards out;
  out.reward.assign(candidates.size(), std::numeric_limits<double>::quiet_NaN());
  out.member_sum.assign(candidates.size(), std::numeric_limits<double>::quiet_NaN());
  out.evaluated.assign(candidates.size(), 0);
  if (candidates.empty()) return out;
  const std::size_t q = candidates.front().size();
  for (const auto& cand : candidates) {
    if (cand.size() != q || q == 0) throw Error("batched_candidate_rewards", "candidates must have equal size q");
    for (std::size_t c : cand) {
      if (c >= m) throw Error("batched_candidate_rewards", "candidate references unknown component");
    }
  }
  if (m_tilde < q || m_tilde > m) throw Error("batched_candidate_rewards", "m_tilde must lie in [q, m]");
  const std::size_t per_batch = m_tilde / q;

  // Pins: the nearest outside component of each member.
  std::vector<std::vector<std::size_t>> pins(candidates.size());
  if (options.pin_nearest) {
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      std::vector<std::uint8_t> excl(m, 0);
      for (std::size_t c : candidates[k]) excl[c] = 1;
      for (std::size_t c : candidates[k]) {
        const std::size_t single[1] = {c};
        const std::size_t nb = nearest_component(ctx, components, single, excl);
        if (nb < m && std::find(pins[k].begin(), pins[k].end(), nb) == pins[k].end()) pins[k].push_back(nb);
      }
    }
  }

  std::vector<std::uint8_t> coverable(m, 0), covered(m, 0);
  for (const auto& cand : candidates) {
    for (std::size_t c : cand) coverable[c] = 1;
  }
  const double n_coverable = static_cast<double>(std::count(coverable.begin(), coverable.end(), 1));

  Rng order_rng(derive_seed(seed, 0x0bad));
  std::vector<std::size_t> order = order_rng.permutation(candidates.size());

  auto coverage = [&] {
    return static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / n_coverable;
  };
  while (true) {
    const bool all_done = std::all_of(out.evaluated.begin(), out.evaluated.end(), [](auto e) { return e != 0; });
    if (all_done) break;
    if (!options.evaluate_all && coverage() >= options.coverage_stop) break;

    // 1 = member of a chosen candidate, 2 = pinned by one. Pins may be shared.
    std::vector<std::uint8_t> used(m, 0);
    std::vector<std::size_t> chosen;
    auto try_pick = [&](std::size_t k, bool need_new) {
      if (out.evaluated[k] || chosen.size() >= per_batch) return;
      if (std::find(chosen.begin(), chosen.end(), k) != chosen.end()) return;
      bool fresh = false;
      for (std::size_t c : candidates[k]) {
        if (used[c]) return;
        fresh |= !covered[c];
      }
      for (std::size_t c : pins[k]) {
        if (used[c] == 1) return;
      }
      if (need_new && !fresh) return;
      for (std::size_t c : candidates[k]) used[c] = 1;
      for (std::size_t c : pins[k]) used[c] = 2;
      chosen.push_back(k);
    };
    for (std::size_t k : order) try_pick(k, true);
    for (std::size_t k : order) try_pick(k, false);
    if (chosen.empty()) break;

    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::uint8_t> in_group(m, 0);
    std::vector<std::size_t> pinned_players;
    for (std::size_t k : chosen) {
      std::vector<std::size_t> merged;
      for (std::size_t c : candidates[k]) {
        merged.insert(merged.end(), components[c].begin(), components[c].end());
        in_group[c] = 1;
      }
      groups.push_back(std::move(merged));
      for (std::size_t c : pins[k]) {
        if (!in_group[c]) {
          in_group[c] = 2;
          pinned_players.insert(pinned_players.end(), components[c].begin(), components[c].end());
        }
      }
    }
    // Same batch with every unpinned component as its own group.
    std::vector<std::vector<std::size_t>> separate;
    std::vector<std::size_t> slot(m, 0);
    for (std::size_t c = 0; c < m; ++c) {
      if (in_group[c] == 2) continue;
      slot[c] = separate.size();
      separate.push_back(components[c]);
      if (!in_group[c]) groups.push_back(components[c]);
    }
    const std::uint64_t batch_seed = derive_seed(seed, out.batches + 1);
    const TaylorEstimate est = group_rewards_taylor(ctx, groups, K, samples_T, batch_seed, pinned_players);
    const TaylorEstimate parts =
        group_rewards_taylor(ctx, separate, K, samples_T, derive_seed(batch_seed, 1), pinned_players);
    out.gradient_evaluations += est.gradient_evaluations + parts.gradient_evaluations;
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      const std::size_t k = chosen[j];
      out.reward[k] = est.values[j];
      double sum = 0.0;
      for (std::size_t c : candidates[k]) sum += parts.values[slot[c]];
      out.member_sum[k] = sum;
      out.evaluated[k] = 1;
      for (std::size_t c : candidates[k]) covered[c] = 1;
    }
    ++out.batches;
  }
  out.coverage = coverage();
  return out;
}

}  // namespace advshap
