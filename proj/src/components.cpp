#include "advshap/components.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "advshap/error.hpp"
#include "advshap/random.hpp"

namespace advshap {

std::vector<std::size_t> ExtractionResult::label_grid(std::size_t num_players) const {
  std::vector<std::size_t> out(num_players, 0);
  for (const Component& c : components) {
    for (std::size_t p : c.players) out.at(p) = c.id;
  }
  return out;
}

double merge_threshold(const GammaRule& rule, std::vector<double> abs_interactions) {
  if (rule.kind == GammaRule::Kind::kAbsolute) return rule.value;
  if (abs_interactions.empty()) return std::numeric_limits<double>::infinity();
  std::sort(abs_interactions.begin(), abs_interactions.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::ceil(rule.value * static_cast<double>(abs_interactions.size()) - 1e-12));
  if (k >= abs_interactions.size()) return -std::numeric_limits<double>::infinity();
  return abs_interactions[k];
}

namespace {

std::size_t block_side(std::size_t q) {
  const auto b = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(q))));
  if (b < 2 || b * b != q) throw Error("extract_components", "q must be a square of an integer >= 2");
  return b;
}

Component make_component(const PixelGameContext& ctx, std::size_t level, std::size_t row, std::size_t col,
                         std::size_t side, std::vector<std::size_t> players) {
  Component c;
  c.level = level;
  c.row = row;
  c.col = col;
  c.side = side;
  std::sort(players.begin(), players.end());
  c.players = std::move(players);
  for (std::size_t p : c.players) {
    const auto px = ctx.player_pixels(p);
    c.pixels.insert(c.pixels.end(), px.begin(), px.end());
  }
  std::sort(c.pixels.begin(), c.pixels.end());
  return c;
}

std::vector<std::vector<std::size_t>> player_sets(const std::vector<Component>& comps) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(comps.size());
  for (const Component& c : comps) out.push_back(c.players);
  return out;
}

void renumber(std::vector<Component>& comps) {
  std::sort(comps.begin(), comps.end(),
            [](const Component& a, const Component& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
  for (std::size_t i = 0; i < comps.size(); ++i) comps[i].id = i;
}

}  // namespace

ExtractionResult extract_components(const PixelGameContext& ctx, const ExtractionConfig& config) {
  const std::size_t b = block_side(config.q);
  if (config.gamma_schedule.empty()) throw Error("extract_components", "gamma schedule is empty");
  if (config.max_rounds == 0) throw Error("extract_components", "max_rounds must be positive");
  ExtractionResult result;
  std::vector<Component>& comps = result.components;
  for (std::size_t p = 0; p < ctx.num_players(); ++p) {
    comps.push_back(make_component(ctx, 0, p / ctx.grid_cols, p % ctx.grid_cols, 1, {p}));
  }
  renumber(comps);

  auto score = [&](std::size_t round) {
    const TaylorEstimate est = group_rewards_taylor(ctx, player_sets(comps), config.K, config.samples_T,
                                                    derive_seed(config.seed, round, 1));
    for (std::size_t i = 0; i < comps.size(); ++i) comps[i].reward = est.values[i];
  };

  bool fresh = false;
  for (std::size_t round = 0; round < config.max_rounds; ++round) {
    score(round);
    fresh = true;
    ExtractionRound info;
    info.components = comps.size();

    // b x b arrangements of same-level components, keyed by top-left member.
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> at;
    for (std::size_t i = 0; i < comps.size(); ++i) at[{comps[i].level, comps[i].row, comps[i].col}] = i;
    std::vector<std::vector<std::size_t>> candidates;
    for (const Component& c : comps) {
      if (c.players.size() * config.q > config.max_size) continue;
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < b && members.size() == i * b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
          const auto it = at.find({c.level, c.row + i * c.side, c.col + j * c.side});
          if (it == at.end() || comps[it->second].players.size() != c.players.size()) break;
          members.push_back(it->second);
        }
      }
      if (members.size() == config.q) candidates.push_back(std::move(members));
    }
    info.candidates = candidates.size();
    if (candidates.empty()) {
      result.rounds.push_back(info);
      break;
    }

    const std::size_t m = comps.size();
    std::size_t m_tilde = static_cast<std::size_t>(config.m_tilde_fraction * static_cast<double>(m));
    m_tilde = std::clamp<std::size_t>(m_tilde / config.q * config.q, config.q, m);
    BatchOptions opts;
    opts.pin_nearest = config.pin_nearest;
    opts.coverage_stop = config.coverage_stop;
    const BatchedRewards batched = batched_candidate_rewards(ctx, player_sets(comps), candidates, config.K,
                                                             config.samples_T, m_tilde,
                                                             derive_seed(config.seed, round, 2), opts);
    info.batches = batched.batches;
    info.coverage = batched.coverage;

    struct Scored {
      std::size_t index;
      double I;
    };
    std::vector<Scored> scored;
    std::vector<double> magnitudes;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (!batched.evaluated[k]) continue;
      scored.push_back({k, batched.reward[k] - batched.member_sum[k]});
      magnitudes.push_back(std::abs(scored.back().I));
    }
    info.evaluated = scored.size();
    const GammaRule& rule = config.gamma_schedule[std::min(round, config.gamma_schedule.size() - 1)];
    info.gamma = merge_threshold(rule, magnitudes);

    std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& c) {
      const double ma = std::abs(a.I), mc = std::abs(c.I);
      if (ma != mc) return ma > mc;
      const Component& ta = comps[candidates[a.index].front()];
      const Component& tc = comps[candidates[c.index].front()];
      return std::tie(ta.row, ta.col) < std::tie(tc.row, tc.col);
    });
    std::vector<std::uint8_t> merged(m, 0);
    std::vector<Component> next;
    for (const Scored& s : scored) {
      if (!(std::abs(s.I) > info.gamma)) break;
      const auto& members = candidates[s.index];
      if (std::any_of(members.begin(), members.end(), [&](std::size_t c) { return merged[c] != 0; })) continue;
      std::vector<std::size_t> players;
      for (std::size_t c : members) {
        merged[c] = 1;
        players.insert(players.end(), comps[c].players.begin(), comps[c].players.end());
      }
      const Component& top = comps[members.front()];
      Component nc = make_component(ctx, top.level + 1, top.row, top.col, top.side * b, std::move(players));
      nc.interaction = s.I;
      next.push_back(std::move(nc));
      ++info.merges;
    }
    result.rounds.push_back(info);
    if (info.merges == 0) break;
    for (std::size_t i = 0; i < m; ++i) {
      if (!merged[i]) next.push_back(std::move(comps[i]));
    }
    comps = std::move(next);
    renumber(comps);
    fresh = false;
  }
  if (!fresh) score(config.max_rounds);
  return result;
}

const char* utility_name(Utility u) { return u == Utility::kSuppressTrue ? "suppress-true" : "promote-target"; }

ComponentStats component_stats(const Classifier& model, const PixelGameContext& ctx, const Component& component,
                               const SpatialMask& foreground) {
  if (component.players.empty()) throw Error("component_stats", "component is empty");
  if (foreground.size() != ctx.height * ctx.width) {
    throw Error("component_stats", "foreground mask does not match the image");
  }
  ComponentStats st;
  std::size_t fg = 0;
  for (std::size_t p : component.pixels) fg += foreground[p] != 0;
  st.foreground_ratio = component.pixels.empty() ? 0.0
                                                 : static_cast<double>(fg) / static_cast<double>(component.pixels.size());
  std::vector<double> full(ctx.x.size()), without(ctx.x.size());
  for (std::size_t i = 0; i < full.size(); ++i) full[i] = without[i] = ctx.x[i] + ctx.delta[i];
  for (std::size_t p : component.players) {
    for (std::size_t coord : ctx.players.at(p)) without[coord] = ctx.x[coord];
  }
  const std::vector<double> g_full = model.logits(full);
  const std::vector<double> g_without = model.logits(without);
  st.dy_true = std::abs(g_full[ctx.true_class] - g_without[ctx.true_class]);
  st.dy_target = std::abs(g_full[ctx.target_class] - g_without[ctx.target_class]);
  st.utility = st.dy_true > st.dy_target ? Utility::kSuppressTrue : Utility::kPromoteTarget;
  return st;
}

RatioSummary aggregate_ratios(const std::vector<std::vector<ComponentStats>>& per_image) {
  RatioSummary s;
  std::size_t fg = 0, suppress = 0;
  for (const auto& image : per_image) {
    if (image.empty()) {
      ++s.images_skipped;
      continue;
    }
    ++s.images_analyzed;
    for (const ComponentStats& c : image) {
      ++s.components;
      fg += c.foreground_ratio > 0.5;
      suppress += c.utility == Utility::kSuppressTrue;
    }
  }
  if (s.components > 0) {
    s.foreground_ratio = static_cast<double>(fg) / static_cast<double>(s.components);
    s.suppress_true_ratio = static_cast<double>(suppress) / static_cast<double>(s.components);
  }
  return s;
}

}  // namespace advshap
