#pragma once

// Hierarchical merging of perturbation super-pixels into components by
// interaction strength, and per-component utility statistics.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advshap/image.hpp"
#include "advshap/interaction.hpp"
#include "advshap/model.hpp"

namespace advshap {

// A square block of side^2 players whose top-left player is (row, col) on the
// player grid. Level-l components have side b^l where q = b^2.
struct Component {
  std::size_t id = 0;
  std::size_t level = 0;
  std::size_t row = 0, col = 0, side = 1;
  std::vector<std::size_t> players;
  std::vector<std::size_t> pixels;  // spatial indices
  double reward = 0.0;       // value as a player among the final components
  double interaction = 0.0;  // I of the merge that formed it (0 at level 0)
};

struct GammaRule {
  enum class Kind { kQuantile, kAbsolute };
  Kind kind = Kind::kQuantile;
  // kQuantile: share of candidates allowed above the threshold; kAbsolute:
  // the threshold itself.
  double value = 0.2;

  static GammaRule quantile(double share) { return {Kind::kQuantile, share}; }
  static GammaRule absolute(double gamma) { return {Kind::kAbsolute, gamma}; }
};

struct ExtractionConfig {
  std::size_t q = 4;
  // Round r uses entry min(r, size - 1).
  std::vector<GammaRule> gamma_schedule{GammaRule::quantile(0.2), GammaRule::quantile(0.5)};
  std::size_t max_size = 64;  // players per component
  double coverage_stop = 0.9;
  double m_tilde_fraction = 0.5;
  std::size_t K = 4;
  std::size_t samples_T = 500;
  bool pin_nearest = true;
  std::size_t max_rounds = 16;
  std::uint64_t seed = 0;
};

struct ExtractionRound {
  std::size_t components = 0;
  std::size_t candidates = 0;
  std::size_t evaluated = 0;
  std::size_t batches = 0;
  double coverage = 0.0;
  double gamma = 0.0;
  std::size_t merges = 0;
};

struct ExtractionResult {
  std::vector<Component> components;
  std::vector<ExtractionRound> rounds;

  // Component id per player, row-major over the player grid.
  std::vector<std::size_t> label_grid(std::size_t num_players) const;
};

// Threshold for a round: the (k+1)-th largest |I| with k = ceil(share * N),
// or the absolute value. Merges require |I| > gamma.
double merge_threshold(const GammaRule& rule, std::vector<double> abs_interactions);

ExtractionResult extract_components(const PixelGameContext& ctx, const ExtractionConfig& config);

enum class Utility { kSuppressTrue, kPromoteTarget };
const char* utility_name(Utility u);

struct ComponentStats {
  double foreground_ratio = 0.0;
  double dy_true = 0.0;    // |g_true(x + delta) - g_true(x + delta without the component)|
  double dy_target = 0.0;  // same for the target class
  Utility utility = Utility::kPromoteTarget;
};

ComponentStats component_stats(const Classifier& model, const PixelGameContext& ctx, const Component& component,
                               const SpatialMask& foreground);

struct RatioSummary {
  std::size_t images_analyzed = 0;
  std::size_t images_skipped = 0;  // images with no components
  std::size_t components = 0;
  double foreground_ratio = 0.0;     // share of components mostly in the foreground
  double suppress_true_ratio = 0.0;  // share of components labeled suppress-true
};

RatioSummary aggregate_ratios(const std::vector<std::vector<ComponentStats>>& per_image);

}  // namespace advshap
