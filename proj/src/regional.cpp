#include "advshap/regional.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "advshap/error.hpp"

namespace advshap {

GridPartition make_grid(std::size_t L, std::size_t frame_height, std::size_t frame_width, std::size_t top,
                        std::size_t left, std::size_t height, std::size_t width) {
  if (L == 0) throw Error("make_grid", "L must be positive");
  if (L * L > kMaxPlayers) throw Error("make_grid", "L * L must not exceed 64");
  if (L > height || L > width) throw Error("make_grid", "L exceeds the interior size");
  if (top + height > frame_height || left + width > frame_width) {
    throw Error("make_grid", "interior window outside the frame");
  }
  GridPartition g;
  g.L = L;
  g.frame_height = frame_height;
  g.frame_width = frame_width;
  g.regions.resize(L * L);
  std::vector<std::uint8_t> inside(frame_height * frame_width, 0);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t u = y * L / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t v = x * L / width;
      const std::size_t p = (top + y) * frame_width + left + x;
      g.regions[u * L + v].push_back(p);
      inside[p] = 1;
    }
  }
  for (std::size_t p = 0; p < inside.size(); ++p) {
    if (!inside[p]) g.border.push_back(p);
  }
  return g;
}

GridPartition make_grid(std::size_t L, const ExtendedImage& ext) {
  return make_grid(L, ext.pixels.height, ext.pixels.width, ext.top, ext.left, ext.height, ext.width);
}

std::vector<double> AttributionMap::importance() const {
  std::vector<double> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = -phi[i];
  return out;
}

double masked_cost(const Classifier& model, std::span<const double> image, std::size_t target, const Mask& mask,
                   const RegionalConfig& config, AttackResult* result) {
  AttackResult r = config.norm == Norm::kL2 ? attack_l2_masked(model, image, target, mask, config.l2)
                                            : attack_linf_masked(model, image, target, mask, config.linf);
  double cost = r.cost;
  if (!r.success) {
    if (config.norm == Norm::kLinf) {
      cost = config.linf.failure_cost;
    } else {
      cost = config.l2.failure_cost > 0.0 ? config.l2.failure_cost
                                          : std::sqrt(static_cast<double>(mask.height * mask.width *
                                                                          model.spec().channels));
    }
  }
  if (result) *result = std::move(r);
  return cost;
}

namespace {

class RegionCostGame final : public Game {
 public:
  RegionCostGame(const Classifier& model, const std::vector<double>& image, std::size_t target,
                 const GridPartition& grid, const RegionalConfig& config)
      : model_(model), image_(image), target_(target), grid_(grid), config_(config) {}

  std::size_t num_players() const override { return grid_.regions.size(); }

  Mask mask_for(Coalition s) const {
    Mask m(grid_.frame_height, grid_.frame_width);
    for (std::size_t p : grid_.border) m.set(p);
    for (std::size_t r = 0; r < grid_.regions.size(); ++r) {
      if (contains(s, r)) {
        for (std::size_t p : grid_.regions[r]) m.set(p);
      }
    }
    return m;
  }

  double reward(Coalition s) const override {
    AttackResult r;
    const double cost = masked_cost(model_, image_, target_, mask_for(s), config_, &r);
    runs_.fetch_add(1);
    if (!r.success) failures_.fetch_add(1);
    return cost;
  }

  std::size_t runs() const { return runs_.load(); }
  std::size_t failures() const { return failures_.load(); }

 private:
  const Classifier& model_;
  const std::vector<double>& image_;
  std::size_t target_;
  const GridPartition& grid_;
  const RegionalConfig& config_;
  mutable std::atomic<std::size_t> runs_{0};
  mutable std::atomic<std::size_t> failures_{0};
};

}  // namespace

AttributionMap regional_attribution(const Classifier& model, const Image& image, std::size_t target,
                                    const RegionalConfig& config) {
  const ExtendedImage ext = extend_image(image, config.beta, config.fill, config.border_fill);
  const ClassifierSpec& spec = model.spec();
  if (spec.height != ext.pixels.height || spec.width != ext.pixels.width || spec.channels != ext.pixels.channels) {
    throw Error("regional_attribution",
                "extended image is " + std::to_string(ext.pixels.height) + "x" + std::to_string(ext.pixels.width) +
                    "x" + std::to_string(ext.pixels.channels) + " but the classifier expects " +
                    std::to_string(spec.height) + "x" + std::to_string(spec.width) + "x" +
                    std::to_string(spec.channels) + "; train the classifier on extended-size images");
  }
  if (target >= spec.num_classes) throw Error("regional_attribution", "target class out of range");
  const GridPartition grid = make_grid(config.L, ext);
  const std::vector<double>& x = ext.pixels.pixels;

  RegionCostGame game(model, x, target, grid, config);
  AttackResult baseline;
  masked_cost(model, x, target, game.mask_for(0), config, &baseline);
  if (!baseline.success) {
    throw Error("regional_attribution",
                "attack perturbing only the extended border failed; increase beta or use a weaker model");
  }
  AttackResult full;
  masked_cost(model, x, target, game.mask_for(full_coalition(grid.regions.size())), config, &full);

  MemoizedGame memo(game);
  const ShapleyEstimate est = config.method == AttributionMethod::kExact
                                  ? shapley_exact(memo)
                                  : shapley_sampled(memo, config.samples_T, config.seed);
  AttributionMap map;
  map.L = config.L;
  map.p = config.norm;
  map.phi = est.values;
  map.cost_full = est.reward_full;
  map.cost_empty = est.reward_empty;
  map.method = config.method;
  map.samples_T = config.method == AttributionMethod::kExact ? 0 : config.samples_T;
  map.efficiency_residual = est.efficiency_residual;
  map.attacks_run = game.runs() + 2;
  map.attacks_failed = game.failures() + (full.success ? 0 : 1);
  map.delta_full = std::move(full.delta);
  return map;
}

std::vector<double> regional_magnitude(std::span<const double> delta, const GridPartition& grid) {
  const std::size_t plane = grid.frame_height * grid.frame_width;
  if (plane == 0 || delta.size() % plane != 0) {
    throw Error("regional_magnitude", "delta size does not match the partition frame");
  }
  const std::size_t channels = delta.size() / plane;
  std::vector<double> out(grid.regions.size(), 0.0);
  for (std::size_t r = 0; r < grid.regions.size(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p : grid.regions[r]) sum += delta[c * plane + p] * delta[c * plane + p];
    }
    out[r] = std::sqrt(sum);
  }
  return out;
}

std::vector<double> normalize_map(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

double iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("iou", "maps differ in size");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::min(a[i], b[i]);
    den += std::max(a[i], b[i]);
  }
  if (den == 0.0) throw Error("iou", "both maps are all zero");
  return num / den;
}

}  // namespace advshap
