#pragma once

// Shapley attribution of L x L image regions to the attacking cost, and the
// map comparison utilities used to contrast attributions with perturbation
// magnitudes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "advshap/attacks.hpp"
#include "advshap/model.hpp"
#include "advshap/shapley.hpp"

namespace advshap {

// Regions index spatial pixels of a frame_height x frame_width frame. The
// interior window is split into L x L cells (row-major); everything outside
// the window is the border.
struct GridPartition {
  std::size_t L = 0;
  std::size_t frame_height = 0;
  std::size_t frame_width = 0;
  std::vector<std::vector<std::size_t>> regions;
  std::vector<std::size_t> border;
};

GridPartition make_grid(std::size_t L, std::size_t frame_height, std::size_t frame_width, std::size_t top,
                        std::size_t left, std::size_t height, std::size_t width);
GridPartition make_grid(std::size_t L, const ExtendedImage& ext);

enum class AttributionMethod { kExact, kSampled };

struct RegionalConfig {
  Norm norm = Norm::kL2;
  std::size_t L = 8;
  double beta = 1.0 / 6.0;
  BorderFill fill = BorderFill::kReplicate;
  double border_fill = 0.0;
  AttributionMethod method = AttributionMethod::kSampled;
  std::size_t samples_T = 4;
  std::uint64_t seed = 0;
  L2AttackConfig l2;
  LinfAttackConfig linf;
};

struct AttributionMap {
  std::size_t L = 0;
  Norm p = Norm::kL2;
  // phi[u * L + v]: Shapley value of region (u, v) in the game whose reward is
  // the attacking cost, so sum(phi) = cost_full - cost_empty.
  std::vector<double> phi;
  double cost_full = 0.0;   // cost(all regions)
  double cost_empty = 0.0;  // cost(border only)
  AttributionMethod method = AttributionMethod::kSampled;
  std::size_t samples_T = 0;
  double efficiency_residual = 0.0;
  std::size_t attacks_run = 0;
  std::size_t attacks_failed = 0;
  std::vector<double> delta_full;  // perturbation of the all-regions attack, extended frame

  // -phi: positive where making a region perturbable lowers the cost.
  std::vector<double> importance() const;
};

// Cost of one masked attack, with the configured failure cost substituted
// for unsuccessful runs.
double masked_cost(const Classifier& model, std::span<const double> image, std::size_t target, const Mask& mask,
                   const RegionalConfig& config, AttackResult* result = nullptr);

// `image` is the un-extended image; the classifier must take the extended
// shape. Throws if the border-only attack fails.
AttributionMap regional_attribution(const Classifier& model, const Image& image, std::size_t target,
                                    const RegionalConfig& config);

// Per-region L2 magnitude of delta (laid out like the partition's frame,
// channels planar).
std::vector<double> regional_magnitude(std::span<const double> delta, const GridPartition& grid);

// Affine rescale to [0, 1]; a constant map becomes all zeros.
std::vector<double> normalize_map(std::span<const double> values);

// sum(min) / sum(max) of two normalized maps.
double iou(std::span<const double> a, std::span<const double> b);

}  // namespace advshap
