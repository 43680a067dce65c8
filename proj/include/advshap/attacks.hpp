#pragma once

// Masked targeted attacks: a C&W-style L2 attack and BIM with a minimal-epsilon
// search for L-infinity, plus the border extension used by regional
// attribution.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "advshap/image.hpp"
#include "advshap/model.hpp"

namespace advshap {

// Spatial mask over height x width; a set bit allows every channel of that
// pixel to be perturbed.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  SpatialMask bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool value = false) : height(h), width(w), bits(h * w, value ? 1 : 0) {}

  std::size_t count() const;
  void set(std::size_t spatial_index) { bits[spatial_index] = 1; }
  // Extends the mask to all channels of a planar image.
  std::vector<double> expand(std::size_t channels) const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct AttackResult {
  std::vector<double> delta;  // same layout as the image; zero off-mask
  double cost = 0.0;
  bool success = false;
  std::size_t iterations_used = 0;
  Norm p = Norm::kL2;

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

struct L2AttackConfig {
  std::vector<double> lambdas{0.1, 1.0, 10.0, 100.0};
  std::size_t steps = 100;  // Adam steps per lambda
  double learning_rate = 0.01;
  double threshold = 0.0;  // kappa in f
  // Cost charged to a failed run inside attribution games; <= 0 selects
  // sqrt(number of perturbable values), the largest L2 norm in the box.
  double failure_cost = 0.0;
};

struct LinfAttackConfig {
  std::size_t steps = 20;
  double step_fraction = 0.125;  // alpha = fraction * epsilon
  std::size_t resolution = 255;  // epsilon searched over k / resolution
  double failure_cost = 1.0;
};

// Minimizes ||delta o M||_2^2 + lambda * f(x + delta o M) with Adam, clamping
// x + delta to [0, 1] after every step. Lambdas are tried in order; the first
// that succeeds is kept and the smallest-norm successful delta is returned.
AttackResult attack_l2_masked(const Classifier& model, std::span<const double> image, std::size_t target,
                              const Mask& mask, const L2AttackConfig& config = {});

// BIM restricted to the mask; cost is the smallest epsilon (multiple of
// 1/resolution) for which some iterate is classified as target.
AttackResult attack_linf_masked(const Classifier& model, std::span<const double> image, std::size_t target,
                                const Mask& mask, const LinfAttackConfig& config = {});

double l2_norm(std::span<const double> v);
double linf_norm(std::span<const double> v);

enum class BorderFill { kReplicate, kConstant };

struct ExtendedImage {
  Image pixels;
  std::size_t top = 0;  // interior window
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  BorderFill fill = BorderFill::kReplicate;
  double border_fill = 0.0;  // used by kConstant

  Image interior() const;
  Mask interior_mask() const;
  Mask border_mask() const;
};

// Border of ceil(beta * dim / 2) pixels on each side.
std::size_t border_width(double beta, std::size_t dim);

ExtendedImage extend_image(const Image& image, double beta, BorderFill fill = BorderFill::kReplicate,
                           double border_fill = 0.0);

}  // namespace advshap
