#include "advshap/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advshap/error.hpp"
#include "advshap/kernels.hpp"

namespace advshap {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

std::vector<double> Mask::expand(std::size_t channels) const {
  std::vector<double> out(bits.size() * channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < bits.size(); ++p) out[c * bits.size() + p] = bits[p] ? 1.0 : 0.0;
  }
  return out;
}

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v.data(), v.data(), v.size())); }

double linf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

namespace {

struct MarginEval {
  std::vector<double> logits;
  std::vector<double> grad;  // d(max_{i != t} Z_i - Z_t) / dx
  bool on_target = false;
};

std::size_t argmax(const std::vector<double>& z) {
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

// One forward/backward pass through the margin with the runner-up class
// picked from the recorded logits.
MarginEval eval_margin(const Classifier& model, const std::vector<double>& x, std::size_t target) {
  const ClassifierSpec& s = model.spec();
  MarginEval out;
  const OutputSelector selector = [target](Tape& tape, Var logits) {
    const Tensor& z = tape.value(logits);
    std::size_t j = target == 0 ? 1 : 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (i != target && z[i] > z[j]) j = i;
    }
    std::vector<double> w(z.size(), 0.0);
    w[j] = 1.0;
    w[target] = -1.0;
    return tape.sum(tape.mul(logits, tape.constant(Tensor(Shape{z.size()}, std::move(w)))));
  };
  Tensor logits;
  const Tensor g = grad_wrt_input(model.graph(), Tensor(Shape{s.channels, s.height, s.width}, x), selector, &logits);
  out.logits = logits.storage();
  out.grad = g.storage();
  out.on_target = argmax(out.logits) == target;
  return out;
}

void check_inputs(const Classifier& model, std::span<const double> image, std::size_t target, const Mask& mask,
                  const char* where) {
  const ClassifierSpec& s = model.spec();
  if (image.size() != s.input_size()) {
    throw Error(where, "image has " + std::to_string(image.size()) + " values, classifier expects " +
                           std::to_string(s.input_size()));
  }
  if (mask.height != s.height || mask.width != s.width || mask.bits.size() != s.height * s.width) {
    throw Error(where, "mask shape does not match the classifier input");
  }
  if (target >= s.num_classes) throw Error(where, "target class " + std::to_string(target) + " out of range");
}

void project_box(std::span<const double> x, std::vector<double>& delta, const std::vector<double>& m) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = m[i] == 0.0 ? 0.0 : std::clamp(x[i] + delta[i], 0.0, 1.0) - x[i];
  }
}

}  // namespace

AttackResult attack_l2_masked(const Classifier& model, std::span<const double> image, std::size_t target,
                              const Mask& mask, const L2AttackConfig& config) {
  check_inputs(model, image, target, mask, "attack_l2_masked");
  AttackResult result;
  result.p = Norm::kL2;
  result.delta.assign(image.size(), 0.0);
  const std::vector<double> x(image.begin(), image.end());
  if (model.predict(x) == target) {
    result.success = true;
    return result;
  }
  if (mask.count() == 0) return result;

  const std::vector<double> m = mask.expand(model.spec().channels);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> best;
  double best_norm = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  std::vector<double> xa(x.size()), mom(x.size()), vel(x.size()), delta(x.size());

  for (double lambda : config.lambdas) {
    std::fill(delta.begin(), delta.end(), 0.0);
    std::fill(mom.begin(), mom.end(), 0.0);
    std::fill(vel.begin(), vel.end(), 0.0);
    for (std::size_t step = 0; step <= config.steps; ++step) {
      for (std::size_t i = 0; i < x.size(); ++i) xa[i] = x[i] + delta[i];
      const MarginEval e = eval_margin(model, xa, target);
      ++iterations;
      if (e.on_target) {
        const double n = l2_norm(delta);
        if (n < best_norm) {
          best_norm = n;
          best = delta;
        }
      }
      if (step == config.steps) break;
      // f is flat once the margin passes -threshold.
      const double f = margin_from_logits(e.logits, target, std::numeric_limits<double>::infinity());
      const bool active = f > -config.threshold;
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (m[i] == 0.0) continue;
        const double g = 2.0 * delta[i] + (active ? lambda * e.grad[i] : 0.0);
        mom[i] = kBeta1 * mom[i] + (1.0 - kBeta1) * g;
        vel[i] = kBeta2 * vel[i] + (1.0 - kBeta2) * g * g;
        delta[i] -= config.learning_rate * (mom[i] / c1) / (std::sqrt(vel[i] / c2) + kEps);
      }
      project_box(x, delta, m);
    }
    if (!best.empty()) break;
  }
  result.iterations_used = iterations;
  if (!best.empty()) {
    result.delta = std::move(best);
    result.cost = l2_norm(result.delta);
    result.success = true;
  }
  return result;
}

namespace {

bool bim(const Classifier& model, const std::vector<double>& x, std::size_t target, const std::vector<double>& m,
         double epsilon, const LinfAttackConfig& config, std::vector<double>& delta, std::size_t& iterations) {
  const double alpha = config.step_fraction * epsilon;
  std::fill(delta.begin(), delta.end(), 0.0);
  std::vector<double> xa(x.size());
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t i = 0; i < x.size(); ++i) xa[i] = x[i] + delta[i];
    const MarginEval e = eval_margin(model, xa, target);
    ++iterations;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = e.grad[i];
      const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      delta[i] = std::clamp(delta[i] - alpha * sign, -epsilon, epsilon);
    }
    project_box(x, delta, m);
    for (std::size_t i = 0; i < x.size(); ++i) xa[i] = x[i] + delta[i];
    if (model.predict(xa) == target) return true;
  }
  return false;
}

}  // namespace

AttackResult attack_linf_masked(const Classifier& model, std::span<const double> image, std::size_t target,
                                const Mask& mask, const LinfAttackConfig& config) {
  check_inputs(model, image, target, mask, "attack_linf_masked");
  if (config.resolution == 0) throw Error("attack_linf_masked", "resolution must be positive");
  AttackResult result;
  result.p = Norm::kLinf;
  result.delta.assign(image.size(), 0.0);
  const std::vector<double> x(image.begin(), image.end());
  if (model.predict(x) == target) {
    result.success = true;
    return result;
  }
  if (mask.count() == 0) return result;

  const std::vector<double> m = mask.expand(model.spec().channels);
  const double res = static_cast<double>(config.resolution);
  std::vector<double> delta(x.size()), best;
  std::size_t iterations = 0;
  if (!bim(model, x, target, m, 1.0, config, delta, iterations)) {
    result.iterations_used = iterations;
    return result;
  }
  best = delta;
  std::size_t lo = 0, hi = config.resolution;  // lo fails, hi succeeds
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (bim(model, x, target, m, static_cast<double>(mid) / res, config, delta, iterations)) {
      hi = mid;
      best = delta;
    } else {
      lo = mid;
    }
  }
  result.delta = std::move(best);
  result.cost = static_cast<double>(hi) / res;
  result.success = true;
  result.iterations_used = iterations;
  return result;
}

// ---------------------------------------------------------------------------

Image ExtendedImage::interior() const {
  Image out(height, width, pixels.channels);
  for (std::size_t c = 0; c < pixels.channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = pixels.at(c, top + y, left + x);
    }
  }
  return out;
}

Mask ExtendedImage::interior_mask() const {
  Mask m(pixels.height, pixels.width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) m.set((top + y) * pixels.width + left + x);
  }
  return m;
}

Mask ExtendedImage::border_mask() const {
  Mask m = interior_mask();
  for (auto& b : m.bits) b = b ? 0 : 1;
  return m;
}

std::size_t border_width(double beta, std::size_t dim) {
  // The tolerance keeps exact products like (1/6) * 48 / 2 from rounding up.
  return static_cast<std::size_t>(std::ceil(beta * static_cast<double>(dim) / 2.0 - 1e-9));
}

ExtendedImage extend_image(const Image& image, double beta, BorderFill fill, double border_fill) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error("extend_image", "beta must be finite and >= 0");
  if (image.height == 0 || image.width == 0) throw Error("extend_image", "empty image");
  ExtendedImage ext;
  ext.top = border_width(beta, image.height);
  ext.left = border_width(beta, image.width);
  ext.height = image.height;
  ext.width = image.width;
  ext.fill = fill;
  ext.border_fill = border_fill;
  ext.pixels = Image(image.height + 2 * ext.top, image.width + 2 * ext.left, image.channels, border_fill);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < ext.pixels.height; ++y) {
      for (std::size_t x = 0; x < ext.pixels.width; ++x) {
        const bool inside = y >= ext.top && y < ext.top + image.height && x >= ext.left && x < ext.left + image.width;
        if (inside || fill == BorderFill::kReplicate) {
          const std::size_t sy = std::clamp<std::size_t>(y, ext.top, ext.top + image.height - 1) - ext.top;
          const std::size_t sx = std::clamp<std::size_t>(x, ext.left, ext.left + image.width - 1) - ext.left;
          ext.pixels.at(c, y, x) = image.at(c, sy, sx);
        }
      }
    }
  }
  return ext;
}

}  // namespace advshap
