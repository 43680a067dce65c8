#pragma once

// Toy image classifier: conv(8, 3x3) - ReLU - conv(16, 3x3) - ReLU - flatten -
// dense(T), trained normally or with PGD adversarial training, plus the
// synthetic shape dataset it is trained on.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advshap/autodiff.hpp"
#include "advshap/image.hpp"
#include "advshap/random.hpp"

namespace advshap {

enum class Norm { kL2, kLinf };

const char* norm_name(Norm p);
Norm parse_norm(const std::string& text);

struct ClassifierSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t num_classes = 3;
  std::size_t conv1_filters = 8;
  std::size_t conv2_filters = 16;
  std::size_t kernel_size = 3;

  std::size_t input_size() const { return height * width * channels; }
  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

class Classifier {
 public:
  // He-normal weights, zero biases.
  static Classifier initialize(const ClassifierSpec& spec, std::uint64_t seed);

  const ClassifierSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return spec_.num_classes; }

  // Records the network on `tape`. With `trainable`, weight gradients are
  // produced by backward(); otherwise weights are constants.
  Var record(Tape& tape, Var input, bool trainable = false) const;
  GraphFn graph() const;

  // Pre-softmax scores g(x).
  std::vector<double> logits(std::span<const double> pixels) const;
  std::size_t predict(std::span<const double> pixels) const;

  // d(sum_i selector[i] * g_i(x)) / dx; optionally also returns g(x).
  std::vector<double> input_gradient(std::span<const double> pixels, std::span<const double> selector,
                                     std::vector<double>* logits_out = nullptr) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  static const char* parameter_name(std::size_t index);

  friend bool operator==(const Classifier&, const Classifier&) = default;

 private:
  Tensor to_input(std::span<const double> pixels) const;

  ClassifierSpec spec_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_, dense_w_, dense_b_;

  friend Classifier load_checkpoint(const std::filesystem::path& path);
};

// Versioned little-endian binary checkpoint: magic, version, architecture,
// then each parameter as (name, rank, dims, float64 data).
void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

struct ToyDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<SpatialMask> foreground_masks;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
  friend bool operator==(const ToyDataset&, const ToyDataset&) = default;
};

inline constexpr std::size_t kMaxToyClasses = 5;

// Each image is a textured shape (square, disk, plus, triangle, ring; class
// index selects the shape) over a differently textured background. Labels
// cycle through the classes.
ToyDataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width,
                         std::size_t num_classes = 3, std::size_t channels = 1);

void save_dataset(const ToyDataset& data, const std::filesystem::path& dir);
ToyDataset load_dataset(const std::filesystem::path& dir);

enum class TrainMode { kNormal, kAdversarial };

struct TrainConfig {
  TrainMode mode = TrainMode::kNormal;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Adversarial mode only.
  double epsilon = 0.05;
  Norm norm = Norm::kLinf;
  std::size_t pgd_steps = 7;
  double pgd_step_fraction = 0.25;  // step size = fraction * epsilon
  bool random_start = true;
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Minibatch SGD with momentum on softmax cross entropy. Throws advshap::Error
// naming the epoch if the loss becomes non-finite.
Classifier train(Classifier model, const ToyDataset& data, const TrainConfig& config,
                 TrainReport* report = nullptr);

double mean_loss(const Classifier& model, const ToyDataset& data);
double accuracy(const Classifier& model, const ToyDataset& data);

// Untargeted PGD maximizing cross entropy of `label` inside the epsilon ball
// (and the [0, 1] box). Returns the perturbed image.
std::vector<double> pgd_perturb(const Classifier& model, std::span<const double> pixels, std::size_t label,
                                double epsilon, Norm norm, std::size_t steps, double step_size,
                                bool random_start, Rng& rng);

// Accuracy on PGD-perturbed inputs.
double robust_accuracy(const Classifier& model, const ToyDataset& data, double epsilon, Norm norm,
                       std::size_t steps, double step_fraction, std::uint64_t seed);

// f(x) = max(max_{i != t} Z_i - Z_t, -threshold).
double margin_from_logits(std::span<const double> logits, std::size_t target, double threshold);
double attack_margin(const Classifier& model, std::span<const double> pixels, std::size_t target,
                     double threshold = 0.0);

}  // namespace advshap
