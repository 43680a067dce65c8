#pragma once

// Run configuration: one JSON document with nested sections. Missing keys
// keep their defaults; unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "advshap/attacks.hpp"
#include "advshap/components.hpp"
#include "advshap/model.hpp"
#include "advshap/regional.hpp"

namespace advshap {

struct DataConfig {
  std::size_t image_size = 16;  // before border extension
  std::size_t channels = 1;
  std::size_t num_classes = 3;
  std::size_t train_count = 240;
  std::size_t test_count = 60;
};

struct ModelConfig {
  std::size_t conv1_filters = 8;
  std::size_t conv2_filters = 16;
};

struct TrainSection {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double adv_epsilon = 0.05;
  Norm adv_norm = Norm::kLinf;
  std::size_t pgd_steps = 7;
  double pgd_step_fraction = 0.25;
};

struct AttributionSection {
  std::vector<Norm> norms{Norm::kL2, Norm::kLinf};
  std::size_t L = 8;
  double beta = 1.0 / 6.0;
  BorderFill fill = BorderFill::kReplicate;
  double border_fill = 0.0;
  AttributionMethod method = AttributionMethod::kSampled;
  std::size_t samples_T = 4;
};

struct DecomposeSection {
  std::size_t superpixel = 4;
  std::size_t q = 4;
  std::size_t K = 4;
  std::size_t samples_T = 500;
  double m_tilde_fraction = 0.5;
  double gamma_first = 0.2;
  double gamma_later = 0.5;
  double coverage_stop = 0.9;
  std::size_t max_component_size = 64;
  std::size_t max_rounds = 16;
  bool pin_nearest = true;
};

struct Config {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  TrainSection train;
  L2AttackConfig l2;
  LinfAttackConfig linf;
  AttributionSection attribution;
  DecomposeSection decompose;

  // Size of the classifier input: the image plus its border.
  std::size_t extended_size() const;
  ClassifierSpec classifier_spec() const;
  TrainConfig train_config(TrainMode mode) const;
  RegionalConfig regional_config(Norm norm) const;
  ExtractionConfig extraction_config() const;
};

nlohmann::json to_json(const Config& config);
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);

}  // namespace advshap
