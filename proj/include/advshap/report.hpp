#pragma once

// End-to-end commands behind the command-line tool. Each returns the JSON
// report it wrote to the output directory.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "advshap/config.hpp"
#include "advshap/image.hpp"
#include "advshap/model.hpp"
#include "advshap/regional.hpp"

namespace advshap {

inline constexpr const char* kToolVersion = "0.1.0";

struct Sample {
  std::string name;
  Image image;  // un-extended
  std::size_t label = 0;
  SpatialMask foreground;
};

// `images` is either a count (the first N images of the synthetic test
// split) or a directory of .pgm/.ppm files. Directory images are labeled by
// `model`'s prediction; an optional <stem>_mask.pgm supplies the foreground.
std::vector<Sample> load_samples(const std::string& images, const Config& config, const Classifier* model);

ToyDataset train_split(const Config& config);
ToyDataset test_split(const Config& config, std::size_t count);
// Every image extended with the configured border; masks get a zero border.
ToyDataset extend_dataset(const ToyDataset& data, const Config& config);

nlohmann::json attribution_json(const AttributionMap& map, const GridPartition& grid);

nlohmann::json cmd_train(const Config& config, const std::filesystem::path& out_dir);
nlohmann::json cmd_attribute(const Config& config, const std::filesystem::path& checkpoint,
                             const std::string& images, const std::filesystem::path& out_dir);
nlohmann::json cmd_decompose(const Config& config, const std::vector<std::filesystem::path>& checkpoints,
                             const std::string& images, const std::filesystem::path& out_dir);
// Structural comparison of two report files.
nlohmann::json cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b);

// Writes <out_dir>/<name> and records it in <out_dir>/index.json.
void write_report(const nlohmann::json& report, const std::filesystem::path& out_dir, const std::string& name);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace advshap
