// advshap: train toy classifiers, attribute attacking cost to image regions,
// and decompose perturbations into interacting components.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "advshap/config.hpp"
#include "advshap/error.hpp"
#include "advshap/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void print_train(const json& r) {
  for (const auto& m : r["models"]) {
    std::printf("%-12s loss %.4f -> %.4f  train acc %.3f  test acc %.3f  robust acc %.3f  (%s)\n",
                m["name"].get<std::string>().c_str(), m["initial_loss"].get<double>(),
                m["epoch_loss"].empty() ? m["initial_loss"].get<double>() : m["epoch_loss"].back().get<double>(),
                m["train_accuracy"].get<double>(), m["test_accuracy"].get<double>(),
                m["robust_accuracy"].get<double>(), m["checkpoint"].get<std::string>().c_str());
  }
}

void print_attribute(const json& r) {
  for (const auto& img : r["images"]) {
    std::printf("%s label %d target %d\n", img["image"].get<std::string>().c_str(), img["label"].get<int>(),
                img["target"].get<int>());
    for (const auto& [norm, m] : img["maps"].items()) {
      if (m.contains("error")) {
        std::printf("  %-5s error: %s\n", norm.c_str(), m["error"].get<std::string>().c_str());
        continue;
      }
      std::printf("  %-5s cost_full %.6f cost_empty %.6f efficiency_residual %.3g\n", norm.c_str(),
                  m["cost_full"].get<double>(), m["cost_empty"].get<double>(),
                  m["efficiency_residual"].get<double>());
    }
    if (img.contains("iou_attribution")) {
      std::printf("  iou_attribution %s iou_magnitude %s\n", img["iou_attribution"].dump().c_str(),
                  img["iou_magnitude"].dump().c_str());
    }
  }
  const json& s = r["summary"];
  std::printf("mean_iou_attribution %.4f mean_iou_magnitude %.4f over %d pairs\n",
              s["mean_iou_attribution"].get<double>(), s["mean_iou_magnitude"].get<double>(),
              s["iou_pairs"].get<int>());
}

void print_decompose(const json& r) {
  for (const auto& m : r["models"]) {
    const json& q = m["ratios"];
    std::printf("%-12s images %d skipped %d components %d foreground_ratio %.3f suppress_true_ratio %.3f\n",
                m["model"].get<std::string>().c_str(), q["images_analyzed"].get<int>(),
                q["images_skipped"].get<int>(), q["components"].get<int>(), q["foreground_ratio"].get<double>(),
                q["suppress_true_ratio"].get<double>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley analysis of adversarial perturbations on toy classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string images = "4";
  long long seed = -1;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", seed, "Override the configured seed");

  CLI::App* train_cmd = app.add_subcommand("train", "Train normal and adversarially trained classifiers");

  CLI::App* attribute_cmd = app.add_subcommand("attribute", "Regional attribution of attacking cost");
  std::string checkpoint;
  std::string norm = "";
  std::size_t L = 0, samples_T = 0;
  double beta = -1.0;
  bool exact = false;
  attribute_cmd->add_option("--checkpoint", checkpoint, "Classifier checkpoint")->required();
  attribute_cmd->add_option("--images", images, "Image count from the test split, or a directory")
      ->capture_default_str();
  attribute_cmd->add_option("-p,--norm", norm, "2, inf or both");
  attribute_cmd->add_option("-L", L, "Grid side");
  attribute_cmd->add_option("--beta", beta, "Border extension ratio");
  attribute_cmd->add_option("-T,--samples", samples_T, "Samples per subset size");
  attribute_cmd->add_flag("--exact", exact, "Exact Shapley values (L*L <= 20)");

  CLI::App* decompose_cmd = app.add_subcommand("decompose", "Extract perturbation components");
  std::vector<std::string> checkpoints;
  std::size_t q = 0, K = 0, dT = 0;
  decompose_cmd->add_option("--checkpoint", checkpoints, "Checkpoints (e.g. normal.ckpt adversarial.ckpt)")
      ->required();
  decompose_cmd->add_option("--images", images, "Image count from the test split, or a directory")
      ->capture_default_str();
  decompose_cmd->add_option("-q", q, "Components per merge candidate");
  decompose_cmd->add_option("-K", K, "Sub-pixels per pixel");
  decompose_cmd->add_option("-T,--samples", dT, "Samples per subset size");

  CLI::App* compare_cmd = app.add_subcommand("compare", "Compare two reports");
  std::string report_a, report_b;
  compare_cmd->add_option("a", report_a, "First report")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("b", report_b, "Second report")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    advshap::Config config = config_path.empty() ? advshap::Config{} : advshap::load_config(config_path);
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);

    if (*train_cmd) {
      print_train(advshap::cmd_train(config, out_dir));
    } else if (*attribute_cmd) {
      if (!norm.empty()) {
        config.attribution.norms.clear();
        if (norm == "both") {
          config.attribution.norms = {advshap::Norm::kL2, advshap::Norm::kLinf};
        } else {
          config.attribution.norms.push_back(advshap::parse_norm(norm));
        }
      }
      if (L) config.attribution.L = L;
      if (beta >= 0.0) config.attribution.beta = beta;
      if (samples_T) config.attribution.samples_T = samples_T;
      if (exact) config.attribution.method = advshap::AttributionMethod::kExact;
      print_attribute(advshap::cmd_attribute(config, checkpoint, images, out_dir));
    } else if (*decompose_cmd) {
      if (q) config.decompose.q = q;
      if (K) config.decompose.K = K;
      if (dT) config.decompose.samples_T = dT;
      std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
      print_decompose(advshap::cmd_decompose(config, paths, images, out_dir));
    } else if (*compare_cmd) {
      const json r = advshap::cmd_compare(report_a, report_b);
      std::cout << r.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
