#include "advshap/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "advshap/attacks.hpp"
#include "advshap/components.hpp"
#include "advshap/error.hpp"
#include "advshap/heatmap.hpp"
#include "advshap/image_io.hpp"
#include "advshap/interaction.hpp"

namespace advshap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t target_for(std::size_t label, std::size_t num_classes) { return (label + 1) % num_classes; }

bool parse_count(const std::string& s, std::size_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

ToyDataset train_split(const Config& config) {
  const DataConfig& d = config.data;
  return synth_dataset(derive_seed(config.seed, 0x7a17), d.train_count, d.image_size, d.image_size,
                       d.num_classes, d.channels);
}

ToyDataset test_split(const Config& config, std::size_t count) {
  const DataConfig& d = config.data;
  ToyDataset data = synth_dataset(derive_seed(config.seed, 0x7e57), std::max(count, 2 * d.num_classes),
                                  d.image_size, d.image_size, d.num_classes, d.channels);
  data.images.resize(count);
  data.labels.resize(count);
  data.foreground_masks.resize(count);
  return data;
}

ToyDataset extend_dataset(const ToyDataset& data, const Config& config) {
  const AttributionSection& a = config.attribution;
  ToyDataset out;
  out.num_classes = data.num_classes;
  out.labels = data.labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ExtendedImage ext = extend_image(data.images[i], a.beta, a.fill, a.border_fill);
    out.images.push_back(ext.pixels);
    SpatialMask m(ext.pixels.plane(), 0);
    for (std::size_t y = 0; y < ext.height; ++y) {
      for (std::size_t x = 0; x < ext.width; ++x) {
        m[(ext.top + y) * ext.pixels.width + ext.left + x] = data.foreground_masks[i][y * ext.width + x];
      }
    }
    out.foreground_masks.push_back(std::move(m));
  }
  return out;
}

std::vector<Sample> load_samples(const std::string& images, const Config& config, const Classifier* model) {
  std::vector<Sample> out;
  std::size_t count = 0;
  if (parse_count(images, count)) {
    const ToyDataset data = test_split(config, count);
    for (std::size_t i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "test_%03zu", i);
      out.push_back({name, data.images[i], data.labels[i], data.foreground_masks[i]});
    }
    return out;
  }
  const fs::path dir(images);
  if (!fs::is_directory(dir)) {
    throw Error("load_samples", "--images must be a count or a directory, got '" + images + "'");
  }
  if (!model) throw Error("load_samples", "labeling directory images needs a classifier");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    const std::string stem = p.stem().string();
    if ((p.extension() == ".pgm" || p.extension() == ".ppm") && !stem.ends_with("_mask")) files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    Sample s;
    s.name = p.stem().string();
    s.image = read_netpbm(p, config.data.channels);
    if (s.image.height != config.data.image_size || s.image.width != config.data.image_size) {
      throw Error("load_samples", p.string() + " is not " + std::to_string(config.data.image_size) + "x" +
                                      std::to_string(config.data.image_size));
    }
    const fs::path mask_path = p.parent_path() / (s.name + "_mask.pgm");
    s.foreground.assign(s.image.plane(), 0);
    if (fs::exists(mask_path)) {
      const Image m = read_netpbm(mask_path, 1);
      if (m.plane() != s.image.plane()) throw Error("load_samples", mask_path.string() + " has the wrong size");
      for (std::size_t i = 0; i < m.plane(); ++i) s.foreground[i] = m.pixels[i] > 0.5 ? 1 : 0;
    }
    const ExtendedImage ext =
        extend_image(s.image, config.attribution.beta, config.attribution.fill, config.attribution.border_fill);
    s.label = model->predict(ext.pixels.pixels);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error("load_samples", "no .pgm/.ppm images in " + dir.string());
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_json", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("read_json", path.string() + ": " + e.what());
  }
}

void write_report(const json& report, const fs::path& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / name);
    if (!out) throw Error("write_report", "cannot write " + (out_dir / name).string());
    out << report.dump(2) << "\n";
  }
  const fs::path index_path = out_dir / "index.json";
  json index = fs::exists(index_path) ? read_json(index_path) : json{{"reports", json::array()}};
  json& reports = index["reports"];
  json entry{{"file", name}, {"command", report.value("command", "")}};
  auto it = std::find_if(reports.begin(), reports.end(), [&](const json& r) { return r.value("file", "") == name; });
  if (it != reports.end()) {
    *it = entry;
  } else {
    reports.push_back(entry);
  }
  std::ofstream out(index_path);
  out << index.dump(2) << "\n";
}

json attribution_json(const AttributionMap& map, const GridPartition& grid) {
  const std::vector<double> importance = map.importance();
  const std::vector<double> magnitude = regional_magnitude(map.delta_full, grid);
  return json{
      {"norm", norm_name(map.p)},
      {"L", map.L},
      {"method", map.method == AttributionMethod::kExact ? "exact" : "sampled"},
      {"samples_T", map.samples_T},
      {"phi", map.phi},
      {"importance", importance},
      {"importance_normalized", normalize_map(importance)},
      {"cost_full", map.cost_full},
      {"cost_empty", map.cost_empty},
      {"efficiency_residual", map.efficiency_residual},
      {"attacks_run", map.attacks_run},
      {"attacks_failed", map.attacks_failed},
      {"magnitude", magnitude},
      {"magnitude_normalized", normalize_map(magnitude)},
  };
}

// ---------------------------------------------------------------------------

json cmd_train(const Config& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const ToyDataset train_data = extend_dataset(train_split(config), config);
  const ToyDataset test_data = extend_dataset(test_split(config, config.data.test_count), config);
  const Classifier init = Classifier::initialize(config.classifier_spec(), derive_seed(config.seed, 0x1417));

  json models = json::array();
  for (TrainMode mode : {TrainMode::kNormal, TrainMode::kAdversarial}) {
    const std::string name = mode == TrainMode::kNormal ? "normal" : "adversarial";
    TrainReport tr;
    const Classifier model = train(init, train_data, config.train_config(mode), &tr);
    const fs::path ckpt = out_dir / (name + ".ckpt");
    save_checkpoint(model, ckpt);
    models.push_back(json{
        {"name", name},
        {"checkpoint", ckpt.filename().string()},
        {"initial_loss", tr.initial_loss},
        {"epoch_loss", tr.epoch_loss},
        {"train_accuracy", accuracy(model, train_data)},
        {"test_accuracy", accuracy(model, test_data)},
        {"robust_accuracy",
         robust_accuracy(model, test_data, config.train.adv_epsilon, config.train.adv_norm, config.train.pgd_steps,
                         config.train.pgd_step_fraction, derive_seed(config.seed, 0x12b))},
    });
  }
  json report{{"tool_version", kToolVersion}, {"command", "train"}, {"config", to_json(config)},
              {"classifier_input", {config.extended_size(), config.extended_size(), config.data.channels}},
              {"models", models}};
  write_report(report, out_dir, "train_report.json");
  return report;
}

json cmd_attribute(const Config& config, const fs::path& checkpoint, const std::string& images,
                   const fs::path& out_dir) {
  const Classifier model = load_checkpoint(checkpoint);
  if (model.spec() != config.classifier_spec()) {
    throw Error("attribute", "checkpoint architecture does not match the configuration");
  }
  const std::vector<Sample> samples = load_samples(images, config, &model);
  fs::create_directories(out_dir);
  const std::size_t L = config.attribution.L;

  std::vector<json> records(samples.size());
  std::vector<double> iou_attr, iou_mag;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::size_t target = target_for(s.label, model.num_classes());
    const ExtendedImage ext =
        extend_image(s.image, config.attribution.beta, config.attribution.fill, config.attribution.border_fill);
    const GridPartition grid = make_grid(L, ext);
    json rec{{"image", s.name}, {"label", s.label}, {"target", target},
             {"prediction", model.predict(ext.pixels.pixels)}};
    json maps = json::object();
    std::vector<std::vector<double>> imp, mag;
    for (Norm norm : config.attribution.norms) {
      RegionalConfig rc = config.regional_config(norm);
      rc.seed = derive_seed(rc.seed, i);
      try {
        const AttributionMap map = regional_attribution(model, s.image, target, rc);
        json mj = attribution_json(map, grid);
        const std::string file = "attribution_" + s.name + "_" + norm_name(norm) + ".ppm";
        render_heatmap(mj["importance"].get<std::vector<double>>(), L, L, out_dir / file);
        mj["heatmap"] = file;
        imp.push_back(mj["importance_normalized"].get<std::vector<double>>());
        mag.push_back(mj["magnitude_normalized"].get<std::vector<double>>());
        maps[norm_name(norm)] = std::move(mj);
      } catch (const Error& e) {
        maps[norm_name(norm)] = json{{"error", e.what()}};
      }
    }
    rec["maps"] = std::move(maps);
    if (imp.size() == 2) {
      auto safe_iou = [](const std::vector<double>& a, const std::vector<double>& b) -> json {
        try {
          return iou(a, b);
        } catch (const Error&) {
          return nullptr;
        }
      };
      rec["iou_attribution"] = safe_iou(imp[0], imp[1]);
      rec["iou_magnitude"] = safe_iou(mag[0], mag[1]);
      if (rec["iou_attribution"].is_number()) iou_attr.push_back(rec["iou_attribution"].get<double>());
      if (rec["iou_magnitude"].is_number()) iou_mag.push_back(rec["iou_magnitude"].get<double>());
    }
    records[i] = std::move(rec);
  }
  json report{{"tool_version", kToolVersion},
              {"command", "attribute"},
              {"config", to_json(config)},
              {"checkpoint", checkpoint.filename().string()},
              {"images", records},
              {"summary",
               {{"images", samples.size()},
                {"iou_pairs", iou_attr.size()},
                {"mean_iou_attribution", mean(iou_attr)},
                {"mean_iou_magnitude", mean(iou_mag)}}}};
  write_report(report, out_dir, "attribute_report.json");
  return report;
}

json cmd_decompose(const Config& config, const std::vector<fs::path>& checkpoints, const std::string& images,
                   const fs::path& out_dir) {
  if (checkpoints.empty()) throw Error("decompose", "at least one checkpoint is required");
  fs::create_directories(out_dir);
  const AttributionSection& a = config.attribution;
  json model_rows = json::array();
  for (const fs::path& path : checkpoints) {
    const Classifier model = load_checkpoint(path);
    if (model.spec() != config.classifier_spec()) {
      throw Error("decompose", path.string() + " does not match the configured architecture");
    }
    const std::string model_name = path.stem().string();
    const std::vector<Sample> samples = load_samples(images, config, &model);
    std::vector<std::vector<ComponentStats>> all_stats;
    json records = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      const std::size_t target = target_for(s.label, model.num_classes());
      const ExtendedImage ext = extend_image(s.image, a.beta, a.fill, a.border_fill);
      json rec{{"image", s.name}, {"label", s.label}, {"target", target}};
      const Mask full(ext.pixels.height, ext.pixels.width, true);
      const AttackResult attack = attack_l2_masked(model, ext.pixels.pixels, target, full, config.l2);
      rec["attack"] = {{"success", attack.success}, {"cost", attack.cost}, {"iterations", attack.iterations_used}};
      if (!attack.success || model.predict(ext.pixels.pixels) == target) {
        rec["skipped"] = attack.success ? "clean image already classified as target" : "attack failed";
        records.push_back(std::move(rec));
        continue;
      }
      const PixelGameContext ctx = make_classifier_context(model, ext.pixels, attack.delta, s.label, target,
                                                           config.decompose.superpixel);
      ExtractionConfig ec = config.extraction_config();
      ec.seed = derive_seed(ec.seed, i);
      const ExtractionResult result = extract_components(ctx, ec);

      SpatialMask fg(ext.pixels.plane(), 0);
      for (std::size_t y = 0; y < ext.height; ++y) {
        for (std::size_t x = 0; x < ext.width; ++x) {
          fg[(ext.top + y) * ext.pixels.width + ext.left + x] = s.foreground[y * ext.width + x];
        }
      }
      std::vector<ComponentStats> stats;
      json comps = json::array();
      std::vector<std::size_t> pixel_labels(ext.pixels.plane(), 0);
      for (const Component& c : result.components) {
        const ComponentStats st = component_stats(model, ctx, c, fg);
        stats.push_back(st);
        for (std::size_t p : c.pixels) pixel_labels[p] = c.id;
        comps.push_back(json{{"id", c.id},
                             {"level", c.level},
                             {"row", c.row},
                             {"col", c.col},
                             {"players", c.players},
                             {"reward", c.reward},
                             {"interaction", c.interaction},
                             {"foreground_ratio", st.foreground_ratio},
                             {"dy_true", st.dy_true},
                             {"dy_target", st.dy_target},
                             {"utility", utility_name(st.utility)}});
      }
      json rounds = json::array();
      for (const ExtractionRound& r : result.rounds) {
        rounds.push_back(json{{"components", r.components},
                              {"candidates", r.candidates},
                              {"evaluated", r.evaluated},
                              {"batches", r.batches},
                              {"coverage", r.coverage},
                              {"gamma", std::isfinite(r.gamma) ? json(r.gamma) : json(nullptr)},
                              {"merges", r.merges}});
      }
      const std::string overlay = "components_" + model_name + "_" + s.name + ".ppm";
      write_ppm(label_overlay(pixel_labels, ext.pixels.height, ext.pixels.width, ext.pixels.pixels), out_dir / overlay);
      rec["components"] = std::move(comps);
      rec["label_grid"] = result.label_grid(ctx.num_players());
      rec["grid"] = {ctx.grid_rows, ctx.grid_cols};
      rec["rounds"] = std::move(rounds);
      rec["overlay"] = overlay;
      records.push_back(std::move(rec));
      all_stats.push_back(std::move(stats));
    }
    const RatioSummary ratios = aggregate_ratios(all_stats);
    model_rows.push_back(json{{"model", model_name},
                              {"checkpoint", path.filename().string()},
                              {"images", records},
                              {"ratios",
                               {{"images_analyzed", ratios.images_analyzed},
                                {"images_skipped", samples.size() - ratios.images_analyzed},
                                {"components", ratios.components},
                                {"foreground_ratio", ratios.foreground_ratio},
                                {"suppress_true_ratio", ratios.suppress_true_ratio}}}});
  }
  json report{{"tool_version", kToolVersion}, {"command", "decompose"}, {"config", to_json(config)},
              {"models", model_rows}};
  write_report(report, out_dir, "decompose_report.json");
  return report;
}

json cmd_compare(const fs::path& a, const fs::path& b) {
  const json ja = read_json(a);
  const json jb = read_json(b);
  const json patch = json::diff(ja, jb);
  json paths = json::array();
  for (const auto& op : patch) {
    if (paths.size() >= 20) break;
    paths.push_back(op["path"]);
  }
  json summary = json::object();
  auto pick = [](const json& r) -> json {
    if (r.contains("summary")) return r["summary"];
    if (r.contains("models")) {
      json rows = json::array();
      for (const auto& m : r["models"]) {
        json row{{"model", m.value("model", m.value("name", ""))}};
        if (m.contains("ratios")) row["ratios"] = m["ratios"];
        if (m.contains("test_accuracy")) row["test_accuracy"] = m["test_accuracy"];
        if (m.contains("robust_accuracy")) row["robust_accuracy"] = m["robust_accuracy"];
        rows.push_back(row);
      }
      return rows;
    }
    return nullptr;
  };
  return json{{"command", "compare"},
              {"a", a.string()},
              {"b", b.string()},
              {"identical", ja == jb},
              {"differences", patch.size()},
              {"difference_paths", paths},
              {"summary_a", pick(ja)},
              {"summary_b", pick(jb)}};
}

}  // namespace advshap
