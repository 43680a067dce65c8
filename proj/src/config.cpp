#include "advshap/config.hpp"

#include <fstream>
#include <set>

#include "advshap/error.hpp"

namespace advshap {

using nlohmann::json;

std::size_t Config::extended_size() const {
  return data.image_size + 2 * border_width(attribution.beta, data.image_size);
}

ClassifierSpec Config::classifier_spec() const {
  ClassifierSpec s;
  s.height = s.width = extended_size();
  s.channels = data.channels;
  s.num_classes = data.num_classes;
  s.conv1_filters = model.conv1_filters;
  s.conv2_filters = model.conv2_filters;
  return s;
}

TrainConfig Config::train_config(TrainMode mode) const {
  TrainConfig t;
  t.mode = mode;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.learning_rate = train.learning_rate;
  t.momentum = train.momentum;
  t.seed = derive_seed(seed, 0x7a1);
  t.epsilon = train.adv_epsilon;
  t.norm = train.adv_norm;
  t.pgd_steps = train.pgd_steps;
  t.pgd_step_fraction = train.pgd_step_fraction;
  return t;
}

RegionalConfig Config::regional_config(Norm norm) const {
  RegionalConfig r;
  r.norm = norm;
  r.L = attribution.L;
  r.beta = attribution.beta;
  r.fill = attribution.fill;
  r.border_fill = attribution.border_fill;
  r.method = attribution.method;
  r.samples_T = attribution.samples_T;
  r.seed = derive_seed(seed, 0xa77);
  r.l2 = l2;
  r.linf = linf;
  return r;
}

ExtractionConfig Config::extraction_config() const {
  ExtractionConfig e;
  e.q = decompose.q;
  e.gamma_schedule = {GammaRule::quantile(decompose.gamma_first), GammaRule::quantile(decompose.gamma_later)};
  e.max_size = decompose.max_component_size;
  e.coverage_stop = decompose.coverage_stop;
  e.m_tilde_fraction = decompose.m_tilde_fraction;
  e.K = decompose.K;
  e.samples_T = decompose.samples_T;
  e.pin_nearest = decompose.pin_nearest;
  e.max_rounds = decompose.max_rounds;
  e.seed = derive_seed(seed, 0xdec);
  return e;
}

namespace {

std::string norm_key(Norm n) { return n == Norm::kL2 ? "2" : "inf"; }

void check_keys(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw Error("config", std::string("section '") + section + "' must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw Error("config", std::string("unknown key '") + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<Norm> parse_norms(const json& v) {
  std::vector<Norm> out;
  auto one = [&](const std::string& s) {
    if (s == "both") {
      out = {Norm::kL2, Norm::kLinf};
    } else {
      out.push_back(parse_norm(s));
    }
  };
  if (v.is_array()) {
    for (const auto& e : v) one(e.get<std::string>());
  } else {
    one(v.get<std::string>());
  }
  return out;
}

}  // namespace

json to_json(const Config& c) {
  json norms = json::array();
  for (Norm n : c.attribution.norms) norms.push_back(norm_key(n));
  return json{
      {"seed", c.seed},
      {"data",
       {{"image_size", c.data.image_size},
        {"channels", c.data.channels},
        {"num_classes", c.data.num_classes},
        {"train_count", c.data.train_count},
        {"test_count", c.data.test_count}}},
      {"model", {{"conv1_filters", c.model.conv1_filters}, {"conv2_filters", c.model.conv2_filters}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"adv_epsilon", c.train.adv_epsilon},
        {"adv_norm", norm_key(c.train.adv_norm)},
        {"pgd_steps", c.train.pgd_steps},
        {"pgd_step_fraction", c.train.pgd_step_fraction}}},
      {"attack",
       {{"l2",
         {{"lambdas", c.l2.lambdas},
          {"steps", c.l2.steps},
          {"learning_rate", c.l2.learning_rate},
          {"threshold", c.l2.threshold},
          {"failure_cost", c.l2.failure_cost}}},
        {"linf",
         {{"steps", c.linf.steps},
          {"step_fraction", c.linf.step_fraction},
          {"resolution", c.linf.resolution},
          {"failure_cost", c.linf.failure_cost}}}}},
      {"attribution",
       {{"norms", norms},
        {"L", c.attribution.L},
        {"beta", c.attribution.beta},
        {"fill", c.attribution.fill == BorderFill::kReplicate ? "replicate" : "constant"},
        {"border_fill", c.attribution.border_fill},
        {"method", c.attribution.method == AttributionMethod::kExact ? "exact" : "sampled"},
        {"samples_T", c.attribution.samples_T}}},
      {"decompose",
       {{"superpixel", c.decompose.superpixel},
        {"q", c.decompose.q},
        {"K", c.decompose.K},
        {"samples_T", c.decompose.samples_T},
        {"m_tilde_fraction", c.decompose.m_tilde_fraction},
        {"gamma_first", c.decompose.gamma_first},
        {"gamma_later", c.decompose.gamma_later},
        {"coverage_stop", c.decompose.coverage_stop},
        {"max_component_size", c.decompose.max_component_size},
        {"max_rounds", c.decompose.max_rounds},
        {"pin_nearest", c.decompose.pin_nearest}}},
  };
}

Config config_from_json(const json& j) {
  Config c;
  try {
    check_keys(j, "config", {"seed", "data", "model", "train", "attack", "attribution", "decompose"});
    read(j, "seed", c.seed);
    if (j.contains("data")) {
      const json& d = j["data"];
      check_keys(d, "data", {"image_size", "channels", "num_classes", "train_count", "test_count"});
      read(d, "image_size", c.data.image_size);
      read(d, "channels", c.data.channels);
      read(d, "num_classes", c.data.num_classes);
      read(d, "train_count", c.data.train_count);
      read(d, "test_count", c.data.test_count);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m, "model", {"conv1_filters", "conv2_filters"});
      read(m, "conv1_filters", c.model.conv1_filters);
      read(m, "conv2_filters", c.model.conv2_filters);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, "train", {"epochs", "batch_size", "learning_rate", "momentum", "adv_epsilon", "adv_norm",
                              "pgd_steps", "pgd_step_fraction"});
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "momentum", c.train.momentum);
      read(t, "adv_epsilon", c.train.adv_epsilon);
      if (t.contains("adv_norm")) c.train.adv_norm = parse_norm(t["adv_norm"].get<std::string>());
      read(t, "pgd_steps", c.train.pgd_steps);
      read(t, "pgd_step_fraction", c.train.pgd_step_fraction);
    }
    if (j.contains("attack")) {
      const json& a = j["attack"];
      check_keys(a, "attack", {"l2", "linf"});
      if (a.contains("l2")) {
        const json& l = a["l2"];
        check_keys(l, "attack.l2", {"lambdas", "steps", "learning_rate", "threshold", "failure_cost"});
        read(l, "lambdas", c.l2.lambdas);
        read(l, "steps", c.l2.steps);
        read(l, "learning_rate", c.l2.learning_rate);
        read(l, "threshold", c.l2.threshold);
        read(l, "failure_cost", c.l2.failure_cost);
      }
      if (a.contains("linf")) {
        const json& l = a["linf"];
        check_keys(l, "attack.linf", {"steps", "step_fraction", "resolution", "failure_cost"});
        read(l, "steps", c.linf.steps);
        read(l, "step_fraction", c.linf.step_fraction);
        read(l, "resolution", c.linf.resolution);
        read(l, "failure_cost", c.linf.failure_cost);
      }
    }
    if (j.contains("attribution")) {
      const json& a = j["attribution"];
      check_keys(a, "attribution", {"norms", "L", "beta", "fill", "border_fill", "method", "samples_T"});
      if (a.contains("norms")) c.attribution.norms = parse_norms(a["norms"]);
      read(a, "L", c.attribution.L);
      read(a, "beta", c.attribution.beta);
      if (a.contains("fill")) {
        const auto f = a["fill"].get<std::string>();
        if (f == "replicate") c.attribution.fill = BorderFill::kReplicate;
        else if (f == "constant") c.attribution.fill = BorderFill::kConstant;
        else throw Error("config", "attribution.fill must be 'replicate' or 'constant'");
      }
      read(a, "border_fill", c.attribution.border_fill);
      if (a.contains("method")) {
        const auto m = a["method"].get<std::string>();
        if (m == "exact") c.attribution.method = AttributionMethod::kExact;
        else if (m == "sampled") c.attribution.method = AttributionMethod::kSampled;
        else throw Error("config", "attribution.method must be 'exact' or 'sampled'");
      }
      read(a, "samples_T", c.attribution.samples_T);
    }
    if (j.contains("decompose")) {
      const json& d = j["decompose"];
      check_keys(d, "decompose", {"superpixel", "q", "K", "samples_T", "m_tilde_fraction", "gamma_first",
                                  "gamma_later", "coverage_stop", "max_component_size", "max_rounds",
                                  "pin_nearest"});
      read(d, "superpixel", c.decompose.superpixel);
      read(d, "q", c.decompose.q);
      read(d, "K", c.decompose.K);
      read(d, "samples_T", c.decompose.samples_T);
      read(d, "m_tilde_fraction", c.decompose.m_tilde_fraction);
      read(d, "gamma_first", c.decompose.gamma_first);
      read(d, "gamma_later", c.decompose.gamma_later);
      read(d, "coverage_stop", c.decompose.coverage_stop);
      read(d, "max_component_size", c.decompose.max_component_size);
      read(d, "max_rounds", c.decompose.max_rounds);
      read(d, "pin_nearest", c.decompose.pin_nearest);
    }
  } catch (const json::exception& e) {
    throw Error("config", e.what());
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config", "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("config", path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace advshap
