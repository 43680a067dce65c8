#include "advshap/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "advshap/error.hpp"
#include "advshap/image_io.hpp"
#include "advshap/kernels.hpp"

namespace advshap {

const char* norm_name(Norm p) { return p == Norm::kL2 ? "l2" : "linf"; }

Norm parse_norm(const std::string& text) {
  if (text == "2" || text == "l2" || text == "L2") return Norm::kL2;
  if (text == "inf" || text == "linf" || text == "Linf") return Norm::kLinf;
  throw Error("parse_norm", "unknown norm '" + text + "' (expected 2 or inf)");
}

// ---------------------------------------------------------------------------
// Classifier

Classifier Classifier::initialize(const ClassifierSpec& spec, std::uint64_t seed) {
  const std::size_t k = spec.kernel_size;
  if (spec.num_classes < 2) throw Error("Classifier::initialize", "need at least 2 classes");
  if (spec.height < 2 * k - 1 || spec.width < 2 * k - 1) {
    throw Error("Classifier::initialize", "input " + std::to_string(spec.height) + "x" +
                                              std::to_string(spec.width) + " too small for two " +
                                              std::to_string(k) + "x" + std::to_string(k) + " convolutions");
  }
  Classifier m;
  m.spec_ = spec;
  const std::size_t fh = spec.height - 2 * (k - 1), fw = spec.width - 2 * (k - 1);
  const std::size_t features = spec.conv2_filters * fh * fw;
  m.conv1_w_ = Tensor(Shape{spec.conv1_filters, spec.channels, k, k});
  m.conv1_b_ = Tensor(Shape{spec.conv1_filters});
  m.conv2_w_ = Tensor(Shape{spec.conv2_filters, spec.conv1_filters, k, k});
  m.conv2_b_ = Tensor(Shape{spec.conv2_filters});
  m.dense_w_ = Tensor(Shape{spec.num_classes, features});
  m.dense_b_ = Tensor(Shape{spec.num_classes});

  Rng rng(seed);
  auto he = [&rng](Tensor& t, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = sd * rng.normal();
  };
  he(m.conv1_w_, spec.channels * k * k);
  he(m.conv2_w_, spec.conv1_filters * k * k);
  he(m.dense_w_, features);
  return m;
}

Var Classifier::record(Tape& tape, Var input, bool trainable) const {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.parameter_ref(t) : tape.constant_ref(t); };
  const Var w1 = leaf(conv1_w_), b1 = leaf(conv1_b_), w2 = leaf(conv2_w_), b2 = leaf(conv2_b_);
  const Var wd = leaf(dense_w_), bd = leaf(dense_b_);
  const Shape want{spec_.channels, spec_.height, spec_.width};
  if (tape.value(input).shape() != want) {
    if (tape.value(input).size() != shape_size(want)) {
      throw Error("Classifier::forward", "input shape " + shape_string(tape.value(input).shape()) +
                                             " does not match classifier input " + shape_string(want));
    }
    input = tape.reshape(input, want);
  }
  Var h = tape.relu(tape.add(tape.conv2d(input, w1), b1));
  h = tape.relu(tape.add(tape.conv2d(h, w2), b2));
  h = tape.reshape(h, Shape{tape.value(h).size()});
  return tape.add(tape.matvec(wd, h), bd);
}

GraphFn Classifier::graph() const {
  return [this](Tape& tape, Var input) { return record(tape, input, false); };
}

Tensor Classifier::to_input(std::span<const double> pixels) const {
  if (pixels.size() != spec_.input_size()) {
    throw Error("Classifier::forward", "input has " + std::to_string(pixels.size()) +
                                           " values, classifier expects " +
                                           std::to_string(spec_.input_size()));
  }
  return Tensor(Shape{spec_.channels, spec_.height, spec_.width},
                std::vector<double>(pixels.begin(), pixels.end()));
}

std::vector<double> Classifier::logits(std::span<const double> pixels) const {
  return forward(graph(), to_input(pixels)).storage();
}

std::size_t Classifier::predict(std::span<const double> pixels) const {
  const std::vector<double> z = logits(pixels);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::vector<double> Classifier::input_gradient(std::span<const double> pixels, std::span<const double> selector,
                                               std::vector<double>* logits_out) const {
  if (selector.size() != spec_.num_classes) {
    throw Error("Classifier::input_gradient", "selector must have one weight per class");
  }
  Tensor out;
  const Tensor g = grad_wrt_input(graph(), to_input(pixels),
                                  weighted_sum_selector(std::vector<double>(selector.begin(), selector.end())),
                                  &out);
  if (logits_out) *logits_out = out.storage();
  return g.storage();
}

std::vector<Tensor*> Classifier::parameters() {
  return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &dense_w_, &dense_b_};
}

std::vector<const Tensor*> Classifier::parameters() const {
  return {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_, &dense_w_, &dense_b_};
}

const char* Classifier::parameter_name(std::size_t index) {
  static constexpr const char* kNames[] = {"conv1.weight", "conv1.bias", "conv2.weight",
                                           "conv2.bias",   "dense.weight", "dense.bias"};
  return index < 6 ? kNames[index] : "?";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'S', 'H', 'A', 'P', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("load_checkpoint", "truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const Classifier& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint", "cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const ClassifierSpec& s = model.spec();
  for (std::uint64_t v : {s.height, s.width, s.channels, s.num_classes, s.conv1_filters, s.conv2_filters,
                          s.kernel_size}) {
    put<std::uint64_t>(out, v);
  }
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = Classifier::parameter_name(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params[i]->rank()));
    for (std::size_t d : params[i]->shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(params[i]->data()),
              static_cast<std::streamsize>(params[i]->size() * sizeof(double)));
  }
  if (!out) throw Error("save_checkpoint", "write failed for " + path.string());
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint", "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("load_checkpoint", path.string() + " is not a classifier checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error("load_checkpoint", "unsupported checkpoint version " + std::to_string(version));
  }
  ClassifierSpec s;
  s.height = get<std::uint64_t>(in, path);
  s.width = get<std::uint64_t>(in, path);
  s.channels = get<std::uint64_t>(in, path);
  s.num_classes = get<std::uint64_t>(in, path);
  s.conv1_filters = get<std::uint64_t>(in, path);
  s.conv2_filters = get<std::uint64_t>(in, path);
  s.kernel_size = get<std::uint64_t>(in, path);
  Classifier model = Classifier::initialize(s, 0);
  const auto params = model.parameters();
  const auto count = get<std::uint32_t>(in, path);
  if (count != params.size()) throw Error("load_checkpoint", "unexpected parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (name != Classifier::parameter_name(i)) {
      throw Error("load_checkpoint", "expected parameter " + std::string(Classifier::parameter_name(i)) +
                                         ", found '" + name + "'");
    }
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    if (shape != params[i]->shape()) {
      throw Error("load_checkpoint", name + " has shape " + shape_string(shape) + ", architecture expects " +
                                         shape_string(params[i]->shape()));
    }
    in.read(reinterpret_cast<char*>(params[i]->data()),
            static_cast<std::streamsize>(params[i]->size() * sizeof(double)));
    if (!in) throw Error("load_checkpoint", "truncated checkpoint " + path.string());
    if (!params[i]->all_finite()) throw Error("load_checkpoint", name + " contains non-finite values");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Toy dataset

namespace {

bool inside_shape(std::size_t shape, double dy, double dx, double r) {
  switch (shape) {
    case 0:  // square
      return std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
    case 1:  // disk
      return dy * dy + dx * dx <= r * r;
    case 2:  // plus
      return (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r) || (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r);
    case 3:  // triangle, apex up
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r) + 0.25;
    default: {  // ring
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
  }
}

}  // namespace

ToyDataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width,
                         std::size_t num_classes, std::size_t channels) {
  if (height < 8 || width < 8) throw Error("synth_dataset", "image size must be at least 8x8");
  if (num_classes < 2 || num_classes > kMaxToyClasses) {
    throw Error("synth_dataset", "num_classes must be in [2, " + std::to_string(kMaxToyClasses) + "]");
  }
  if (count < 2 * num_classes) {
    throw Error("synth_dataset", "count " + std::to_string(count) + " < 2 * num_classes (" +
                                     std::to_string(2 * num_classes) + ")");
  }
  if (channels == 0) throw Error("synth_dataset", "channels must be positive");
  ToyDataset data;
  data.num_classes = num_classes;
  Rng rng(derive_seed(seed, 0x5eed));
  const double side = static_cast<double>(std::min(height, width));
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t label = n % num_classes;
    Image img(height, width, channels);
    SpatialMask mask(height * width, 0);
    const double r = side * rng.uniform(0.3, 0.38);
    const double jitter = 0.08 * side;
    const double cy = 0.5 * static_cast<double>(height - 1) + rng.uniform(-jitter, jitter);
    const double cx = 0.5 * static_cast<double>(width - 1) + rng.uniform(-jitter, jitter);
    const double fg_level = rng.uniform(0.65, 0.85);
    const double bg_level = rng.uniform(0.15, 0.3);
    const std::size_t stripe = 2 + rng.index(2);
    const std::size_t phase = rng.index(stripe);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const bool fg = inside_shape(label, static_cast<double>(y) - cy, static_cast<double>(x) - cx, r);
        mask[y * width + x] = fg ? 1 : 0;
        const double noise = rng.uniform(-1.0, 1.0);
        for (std::size_t c = 0; c < channels; ++c) {
          double v;
          if (fg) {
            // diagonal stripes
            v = fg_level + ((x + y + phase) % stripe == 0 ? 0.12 : -0.04) + 0.03 * noise;
          } else {
            // speckle
            v = bg_level + 0.1 * noise;
          }
          img.at(c, y, x) = std::clamp(v + 0.02 * static_cast<double>(c), 0.0, 1.0);
        }
      }
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
    data.foreground_masks.push_back(std::move(mask));
  }
  return data;
}

void save_dataset(const ToyDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.txt");
  if (!labels) throw Error("save_dataset", "cannot write " + (dir / "labels.txt").string());
  labels << "num_classes " << data.num_classes << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu", i);
    const Image& img = data.images[i];
    // Raw float64 planes keep the cache lossless; PGM copies are for viewing.
    std::ofstream raw(dir / (std::string(name) + ".f64"), std::ios::binary);
    raw.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    write_netpbm(img, dir / (std::string(name) + ".pgm"));
    Image mask(img.height, img.width, 1);
    for (std::size_t p = 0; p < mask.size(); ++p) mask.pixels[p] = data.foreground_masks[i][p];
    write_netpbm(mask, dir / (std::string(name) + "_mask.pgm"));
    labels << name << ' ' << data.labels[i] << ' ' << img.height << ' ' << img.width << ' ' << img.channels
           << "\n";
  }
}

ToyDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream labels(dir / "labels.txt");
  if (!labels) throw Error("load_dataset", "missing " + (dir / "labels.txt").string());
  ToyDataset data;
  std::string key;
  labels >> key >> data.num_classes;
  std::string name;
  std::size_t label = 0, h = 0, w = 0, c = 0;
  while (labels >> name >> label >> h >> w >> c) {
    Image img(h, w, c);
    std::ifstream raw(dir / (name + ".f64"), std::ios::binary);
    raw.read(reinterpret_cast<char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    if (!raw) throw Error("load_dataset", "truncated image " + name);
    const Image mask = read_netpbm(dir / (name + "_mask.pgm"), 1);
    SpatialMask m(h * w);
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = mask.pixels[p] > 0.5 ? 1 : 0;
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
    data.foreground_masks.push_back(std::move(m));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void project(std::vector<double>& adv, std::span<const double> clean, double epsilon, Norm norm) {
  if (norm == Norm::kLinf) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] = std::clamp(adv[i], clean[i] - epsilon, clean[i] + epsilon);
    }
  } else {
    double n2 = 0.0;
    for (std::size_t i = 0; i < adv.size(); ++i) n2 += (adv[i] - clean[i]) * (adv[i] - clean[i]);
    const double n = std::sqrt(n2);
    if (n > epsilon) {
      const double s = epsilon / n;
      for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = clean[i] + s * (adv[i] - clean[i]);
    }
  }
  for (double& v : adv) v = std::clamp(v, 0.0, 1.0);
}

double sample_loss(const Classifier& model, std::span<const double> pixels, std::size_t label) {
  Tape tape;
  const Var in = tape.constant(Tensor(Shape{pixels.size()}, std::vector<double>(pixels.begin(), pixels.end())));
  return tape.value(tape.softmax_cross_entropy(model.record(tape, in), label))[0];
}

}  // namespace

std::vector<double> pgd_perturb(const Classifier& model, std::span<const double> pixels, std::size_t label,
                                double epsilon, Norm norm, std::size_t steps, double step_size,
                                bool random_start, Rng& rng) {
  std::vector<double> adv(pixels.begin(), pixels.end());
  if (random_start) {
    if (norm == Norm::kLinf) {
      for (double& v : adv) v += rng.uniform(-epsilon, epsilon);
    } else {
      std::vector<double> dir(adv.size());
      double n2 = 0.0;
      for (double& d : dir) {
        d = rng.normal();
        n2 += d * d;
      }
      const double radius = epsilon * rng.uniform();
      const double s = n2 > 0.0 ? radius / std::sqrt(n2) : 0.0;
      for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += s * dir[i];
    }
    project(adv, pixels, epsilon, norm);
  }
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    const Var in = tape.variable(Tensor(Shape{adv.size()}, adv));
    const Var loss = tape.softmax_cross_entropy(model.record(tape, in), label);
    tape.backward(loss);
    const Tensor& g = tape.grad(in);
    if (norm == Norm::kLinf) {
      for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] += step_size * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
      }
    } else {
      const double gn = std::sqrt(kernels::dot(g.data(), g.data(), g.size()));
      if (gn > 0.0) kernels::axpy(step_size / gn, g.data(), adv.data(), adv.size());
    }
    project(adv, pixels, epsilon, norm);
  }
  return adv;
}

double mean_loss(const Classifier& model, const ToyDataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total += sample_loss(model, data.images[i].pixels, data.labels[i]);
  return data.size() ? total / static_cast<double>(data.size()) : 0.0;
}

double accuracy(const Classifier& model, const ToyDataset& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += model.predict(data.images[i].pixels) == data.labels[i];
  return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

double robust_accuracy(const Classifier& model, const ToyDataset& data, double epsilon, Norm norm,
                       std::size_t steps, double step_fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xad5));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto adv = pgd_perturb(model, data.images[i].pixels, data.labels[i], epsilon, norm, steps,
                                 step_fraction * epsilon, true, rng);
    hits += model.predict(adv) == data.labels[i];
  }
  return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

Classifier train(Classifier model, const ToyDataset& data, const TrainConfig& config, TrainReport* report) {
  if (data.size() == 0) throw Error("train", "dataset is empty");
  if (config.batch_size == 0) throw Error("train", "batch_size must be positive");
  for (const Image& img : data.images) {
    if (img.size() != model.spec().input_size()) {
      throw Error("train", "dataset image size does not match classifier input");
    }
  }
  const bool adversarial = config.mode == TrainMode::kAdversarial;
  Rng order_rng(derive_seed(config.seed, 1));
  // Separate stream so that epsilon = 0 adversarial training replays normal training exactly.
  Rng pgd_rng(derive_seed(config.seed, 2));

  if (report) {
    report->initial_loss = mean_loss(model, data);
    report->epoch_loss.clear();
  }
  const auto params = model.parameters();
  std::vector<Tensor> velocity, grads;
  for (const Tensor* p : params) {
    velocity.emplace_back(p->shape());
    grads.emplace_back(p->shape());
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (Tensor& g : grads) g.fill(0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        std::vector<double> x = data.images[idx].pixels;
        if (adversarial) {
          x = pgd_perturb(model, x, data.labels[idx], config.epsilon, config.norm, config.pgd_steps,
                          config.pgd_step_fraction * config.epsilon, config.random_start, pgd_rng);
        }
        Tape tape;
        const std::size_t n = x.size();
        const Var in = tape.constant(Tensor(Shape{n}, std::move(x)));
        const Var out = model.record(tape, in, true);
        const Var loss = tape.softmax_cross_entropy(out, data.labels[idx]);
        tape.backward(loss);
        epoch_loss += tape.value(loss)[0];
        // Parameter leaves are recorded first, in parameters() order.
        for (std::size_t p = 0; p < params.size(); ++p) {
          const Tensor& g = tape.grad(Var{1 + p});
          kernels::axpy(1.0, g.data(), grads[p].data(), g.size());
        }
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& v = velocity[p];
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] = config.momentum * v[i] + scale * grads[p][i];
          (*params[p])[i] -= config.learning_rate * v[i];
        }
      }
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw Error("train", "loss diverged (non-finite) at epoch " + std::to_string(epoch));
    }
    if (report) report->epoch_loss.push_back(epoch_loss);
  }
  return model;
}

// ---------------------------------------------------------------------------

double margin_from_logits(std::span<const double> logits, std::size_t target, double threshold) {
  if (target >= logits.size()) {
    throw Error("attack_margin", "target class " + std::to_string(target) + " out of range [0, " +
                                     std::to_string(logits.size()) + ")");
  }
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != target) best_other = std::max(best_other, logits[i]);
  }
  return std::max(best_other - logits[target], -threshold);
}

double attack_margin(const Classifier& model, std::span<const double> pixels, std::size_t target,
                     double threshold) {
  if (target >= model.num_classes()) {
    throw Error("attack_margin", "target class " + std::to_string(target) + " out of range [0, " +
                                     std::to_string(model.num_classes()) + ")");
  }
  return margin_from_logits(model.logits(pixels), target, threshold);
}

}  // namespace advshap
