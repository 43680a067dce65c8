#include "advshap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advshap/error.hpp"
#include "advshap/kernels.hpp"

namespace advshap {

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw Error("Tape", "unknown node " + std::to_string(v.id));
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw Error("Tape", "unknown node " + std::to_string(v.id));
  return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return val(node(v)); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw Error("Tape::grad", "node " + std::to_string(v.id) + " does not require a gradient");
  if (n.grad.size() != val(n).size() || n.grad.shape() != val(n).shape()) {
    throw Error("Tape::grad", "backward() has not been run for node " + std::to_string(v.id));
  }
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::grad_buffer(Var v) { return nodes_[v.id].grad; }

Var Tape::matvec(Var weights, Var x) {
  const Tensor& w = value(weights);
  const Tensor& in = value(x);
  if (w.rank() != 2 || in.rank() != 1 || w.dim(1) != in.dim(0)) {
    throw Error("matvec", "incompatible shapes " + shape_string(w.shape()) + " and " +
                              shape_string(in.shape()));
  }
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = kernels::dot(w.data() + r * cols, in.data(), cols);
  Node n;
  n.op = Op::kMatvec;
  n.a = weights;
  n.b = x;
  n.owned = std::move(out);
  n.requires_grad = node(weights).requires_grad || node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::conv2d(Var input, Var kernel) {
  const Tensor& in = value(input);
  const Tensor& k = value(kernel);
  if (in.rank() != 3 || k.rank() != 4 || k.dim(1) != in.dim(0) || k.dim(2) > in.dim(1) ||
      k.dim(3) > in.dim(2)) {
    throw Error("conv2d", "incompatible shapes input " + shape_string(in.shape()) + " kernel " +
                              shape_string(k.shape()));
  }
  const std::size_t channels = in.dim(0), height = in.dim(1), width = in.dim(2);
  const std::size_t filters = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = height - kh + 1, ow = width - kw + 1;
  Tensor out(Shape{filters, oh, ow});
  // Rows are accumulated at the input's stride so each tap is one long axpy;
  // the trailing kw - 1 columns of every row are discarded.
  const std::size_t span = (oh - 1) * width + ow;
  std::vector<double> wide(oh * width);
  for (std::size_t o = 0; o < filters; ++o) {
    std::fill(wide.begin(), wide.end(), 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* in_c = in.data() + c * height * width;
      const double* k_oc = k.data() + (o * channels + c) * kh * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          kernels::axpy(k_oc[ky * kw + kx], in_c + ky * width + kx, wide.data(), span);
        }
      }
    }
    double* out_o = out.data() + o * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) std::copy_n(wide.data() + y * width, ow, out_o + y * ow);
  }
  Node n;
  n.op = Op::kConv2d;
  n.a = input;
  n.b = kernel;
  n.owned = std::move(out);
  n.requires_grad = node(input).requires_grad || node(kernel).requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var x, Var bias) {
  const Tensor& a = value(x);
  const Tensor& b = value(bias);
  Tensor out = a;
  if (b.shape() == a.shape()) {
    kernels::axpy(1.0, b.data(), out.data(), out.size());
  } else if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(0)) {
    const std::size_t inner = a.size() / a.dim(0);
    for (std::size_t c = 0; c < a.dim(0); ++c) {
      double* row = out.data() + c * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += b[c];
    }
  } else {
    throw Error("add", "cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
  }
  Node n;
  n.op = Op::kAdd;
  n.a = x;
  n.b = bias;
  n.owned = std::move(out);
  n.requires_grad = node(x).requires_grad || node(bias).requires_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.shape() != tb.shape()) {
    throw Error("mul", "shape mismatch " + shape_string(ta.shape()) + " vs " + shape_string(tb.shape()));
  }
  Tensor out(ta.shape());
  kernels::fma_accumulate(ta.data(), tb.data(), out.data(), out.size());
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.owned = std::move(out);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  Node n;
  n.op = Op::kRelu;
  n.a = x;
  n.owned = std::move(out);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  const Tensor& in = value(x);
  double acc = 0.0;
  for (double v : in.values()) acc += v;
  Node n;
  n.op = Op::kSum;
  n.a = x;
  n.owned = Tensor::scalar(acc);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::max(Var x) {
  const Tensor& in = value(x);
  if (in.size() == 0) throw Error("max", "empty tensor");
  const auto it = std::max_element(in.values().begin(), in.values().end());
  Node n;
  n.op = Op::kMax;
  n.a = x;
  n.aux = static_cast<std::size_t>(it - in.values().begin());
  n.owned = Tensor::scalar(*it);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = value(logits);
  if (z.rank() != 1 || label >= z.size()) {
    throw Error("softmax_cross_entropy", "label " + std::to_string(label) + " invalid for logits " +
                                             shape_string(z.shape()));
  }
  const double zmax = *std::max_element(z.values().begin(), z.values().end());
  std::vector<double> p(z.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    denom += p[i];
  }
  for (double& v : p) v /= denom;
  Node n;
  n.op = Op::kSoftmaxCe;
  n.a = logits;
  n.aux = label;
  n.owned = Tensor::scalar(std::log(denom) + zmax - z[label]);
  n.cache = std::move(p);
  n.requires_grad = node(logits).requires_grad;
  return push(std::move(n));
}

Var Tape::reshape(Var x, Shape shape) {
  Node n;
  n.op = Op::kReshape;
  n.a = x;
  try {
    n.owned = value(x).reshaped(std::move(shape));
  } catch (const Error& e) {
    throw Error("reshape", e.what());
  }
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) {
    throw Error("backward", "root must be scalar, got shape " + shape_string(value(root).shape()));
  }
  // Constants get no buffer; the large frozen weights would otherwise be
  // reallocated on every call.
  for (Node& n : nodes_) n.grad = n.requires_grad ? Tensor(val(n).shape()) : Tensor();
  if (!node(root).requires_grad) return;
  nodes_[root.id].grad[0] = 1.0;

  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kLeaf) continue;
    const Tensor& g = n.grad;
    const bool ga = nodes_[n.a.id].requires_grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatvec: {
        const Tensor& w = value(n.a);
        const Tensor& x = value(n.b);
        const std::size_t rows = w.dim(0), cols = w.dim(1);
        const bool gw = ga, gx = nodes_[n.b.id].requires_grad;
        Tensor& dw = grad_buffer(n.a);
        Tensor& dx = grad_buffer(n.b);
        for (std::size_t r = 0; r < rows; ++r) {
          if (g[r] == 0.0) continue;
          if (gw) kernels::axpy(g[r], x.data(), dw.data() + r * cols, cols);
          if (gx) kernels::axpy(g[r], w.data() + r * cols, dx.data(), cols);
        }
        break;
      }
      case Op::kConv2d: {
        const Tensor& in = value(n.a);
        const Tensor& k = value(n.b);
        const std::size_t channels = in.dim(0), height = in.dim(1), width = in.dim(2);
        const std::size_t filters = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const std::size_t oh = height - kh + 1, ow = width - kw + 1;
        const bool gin = ga, gk = nodes_[n.b.id].requires_grad;
        Tensor& din = grad_buffer(n.a);
        Tensor& dk = grad_buffer(n.b);
        // Output gradient laid out at the input's stride with zero padding,
        // matching the forward pass.
        const std::size_t span = (oh - 1) * width + ow;
        std::vector<double> wide(oh * width, 0.0);
        for (std::size_t o = 0; o < filters; ++o) {
          const double* g_o = g.data() + o * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) std::copy_n(g_o + y * ow, ow, wide.data() + y * width);
          for (std::size_t c = 0; c < channels; ++c) {
            const double* in_c = in.data() + c * height * width;
            double* din_c = gin ? din.data() + c * height * width : nullptr;
            const std::size_t koff = (o * channels + c) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t off = ky * width + kx;
                if (gk) dk[koff + ky * kw + kx] += kernels::dot(wide.data(), in_c + off, span);
                if (gin) kernels::axpy(k[koff + ky * kw + kx], wide.data(), din_c + off, span);
              }
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        if (ga) kernels::axpy(1.0, g.data(), grad_buffer(n.a).data(), g.size());
        if (nodes_[n.b.id].requires_grad) {
          Tensor& db = grad_buffer(n.b);
          if (db.size() == g.size()) {
            kernels::axpy(1.0, g.data(), db.data(), g.size());
          } else {
            const std::size_t inner = g.size() / db.size();
            for (std::size_t c = 0; c < db.size(); ++c) {
              const double* row = g.data() + c * inner;
              double acc = 0.0;
              for (std::size_t i = 0; i < inner; ++i) acc += row[i];
              db[c] += acc;
            }
          }
        }
        break;
      }
      case Op::kMul: {
        if (ga) kernels::fma_accumulate(g.data(), value(n.b).data(), grad_buffer(n.a).data(), g.size());
        if (nodes_[n.b.id].requires_grad) {
          kernels::fma_accumulate(g.data(), value(n.a).data(), grad_buffer(n.b).data(), g.size());
        }
        break;
      }
      case Op::kRelu: {
        // subgradient at 0 is 0
        const Tensor& out = val(n);
        Tensor& dx = grad_buffer(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (out[i] > 0.0) dx[i] += g[i];
        }
        break;
      }
      case Op::kSum: {
        Tensor& dx = grad_buffer(n.a);
        for (double& v : dx.values()) v += g[0];
        break;
      }
      case Op::kMax:
        grad_buffer(n.a)[n.aux] += g[0];
        break;
      case Op::kSoftmaxCe: {
        Tensor& dz = grad_buffer(n.a);
        for (std::size_t i = 0; i < dz.size(); ++i) {
          dz[i] += g[0] * (n.cache[i] - (i == n.aux ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kReshape:
        kernels::axpy(1.0, g.data(), grad_buffer(n.a).data(), g.size());
        break;
    }
  }
}

Tensor forward(const GraphFn& graph, const Tensor& input) {
  Tape tape;
  const Var in = tape.constant_ref(input);
  return tape.value(graph(tape, in));
}

Tensor grad_wrt_input(const GraphFn& graph, const Tensor& input, const OutputSelector& selector,
                      Tensor* output) {
  Tape tape;
  const Var in = tape.variable(input);
  const Var out = graph(tape, in);
  const Var scalar = selector(tape, out);
  if (tape.value(scalar).size() != 1) {
    throw Error("grad_wrt_input", "selected output is not scalar: shape " +
                                      shape_string(tape.value(scalar).shape()));
  }
  if (output) *output = tape.value(out);
  tape.backward(scalar);
  return tape.grad(in);
}

OutputSelector weighted_sum_selector(std::vector<double> weights) {
  return [w = Tensor::vector(std::move(weights))](Tape& tape, Var output) {
    const Tensor& out = tape.value(output);
    if (out.size() != w.size()) {
      throw Error("weighted_sum_selector", "selector has " + std::to_string(w.size()) +
                                               " weights for output " + shape_string(out.shape()));
    }
    const Var flat = out.rank() == 1 ? output : tape.reshape(output, Shape{out.size()});
    return tape.sum(tape.mul(flat, tape.constant(w)));
  };
}

}  // namespace advshap
