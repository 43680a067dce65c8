#pragma once

// Reverse-mode differentiation over a recorded tape of dense tensor ops.
//
// A Tape is owned by one evaluation: record ops, call backward() on a scalar
// node, then read gradients. Leaves created with constant_ref()/parameter_ref()
// point at caller-owned tensors (typically frozen network weights) so that a
// single immutable network can be evaluated from many tapes concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "advshap/tensor.hpp"

namespace advshap {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves.
  Var constant(Tensor value);
  Var constant_ref(const Tensor& value);
  Var variable(Tensor value);
  Var parameter_ref(const Tensor& value);

  // [m, n] x [n] -> [m]
  Var matvec(Var weights, Var x);
  // input [C, H, W], kernel [O, C, kh, kw] -> [O, H - kh + 1, W - kw + 1]; stride 1, no padding.
  Var conv2d(Var input, Var kernel);
  // bias either matches x exactly or has shape [x.dim(0)] and broadcasts over the rest.
  Var add(Var x, Var bias);
  Var mul(Var a, Var b);
  Var relu(Var x);
  Var sum(Var x);
  Var max(Var x);
  // Softmax cross entropy of a logit vector against one class label.
  Var softmax_cross_entropy(Var logits, std::size_t label);
  Var reshape(Var x, Shape shape);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() root w.r.t. `v` (zeros if `v` does not
  // require gradients). Throws if backward() has not run.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates in reverse recording order.
  // The root must be a scalar.
  void backward(Var root);

 private:
  enum class Op : std::uint8_t {
    kLeaf, kMatvec, kConv2d, kAdd, kMul, kRelu, kSum, kMax, kSoftmaxCe, kReshape
  };

  struct Node {
    Op op = Op::kLeaf;
    Var a{}, b{};
    bool requires_grad = false;
    const Tensor* external = nullptr;
    Tensor owned;
    Tensor grad;
    std::size_t aux = 0;  // label / argmax index
    std::vector<double> cache;  // softmax probabilities
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  const Tensor& val(const Node& n) const { return n.external ? *n.external : n.owned; }
  Tensor& grad_buffer(Var v);

  std::vector<Node> nodes_;
};

// A network with frozen weights recorded onto a tape.
using GraphFn = std::function<Var(Tape&, Var input)>;
// Maps the network output node to the scalar to differentiate.
using OutputSelector = std::function<Var(Tape&, Var output)>;

// Evaluates `graph` on `input` without building gradient buffers.
Tensor forward(const GraphFn& graph, const Tensor& input);

// d(selector(graph(input)))/d(input). Throws advshap::Error if the selector
// does not produce a scalar.
Tensor grad_wrt_input(const GraphFn& graph, const Tensor& input, const OutputSelector& selector,
                      Tensor* output = nullptr);

// Selector computing sum_i weights[i] * output[i].
OutputSelector weighted_sum_selector(std::vector<double> weights);

}  // namespace advshap
