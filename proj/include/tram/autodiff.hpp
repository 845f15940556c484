#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tram/params.hpp"
#include "tram/tensor.hpp"

namespace tram {

// Gradient per named leaf, same shape as the leaf. Keys are exactly the
// parameter names the forward pass registered.
using GradMap = std::map<std::string, Tensor>;

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kMul,
  kRelu,
  kTanh,
  kExp,
  kLogSoftmax,
  kGather,
  kMean,
  kSum,
  kScalarMul,
};

const char* op_name(OpKind kind);

// Append-only record of one forward computation. Nodes are stored in
// topological order by construction (an op's inputs are recorded before it),
// and a backward pass visits each node exactly once in a reverse sweep.
// The tape is meant to be rebuilt per forward pass: construct, run the
// forward, call backward, discard. Tapes are single-owner and pinned in
// place; tensors hold raw pointers into them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  // Registers a leaf value. Named requires-grad leaves are the entries the
  // backward pass reports in its GradMap.
  Tensor leaf(const Tensor& value, bool requires_grad, const std::string& name = "");

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t node_id) const;

  // Gradient buffer of a node, valid after backward. Zero-shaped tensors for
  // nodes the sweep never reached.
  const Tensor& grad(std::size_t node_id) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;  // detached forward result
    std::string name;
    bool requires_grad = false;
    double scalar = 0.0;                   // kScalarMul coefficient
    std::vector<std::size_t> gather_idx;   // kGather column picks
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;

  friend Tensor forward_op(OpKind, const std::vector<Tensor>&);
  friend GradMap backward(Tape&, const Tensor&);
};

// Computes one catalog op. If any input carries a grad-requiring tape
// identity the result is recorded on that tape (all taped inputs must agree
// on the tape); otherwise this is a pure computation and the result is a
// plain tensor. Op-specific extras ride along as constant inputs: kGather
// takes the column indices as inputs[1], kScalarMul the coefficient as a
// 1-element inputs[1].
Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs);

Tensor matmul(const Tensor& a, const Tensor& b);
// Equal shapes, or matrix + row vector (bias broadcast over rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
// Row-wise, max-subtraction stabilized: every output row exponentiates to a
// unit sum and stays finite for any finite input.
Tensor log_softmax(const Tensor& a);
// out[i] = a[i, idx[i]]
Tensor gather(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor scalar_mul(const Tensor& a, double c);

// Reverse sweep from a scalar loss recorded on this tape. Returns gradients
// for every named requires-grad leaf (zeros for leaves the loss does not
// reach). Gradients of shared nodes accumulate.
GradMap backward(Tape& tape, const Tensor& loss);

struct Coord {
  std::string param;
  std::size_t index = 0;  // flat index within the parameter
};

// Central finite difference (L(th+h e) - L(th-h e)) / 2h along one parameter
// coordinate; the oracle the gradient tests compare against.
double finite_diff_grad(const std::function<double(const ParameterSet&)>& loss_fn,
                        const ParameterSet& params, const Coord& coord, double h);

}  // namespace tram
