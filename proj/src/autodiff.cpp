#include "tram/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tram/kernels.hpp"

namespace tram {

namespace {

using kernels::active;

[[noreturn]] void shape_error(OpKind kind, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": incompatible shapes " +
                              a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_error(OpKind kind, const Tensor& a) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": invalid input shape " +
                              a.shape_str());
}

bool is_bias_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && (b.rank() == 1 || (b.rank() == 2 && b.shape[0] == 1)) &&
         a.shape[1] == b.cols();
}

Tensor compute(OpKind kind, const std::vector<Tensor>& in,
               std::vector<std::size_t>* gather_idx, double* scalar_coeff) {
  const auto& k = active();
  switch (kind) {
    case OpKind::kMatmul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) shape_error(kind, a, b);
      Tensor out({a.shape[0], b.shape[1]});
      k.matmul(a.values.data(), b.values.data(), out.values.data(), a.shape[0], a.shape[1],
               b.shape[1]);
      return out;
    }
    case OpKind::kAdd: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      if (a.same_shape(b)) {
        Tensor out(a.shape);
        k.add(a.values.data(), b.values.data(), out.values.data(), a.numel());
        return out;
      }
      if (is_bias_broadcast(a, b)) {
        Tensor out(a.shape);
        const std::size_t n = a.shape[1];
        for (std::size_t r = 0; r < a.shape[0]; ++r) {
          k.add(a.values.data() + r * n, b.values.data(), out.values.data() + r * n, n);
        }
        return out;
      }
      shape_error(kind, a, b);
    }
    case OpKind::kMul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      if (!a.same_shape(b)) shape_error(kind, a, b);
      Tensor out(a.shape);
      k.mul(a.values.data(), b.values.data(), out.values.data(), a.numel());
      return out;
    }
    case OpKind::kRelu: {
      Tensor out(in[0].shape);
      k.relu(in[0].values.data(), out.values.data(), in[0].numel());
      return out;
    }
    case OpKind::kTanh: {
      Tensor out(in[0].shape);
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(in[0][i]);
      return out;
    }
    case OpKind::kExp: {
      Tensor out(in[0].shape);
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(in[0][i]);
      return out;
    }
    case OpKind::kLogSoftmax: {
      const Tensor& a = in[0];
      if (a.rank() < 1 || a.rank() > 2 || a.cols() == 0) shape_error(kind, a);
      Tensor out(a.shape);
      const std::size_t m = a.rows();
      const std::size_t n = a.cols();
      for (std::size_t r = 0; r < m; ++r) {
        const double* row = a.values.data() + r * n;
        double mx = row[0];
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < n; ++c) out.values[r * n + c] = row[c] - lse;
      }
      return out;
    }
    case OpKind::kGather: {
      const Tensor& a = in[0];
      const Tensor& idx = in[1];
      if (a.rank() != 2 || idx.numel() != a.shape[0]) shape_error(kind, a, idx);
      gather_idx->resize(idx.numel());
      Tensor out({a.shape[0]});
      for (std::size_t r = 0; r < idx.numel(); ++r) {
        const double v = idx[r];
        if (v < 0.0 || v >= static_cast<double>(a.shape[1]) ||
            v != std::floor(v)) {
          throw std::out_of_range("gather: index " + std::to_string(v) + " out of range for " +
                                  a.shape_str());
        }
        const auto c = static_cast<std::size_t>(v);
        (*gather_idx)[r] = c;
        out[r] = a.at(r, c);
      }
      return out;
    }
    case OpKind::kMean: {
      const Tensor& a = in[0];
      if (a.numel() == 0) shape_error(kind, a);
      return Tensor::scalar(k.sum(a.values.data(), a.numel()) /
                            static_cast<double>(a.numel()));
    }
    case OpKind::kSum:
      return Tensor::scalar(k.sum(in[0].values.data(), in[0].numel()));
    case OpKind::kScalarMul: {
      const Tensor& a = in[0];
      *scalar_coeff = in[1].scalar_value();
      Tensor out(a.shape);
      k.scale(a.values.data(), *scalar_coeff, out.values.data(), a.numel());
      return out;
    }
    case OpKind::kLeaf:
      break;
  }
  throw std::logic_error("forward_op: not a computable op");
}

std::size_t expected_arity(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul:
    case OpKind::kAdd:
    case OpKind::kMul:
    case OpKind::kGather:
    case OpKind::kScalarMul:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kGather: return "gather";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kScalarMul: return "scalar_mul";
  }
  return "?";
}

Tensor Tape::leaf(const Tensor& value, bool requires_grad, const std::string& name) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.value = value.detached();
  node.name = name;
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));

  Tensor out = nodes_.back().value;
  out.tape = this;
  out.node_id = nodes_.size() - 1;
  out.requires_grad = requires_grad;
  return out;
}

const Tensor& Tape::value(std::size_t node_id) const { return nodes_.at(node_id).value; }

const Tensor& Tape::grad(std::size_t node_id) const {
  if (node_id >= grads_.size()) {
    throw std::logic_error("grad requested before backward");
  }
  return grads_[node_id];
}

Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs) {
  if (inputs.size() != expected_arity(kind)) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expects " +
                                std::to_string(expected_arity(kind)) + " inputs, got " +
                                std::to_string(inputs.size()));
  }

  std::vector<std::size_t> gather_idx;
  double scalar_coeff = 0.0;
  Tensor out = compute(kind, inputs, &gather_idx, &scalar_coeff);

  Tape* tape = nullptr;
  bool any_grad = false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad) any_grad = true;
    if (t.tape == nullptr) continue;
    if (tape != nullptr && tape != t.tape) {
      throw std::logic_error(std::string(op_name(kind)) + ": inputs from two different tapes");
    }
    tape = t.tape;
  }
  if (!any_grad || tape == nullptr) return out;

  // Record the node. Inputs without tape identity (constants) are
  // materialized as anonymous non-grad leaves so the sweep can index them.
  Tape::Node node;
  node.kind = kind;
  node.requires_grad = true;
  node.scalar = scalar_coeff;
  node.gather_idx = std::move(gather_idx);
  for (const Tensor& t : inputs) {
    if (t.node_id.has_value() && t.tape == tape) {
      node.inputs.push_back(*t.node_id);
    } else {
      node.inputs.push_back(*tape->leaf(t, false).node_id);
    }
  }
  node.value = out.detached();
  tape->nodes_.push_back(std::move(node));

  out.tape = tape;
  out.node_id = tape->nodes_.size() - 1;
  out.requires_grad = true;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) { return forward_op(OpKind::kMatmul, {a, b}); }
Tensor add(const Tensor& a, const Tensor& b) { return forward_op(OpKind::kAdd, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return forward_op(OpKind::kMul, {a, b}); }
Tensor relu(const Tensor& a) { return forward_op(OpKind::kRelu, {a}); }
Tensor tanh(const Tensor& a) { return forward_op(OpKind::kTanh, {a}); }
Tensor exp(const Tensor& a) { return forward_op(OpKind::kExp, {a}); }
Tensor log_softmax(const Tensor& a) { return forward_op(OpKind::kLogSoftmax, {a}); }

Tensor gather(const Tensor& a, const std::vector<std::size_t>& idx) {
  Tensor indices({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) indices[i] = static_cast<double>(idx[i]);
  return forward_op(OpKind::kGather, {a, indices});
}

Tensor mean(const Tensor& a) { return forward_op(OpKind::kMean, {a}); }
Tensor sum(const Tensor& a) { return forward_op(OpKind::kSum, {a}); }

Tensor scalar_mul(const Tensor& a, double c) {
  return forward_op(OpKind::kScalarMul, {a, Tensor::scalar(c)});
}

GradMap backward(Tape& tape, const Tensor& loss) {
  if (loss.tape != &tape || !loss.node_id.has_value()) {
    throw std::logic_error("backward: loss was not produced on this tape");
  }
  if (loss.numel() != 1) {
    throw std::logic_error("backward: loss must be scalar, got " + loss.shape_str());
  }

  const auto& k = active();
  auto& nodes = tape.nodes_;
  auto& grads = tape.grads_;
  grads.clear();
  grads.reserve(nodes.size());
  for (const auto& n : nodes) grads.emplace_back(n.value.shape);

  const std::size_t root = *loss.node_id;
  grads[root][0] = 1.0;

  for (std::size_t id = root + 1; id-- > 0;) {
    const auto& node = nodes[id];
    if (!node.requires_grad || node.kind == OpKind::kLeaf) continue;
    const Tensor& g = grads[id];

    auto wants = [&](std::size_t slot) { return nodes[node.inputs[slot]].requires_grad; };
    auto in_val = [&](std::size_t slot) -> const Tensor& { return nodes[node.inputs[slot]].value; };
    auto in_grad = [&](std::size_t slot) -> Tensor& { return grads[node.inputs[slot]]; };

    switch (node.kind) {
      case OpKind::kMatmul: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        const std::size_t m = a.shape[0], kk = a.shape[1], n = b.shape[1];
        if (wants(0)) {
          // dA += dC * B^T, with B stored (k, n)
          Tensor tmp({m, kk});
          k.matmul_nt(g.values.data(), b.values.data(), tmp.values.data(), m, n, kk);
          k.add(in_grad(0).values.data(), tmp.values.data(), in_grad(0).values.data(),
                tmp.numel());
        }
        if (wants(1)) {
          // dB += A^T * dC, with A stored (m, k)
          Tensor tmp({kk, n});
          k.matmul_tn(a.values.data(), g.values.data(), tmp.values.data(), kk, m, n);
          k.add(in_grad(1).values.data(), tmp.values.data(), in_grad(1).values.data(),
                tmp.numel());
        }
        break;
      }
      case OpKind::kAdd: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        if (wants(0)) {
          k.add(in_grad(0).values.data(), g.values.data(), in_grad(0).values.data(), g.numel());
        }
        if (wants(1)) {
          if (a.same_shape(b)) {
            k.add(in_grad(1).values.data(), g.values.data(), in_grad(1).values.data(),
                  g.numel());
          } else {
            // bias broadcast: column sums, accumulated row by row
            const std::size_t n = a.shape[1];
            for (std::size_t r = 0; r < a.shape[0]; ++r) {
              k.add(in_grad(1).values.data(), g.values.data() + r * n,
                    in_grad(1).values.data(), n);
            }
          }
        }
        break;
      }
      case OpKind::kMul: {
        if (wants(0)) {
          k.mul_acc(g.values.data(), in_val(1).values.data(), in_grad(0).values.data(),
                    g.numel());
        }
        if (wants(1)) {
          k.mul_acc(g.values.data(), in_val(0).values.data(), in_grad(1).values.data(),
                    g.numel());
        }
        break;
      }
      case OpKind::kRelu: {
        if (wants(0)) {
          k.relu_bwd_acc(in_val(0).values.data(), g.values.data(), in_grad(0).values.data(),
                         g.numel());
        }
        break;
      }
      case OpKind::kTanh: {
        if (wants(0)) {
          Tensor& dst = in_grad(0);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            dst[i] += (1.0 - node.value[i] * node.value[i]) * g[i];
          }
        }
        break;
      }
      case OpKind::kExp: {
        if (wants(0)) {
          k.mul_acc(g.values.data(), node.value.values.data(), in_grad(0).values.data(),
                    g.numel());
        }
        break;
      }
      case OpKind::kLogSoftmax: {
        if (wants(0)) {
          Tensor& dst = in_grad(0);
          const std::size_t m = node.value.rows(), n = node.value.cols();
          for (std::size_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) s += g[r * n + c];
            for (std::size_t c = 0; c < n; ++c) {
              dst[r * n + c] += g[r * n + c] - std::exp(node.value[r * n + c]) * s;
            }
          }
        }
        break;
      }
      case OpKind::kGather: {
        if (wants(0)) {
          Tensor& dst = in_grad(0);
          const std::size_t n = in_val(0).shape[1];
          for (std::size_t r = 0; r < node.gather_idx.size(); ++r) {
            dst[r * n + node.gather_idx[r]] += g[r];
          }
        }
        break;
      }
      case OpKind::kMean: {
        if (wants(0)) {
          Tensor& dst = in_grad(0);
          const double gv = g[0] / static_cast<double>(dst.numel());
          for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += gv;
        }
        break;
      }
      case OpKind::kSum: {
        if (wants(0)) {
          Tensor& dst = in_grad(0);
          for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[0];
        }
        break;
      }
      case OpKind::kScalarMul: {
        if (wants(0)) {
          k.axpy(node.scalar, g.values.data(), in_grad(0).values.data(), g.numel());
        }
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }

  GradMap out;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const auto& node = nodes[id];
    if (node.kind != OpKind::kLeaf || !node.requires_grad || node.name.empty()) continue;
    const Tensor& g = grads[id];
    auto it = out.find(node.name);
    if (it == out.end()) {
      out.emplace(node.name, g);
    } else {
      // the same parameter fed the graph through several leaves; its
      // gradient is the sum of the per-leaf contributions
      if (!it->second.same_shape(g)) {
        throw std::logic_error("backward: leaf '" + node.name + "' recorded with two shapes");
      }
      k.add(it->second.values.data(), g.values.data(), it->second.values.data(), g.numel());
    }
  }
  return out;
}

double finite_diff_grad(const std::function<double(const ParameterSet&)>& loss_fn,
                        const ParameterSet& params, const Coord& coord, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
  ParameterSet probe = params.snapshot();
  double& v = probe.at(coord.param)[coord.index];
  const double base = v;
  v = base + h;
  const double up = loss_fn(probe);
  v = base - h;
  const double down = loss_fn(probe);
  return (up - down) / (2.0 * h);
}

}  // namespace tram
