#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace tram {

class Tape;

// Dense row-major tensor of 64-bit floats. When a tensor was produced by a
// recorded op it also carries its node identity on the tape that owns it;
// plain data tensors have tape == nullptr. Both the tape pointer and the
// node id are only valid while the producing Tape is alive.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tape* tape = nullptr;
  std::optional<std::size_t> node_id;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> v);

  static Tensor scalar(double v);

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  // Row/column view for rank-1 and rank-2 tensors. A rank-1 tensor is one
  // row of shape[0] columns.
  std::size_t rows() const;
  std::size_t cols() const;

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

  // Value of a single-element tensor.
  double scalar_value() const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  // Copy of the data with the tape identity dropped.
  Tensor detached() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace tram
