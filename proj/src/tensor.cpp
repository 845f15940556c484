#include "tram/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace tram {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), values(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_str() + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::rows() const {
  if (shape.empty()) return 1;
  return rank() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return rank() == 1 ? shape[0] : shape[rank() - 1];
}

double Tensor::scalar_value() const {
  if (numel() != 1) {
    throw std::logic_error("scalar_value on tensor of shape " + shape_str());
  }
  return values[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.values = values;
  return t;
}

}  // namespace tram
