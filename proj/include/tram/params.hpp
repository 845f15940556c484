#pragma once

#include <map>
#include <string>

#include "tram/tensor.hpp"

namespace tram {

// Ordered, named collection of trainable tensors. Iteration is sorted by
// name, which pins the coordinate order used by flattened global norms,
// checkpoints, and optimizer-moment bookkeeping. Stored tensors never carry
// tape identity.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;
  using const_iterator = Map::const_iterator;
  using iterator = Map::iterator;

  void insert(const std::string& name, const Tensor& t);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  std::size_t total_elements() const;

  // Deep copy, safe to hand to another owner.
  ParameterSet snapshot() const { return *this; }

  const_iterator begin() const { return params_.begin(); }
  const_iterator end() const { return params_.end(); }
  iterator begin() { return params_.begin(); }
  iterator end() { return params_.end(); }

 private:
  Map params_;
};

}  // namespace tram
