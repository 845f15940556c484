#include "tram/params.hpp"

#include <stdexcept>

namespace tram {

void ParameterSet::insert(const std::string& name, const Tensor& t) {
  if (params_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  params_.emplace(name, t.detached());
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

}  // namespace tram
