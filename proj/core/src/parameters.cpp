#include "csmn/parameters.hpp"

#include <stdexcept>

namespace csmn::num {

void ParameterSet::add(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, values_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

bool ParameterSet::identical(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!values_[i].same_values(other.values_[i])) return false;
  }
  return true;
}

std::vector<Var> ParameterSet::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(values_.size());
  for (const auto& v : values_) vars.push_back(tape.parameter(v));
  return vars;
}

ParameterSet ParameterSet::gradients(const Tape& tape, const std::vector<Var>& bound) const {
  ParameterSet grads;
  for (std::size_t i = 0; i < values_.size(); ++i) grads.add(names_[i], tape.grad(bound.at(i)));
  return grads;
}

}  // namespace csmn::num
