#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "csmn/tape.hpp"
#include "csmn/tensor.hpp"

namespace csmn::num {

/// Tensors addressable by unique name, kept in insertion order so that
/// iteration (checkpointing, optimizer updates, reports) is deterministic.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const Tensor& at(const std::string& name) const { return values_[index_of(name)]; }
  Tensor& at(const std::string& name) { return values_[index_of(name)]; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t element_count() const;
  /// Bitwise equality of names, shapes and values.
  bool identical(const ParameterSet& other) const;

  /// Records every tensor on the tape as a gradient-carrying leaf.
  std::vector<Var> bind(Tape& tape) const;
  /// Gradients of bound leaves, in parameter order.
  ParameterSet gradients(const Tape& tape, const std::vector<Var>& bound) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace csmn::num
