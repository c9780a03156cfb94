#include "csmn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace csmn::num {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an empty Var");
  return tape_->node(*this).value;
}

Tape::Tape(Precision precision, bool record) : precision_(precision), recording_(record) {
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this) throw std::logic_error("Var belongs to a different tape");
  return nodes_[v.id_];
}

Var Tape::push(std::string_view op, Tensor value, std::vector<std::size_t> inputs,
               BackwardFn backward, bool requires_grad) {
  nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(backward), requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

namespace {

// Rounds to binary32 in place, cloning shared storage only when some value
// is not already representable.
void round_to_f32(Tensor& value) {
  auto d = value.data();
  const bool exact = std::all_of(d.begin(), d.end(), [](double x) { return static_cast<double>(static_cast<float>(x)) == x; });
  if (exact) return;
  for (auto& x : value.mutable_data()) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

Var Tape::constant(Tensor value) {
  if (precision_ == Precision::f32) round_to_f32(value);
  return push("constant", std::move(value), {}, nullptr, false);
}

Var Tape::parameter(Tensor value) {
  if (precision_ == Precision::f32) round_to_f32(value);
  return push("parameter", std::move(value), {}, nullptr, recording_);
}

Var Tape::record(std::string_view op, Shape shape, std::vector<double> values,
                 std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(shape), std::move(values), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Shape shape, std::vector<double> values,
                 const std::vector<Var>& inputs, BackwardFn backward) {
  for (auto& x : values) {
    x = round(x);
    if (!std::isfinite(x)) throw NumericError("non-finite value produced by " + std::string(op));
  }
  bool needs_grad = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw std::logic_error(std::string(op) + ": operand from a different tape");
    ids.push_back(in.id_);
    needs_grad = needs_grad || nodes_[in.id_].requires_grad;
  }
  needs_grad = needs_grad && recording_;
  if (!needs_grad) {
    backward = nullptr;
    ids.clear();
  }
  return push(op, Tensor(std::move(shape), std::move(values)), std::move(ids), std::move(backward), needs_grad);
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  if (root.tape_ != this) throw std::logic_error("backward root from a different tape");
  if (!recording_) throw std::logic_error("backward on a non-recording tape");
  if (!nodes_[root.id_].requires_grad) return;
  for (auto& x : grad_buffer(root)) x += round(seed);

  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
    for (auto in : nodes_[i].inputs) {
      auto& g = nodes_[in].grad;
      for (auto& x : g) {
        x = round(x);
        if (!std::isfinite(x)) {
          throw NumericError("non-finite gradient flowing out of " + std::string(nodes_[i].op));
        }
      }
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

}  // namespace csmn::num
