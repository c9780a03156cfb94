#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "csmn/tensor.hpp"

namespace csmn::num {

/// Arithmetic precision of a tape. Values and gradients are held in double
/// storage; under f32 every op output and every accumulated gradient is
/// rounded to the nearest binary32 value.
enum class Precision { f32, f64 };

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid for the
/// lifetime of the tape that produced it.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. Backward replays the record in
/// reverse, calling each node's rule to push its output gradient into its
/// inputs. Forward values are never touched by backward.
///
/// A tape created with `record = false` still computes values but stores no
/// backward rules; it is what inference and finite-difference probes use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(Precision precision = Precision::f32, bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var parameter(Tensor value);

  void backward(Var root, double seed = 1.0);
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Interface used by op implementations.
  Var record(std::string_view op, Shape shape, std::vector<double> values,
             std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Shape shape, std::vector<double> values,
             const std::vector<Var>& inputs, BackwardFn backward);
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& out_value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of `v`, allocated on first use; empty if `v` does not
  /// require a gradient.
  std::span<double> grad_buffer(Var v);

  double round(double x) const {
    return precision_ == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::vector<double> grad;
  };

  friend class Var;
  const Node& node(Var v) const;
  Var push(std::string_view op, Tensor value, std::vector<std::size_t> inputs,
           BackwardFn backward, bool requires_grad);

  Precision precision_;
  bool recording_;
  // deque: references to recorded values stay valid as the tape grows.
  std::deque<Node> nodes_;
};

}  // namespace csmn::num
