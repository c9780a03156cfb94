#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "csmn/parameters.hpp"

namespace csmn::num {

/// Scalar objective built on a tape from bound parameters (same order as the
/// ParameterSet). Must return a [1] tensor and be deterministic.
using Objective = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  /// Precision of the tape whose gradients are being verified. The
  /// finite-difference side always evaluates at f64.
  Precision precision = Precision::f64;
  /// Upper bound on checked elements per parameter; 0 checks all of them.
  std::size_t max_elements = 0;
};

struct GradCheckEntry {
  std::string name;
  /// max_i |tape_i - fd_i| / max_i max(|tape_i|, |fd_i|); 0 when both are 0.
  double rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passes(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// Compares tape gradients of `f` with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), element by element.
GradCheckReport finite_diff_check(const Objective& f, const ParameterSet& params,
                                  const GradCheckOptions& options = {});

}  // namespace csmn::num
