#include "csmn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace csmn::num {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.rel_error);
  return worst;
}

namespace {

double evaluate(const Objective& f, const ParameterSet& params) {
  Tape tape(Precision::f64, false);
  const Var out = f(tape, params.bind(tape));
  if (out.value().size() != 1) throw ShapeError("gradcheck objective must be scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("gradcheck objective is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const Objective& f, const ParameterSet& params, const GradCheckOptions& options) {
  Tape tape(options.precision, true);
  const auto bound = params.bind(tape);
  const Var loss = f(tape, bound);
  if (loss.value().size() != 1) throw ShapeError("gradcheck objective must be scalar");
  if (!std::isfinite(loss.value()[0])) throw NumericError("gradcheck objective is not finite");
  tape.backward(loss);

  GradCheckReport report;
  ParameterSet probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor grad = tape.grad(bound[p]);
    const std::size_t n = params.value(p).size();
    std::size_t stride = 1;
    if (options.max_elements && n > options.max_elements) stride = (n + options.max_elements - 1) / options.max_elements;

    GradCheckEntry entry{params.name(p), 0.0, 0.0, 0};
    double worst_diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = params.value(p)[i];
      probe.value(p).mutable_data()[i] = original + options.eps;
      const double up = evaluate(f, probe);
      probe.value(p).mutable_data()[i] = original - options.eps;
      const double down = evaluate(f, probe);
      probe.value(p).mutable_data()[i] = original;

      const double fd = (up - down) / (2.0 * options.eps);
      worst_diff = std::max(worst_diff, std::abs(grad[i] - fd));
      scale = std::max({scale, std::abs(grad[i]), std::abs(fd)});
      ++entry.checked;
    }
    entry.max_abs_grad = scale;
    entry.rel_error = scale > 0.0 ? worst_diff / scale : 0.0;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace csmn::num
