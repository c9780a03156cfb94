#include "csmn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace csmn::num {

namespace {

Tape& tape_of(Var v, const char* op) {
  if (!v.valid()) throw std::logic_error(std::string(op) + ": empty operand");
  return *v.tape();
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::size_t require_matrix(Var v, const char* op) {
  if (v.value().rank() > 2) shape_fail(op, "expected a matrix, got " + shape_string(v.shape()));
  return v.value().rows();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_fail("matmul", shape_string(av.shape()) + " . " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto A = av.data();
  auto B = bv.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B[p * n + j];
    }
  }
  return tape.record("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto A = a.value().data();
    auto B = b.value().data();
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (auto gb = t.grad_buffer(b); !gb.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var matvec(Var a, Var x) {
  Tape& tape = tape_of(a, "matvec");
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  if (av.rank() != 2 || xv.rank() != 1 || av.dim(1) != xv.dim(0)) {
    shape_fail("matvec", shape_string(av.shape()) + " . " + shape_string(xv.shape()));
  }
  const std::size_t m = av.dim(0), n = av.dim(1);
  std::vector<double> out(m, 0.0);
  auto A = av.data();
  auto X = xv.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += A[i * n + j] * X[j];
    out[i] = acc;
  }
  return tape.record("matvec", {m}, std::move(out), {a, x}, [a, x, m, n](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto A = a.value().data();
    auto X = x.value().data();
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * X[j];
    }
    if (auto gx = t.grad_buffer(x); !gx.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[j] += g[i] * A[i * n + j];
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = tape_of(x, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t rows = require_matrix(x, "linear");
  const std::size_t in = xv.cols();
  if (wv.rank() != 2 || wv.dim(1) != in) {
    shape_fail("linear", "input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  }
  const std::size_t out_dim = wv.dim(0);
  if (bias.valid() && (bias.value().rank() != 1 || bias.value().dim(0) != out_dim)) {
    shape_fail("linear", "bias " + shape_string(bias.shape()) + " for output width " + std::to_string(out_dim));
  }
  std::vector<double> out(rows * out_dim, 0.0);
  auto X = xv.data();
  auto W = wv.data();
  const std::span<const double> B = bias.valid() ? bias.value().data() : std::span<const double>{};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = B.empty() ? 0.0 : B[o];
      const double* wrow = &W[o * in];
      const double* xrow = &X[r * in];
      for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * xrow[i];
      out[r * out_dim + o] = acc;
    }
  }
  Shape shape = xv.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  std::vector<Var> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return tape.record("linear", std::move(shape), std::move(out), inputs,
                     [x, weight, bias, rows, in, out_dim](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       auto X = x.value().data();
                       auto W = weight.value().data();
                       if (auto gx = t.grad_buffer(x); !gx.empty()) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < out_dim; ++o) {
                             const double go = g[r * out_dim + o];
                             if (go == 0.0) continue;
                             for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * W[o * in + i];
                           }
                       }
                       if (auto gw = t.grad_buffer(weight); !gw.empty()) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t o = 0; o < out_dim; ++o) {
                             const double go = g[r * out_dim + o];
                             if (go == 0.0) continue;
                             for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * X[r * in + i];
                           }
                       }
                       if (bias.valid()) {
                         if (auto gb = t.grad_buffer(bias); !gb.empty()) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
                         }
                       }
                     });
}

Var embed(Var weight, const std::vector<std::size_t>& ids) {
  Tape& tape = tape_of(weight, "embed");
  const Tensor& wv = weight.value();
  if (wv.rank() != 2) shape_fail("embed", "weight must be [E x V], got " + shape_string(wv.shape()));
  if (ids.empty()) shape_fail("embed", "no ids");
  const std::size_t e = wv.dim(0), v = wv.dim(1);
  std::vector<double> out(ids.size() * e);
  auto W = wv.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= v) {
      throw std::out_of_range("embed: token id " + std::to_string(ids[r]) + " outside vocabulary of " +
                              std::to_string(v));
    }
    for (std::size_t k = 0; k < e; ++k) out[r * e + k] = W[k * v + ids[r]];
  }
  return tape.record("embed", {ids.size(), e}, std::move(out), {weight},
                     [weight, ids, e, v](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       auto gw = t.grad_buffer(weight);
                       for (std::size_t r = 0; r < ids.size(); ++r)
                         for (std::size_t k = 0; k < e; ++k) gw[k * v + ids[r]] += g[r * e + k];
                     });
}

Var relu(Var x) {
  Tape& tape = tape_of(x, "relu");
  auto X = x.value().data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
  return tape.record("relu", x.shape(), std::move(out), {x}, [x](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto X = x.value().data();
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X[i] > 0.0) gx[i] += g[i];
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, "add");
  if (a.shape() != b.shape()) shape_fail("add", shape_string(a.shape()) + " + " + shape_string(b.shape()));
  auto A = a.value().data();
  auto B = b.value().data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return tape.record("add", a.shape(), std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    for (Var v : {a, b}) {
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tape& tape = tape_of(x, "scale");
  auto X = x.value().data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * factor;
  return tape.record("scale", x.shape(), std::move(out), {x}, [x, factor](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var sum(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("sum: no operands");
  Tape& tape = tape_of(xs.front(), "sum");
  const Shape shape = xs.front().shape();
  std::vector<double> out(xs.front().value().size(), 0.0);
  for (const auto& x : xs) {
    if (x.shape() != shape) shape_fail("sum", "mixed shapes " + shape_string(shape) + ", " + shape_string(x.shape()));
    auto X = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += X[i];
  }
  return tape.record("sum", shape, std::move(out), xs, [xs](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    for (const auto& x : xs) {
      auto gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
  });
}

Var masked_softmax(Var logits, const Mask& mask) {
  Tape& tape = tape_of(logits, "masked_softmax");
  const Tensor& lv = logits.value();
  if (lv.rank() != 1 || mask.size() != lv.size()) {
    shape_fail("masked_softmax", "logits " + shape_string(lv.shape()) + " with mask of " + std::to_string(mask.size()));
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (mask[i]) hi = std::max(hi, lv[i]);
  if (hi == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("masked_softmax: mask has no true entry");
  }
  std::vector<double> out(lv.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (mask[i]) z += (out[i] = std::exp(lv[i] - hi));
  for (auto& p : out) p /= z;
  const std::size_t n = lv.size();
  return tape.record("masked_softmax", {n}, std::move(out), {logits}, [logits, n](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto s = t.out_value(self).data();
    auto gl = t.grad_buffer(logits);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += g[i] * s[i];
    for (std::size_t i = 0; i < n; ++i) gl[i] += s[i] * (g[i] - dot);
  });
}

Var softmax(Var logits) { return masked_softmax(logits, Mask(logits.value().size(), true)); }

Var scale_rows(Var p, Var m) {
  Tape& tape = tape_of(p, "scale_rows");
  const Tensor& pv = p.value();
  const Tensor& mv = m.value();
  if (pv.rank() != 1 || mv.rank() != 2 || mv.dim(0) != pv.dim(0)) {
    shape_fail("scale_rows", shape_string(pv.shape()) + " o " + shape_string(mv.shape()));
  }
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < cols; ++k) out[i * cols + k] = pv[i] * mv.at(i, k);
  return tape.record("scale_rows", {rows, cols}, std::move(out), {p, m}, [p, m, rows, cols](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto P = p.value().data();
    auto M = m.value().data();
    if (auto gp = t.grad_buffer(p); !gp.empty()) {
      for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < cols; ++k) acc += g[i * cols + k] * M[i * cols + k];
        gp[i] += acc;
      }
    }
    if (auto gm = t.grad_buffer(m); !gm.empty()) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = 0; k < cols; ++k) gm[i * cols + k] += g[i * cols + k] * P[i];
    }
  });
}

Var slice_rows(Var m, std::size_t start, std::size_t count) {
  Tape& tape = tape_of(m, "slice_rows");
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || count == 0 || start + count > mv.dim(0)) {
    shape_fail("slice_rows", "rows [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " +
                                 shape_string(mv.shape()));
  }
  const std::size_t cols = mv.dim(1);
  auto M = mv.data();
  std::vector<double> out(M.begin() + static_cast<std::ptrdiff_t>(start * cols),
                          M.begin() + static_cast<std::ptrdiff_t>((start + count) * cols));
  return tape.record("slice_rows", {count, cols}, std::move(out), {m}, [m, start, cols](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto gm = t.grad_buffer(m);
    for (std::size_t i = 0; i < g.size(); ++i) gm[start * cols + i] += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Tape& tape = tape_of(parts.front(), "concat_rows");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.value().cols() != cols) {
      shape_fail("concat_rows", "column mismatch " + shape_string(parts.front().shape()) + " vs " + shape_string(p.shape()));
    }
    rows += p.value().rows();
    auto d = p.value().data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return tape.record("concat_rows", {rows, cols}, std::move(out), parts, [parts](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.value().size();
      if (auto gp = t.grad_buffer(p); !gp.empty()) {
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var pad_rows(Var m, std::size_t total) {
  Tape& tape = tape_of(m, "pad_rows");
  const std::size_t rows = require_matrix(m, "pad_rows");
  const std::size_t cols = m.value().cols();
  if (total < rows) shape_fail("pad_rows", "cannot pad " + std::to_string(rows) + " rows down to " + std::to_string(total));
  std::vector<double> out(total * cols, 0.0);
  auto M = m.value().data();
  std::copy(M.begin(), M.end(), out.begin());
  return tape.record("pad_rows", {total, cols}, std::move(out), {m}, [m](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto gm = t.grad_buffer(m);
    for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  Tape& tape = tape_of(parts.front(), "concat");
  std::vector<double> out;
  for (const auto& p : parts) {
    auto d = p.value().data();
    out.insert(out.end(), d.begin(), d.end());
  }
  const std::size_t n = out.size();
  return tape.record("concat", {n}, std::move(out), parts, [parts](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t k = p.value().size();
      if (auto gp = t.grad_buffer(p); !gp.empty()) {
        for (std::size_t i = 0; i < k; ++i) gp[i] += g[offset + i];
      }
      offset += k;
    }
  });
}

Var conv1d_valid(Var input, Var filters, Var bias) {
  Tape& tape = tape_of(input, "conv1d_valid");
  const Tensor& xv = input.value();
  const Tensor& wv = filters.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 3 || wv.dim(1) != xv.dim(1) || bv.rank() != 1 || bv.dim(0) != wv.dim(2)) {
    shape_fail("conv1d_valid", "input " + shape_string(xv.shape()) + ", filters " + shape_string(wv.shape()) +
                                   ", bias " + shape_string(bv.shape()));
  }
  const std::size_t len = xv.dim(0), d = xv.dim(1), h = wv.dim(0), f = wv.dim(2);
  if (len < h) {
    throw ShapeError("conv1d_valid: input length " + std::to_string(len) + " shorter than window " + std::to_string(h));
  }
  const std::size_t out_len = len - h + 1;
  auto X = xv.data();
  auto W = wv.data();
  std::vector<double> out(out_len * f);
  for (std::size_t i = 0; i < out_len; ++i) {
    double* orow = &out[i * f];
    for (std::size_t k = 0; k < f; ++k) orow[k] = bv[k];
    for (std::size_t j = 0; j < h; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        const double x = X[(i + j) * d + c];
        if (x == 0.0) continue;
        const double* wrow = &W[(j * d + c) * f];
        for (std::size_t k = 0; k < f; ++k) orow[k] += x * wrow[k];
      }
    }
  }
  return tape.record("conv1d_valid", {out_len, f}, std::move(out), {input, filters, bias},
                     [input, filters, bias, out_len, d, h, f](Tape& t, std::size_t self) {
                       auto g = t.out_grad(self);
                       auto X = input.value().data();
                       auto W = filters.value().data();
                       auto gx = t.grad_buffer(input);
                       auto gw = t.grad_buffer(filters);
                       auto gb = t.grad_buffer(bias);
                       for (std::size_t i = 0; i < out_len; ++i) {
                         const double* grow = &g[i * f];
                         if (!gb.empty())
                           for (std::size_t k = 0; k < f; ++k) gb[k] += grow[k];
                         for (std::size_t j = 0; j < h; ++j) {
                           for (std::size_t c = 0; c < d; ++c) {
                             const std::size_t xi = (i + j) * d + c;
                             const std::size_t wi = (j * d + c) * f;
                             if (!gx.empty()) {
                               double acc = 0.0;
                               for (std::size_t k = 0; k < f; ++k) acc += grow[k] * W[wi + k];
                               gx[xi] += acc;
                             }
                             if (!gw.empty()) {
                               const double x = X[xi];
                               for (std::size_t k = 0; k < f; ++k) gw[wi + k] += grow[k] * x;
                             }
                           }
                         }
                       }
                     });
}

Var maxpool_time(Var input) {
  Tape& tape = tape_of(input, "maxpool_time");
  const Tensor& xv = input.value();
  if (xv.rank() != 2) shape_fail("maxpool_time", "expected [L x f], got " + shape_string(xv.shape()));
  const std::size_t len = xv.dim(0), f = xv.dim(1);
  std::vector<double> out(f);
  std::vector<std::size_t> arg(f, 0);
  for (std::size_t k = 0; k < f; ++k) {
    double best = xv.at(0, k);
    for (std::size_t i = 1; i < len; ++i) {
      if (xv.at(i, k) > best) {
        best = xv.at(i, k);
        arg[k] = i;
      }
    }
    out[k] = best;
  }
  return tape.record("maxpool_time", {f}, std::move(out), {input}, [input, arg, f](Tape& t, std::size_t self) {
    auto g = t.out_grad(self);
    auto gx = t.grad_buffer(input);
    for (std::size_t k = 0; k < f; ++k) gx[arg[k] * f + k] += g[k];
  });
}

Var masked_mean_rows(Var input, const Mask& mask) {
  Tape& tape = tape_of(input, "masked_mean_rows");
  const Tensor& xv = input.value();
  if (xv.rank() != 2 || mask.size() != xv.dim(0)) {
    shape_fail("masked_mean_rows", shape_string(xv.shape()) + " with mask of " + std::to_string(mask.size()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  std::vector<double> out(cols, 0.0);
  if (count > 0) {
    for (std::size_t i = 0; i < rows; ++i)
      if (mask[i])
        for (std::size_t k = 0; k < cols; ++k) out[k] += xv.at(i, k);
    for (auto& v : out) v /= static_cast<double>(count);
  }
  return tape.record("masked_mean_rows", {cols}, std::move(out), {input},
                     [input, mask, rows, cols, count](Tape& t, std::size_t self) {
                       if (count == 0) return;
                       auto g = t.out_grad(self);
                       auto gx = t.grad_buffer(input);
                       const double inv = 1.0 / static_cast<double>(count);
                       for (std::size_t i = 0; i < rows; ++i)
                         if (mask[i])
                           for (std::size_t k = 0; k < cols; ++k) gx[i * cols + k] += g[k] * inv;
                     });
}

Var cross_entropy(Var logits, std::size_t target) {
  Tape& tape = tape_of(logits, "cross_entropy");
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) shape_fail("cross_entropy", "logits must be rank 1, got " + shape_string(lv.shape()));
  const std::size_t n = lv.size();
  if (target >= n) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " + std::to_string(n) + " classes");
  }
  double hi = lv[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, lv[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(lv[i] - hi);
  const double log_z = hi + std::log(z);
  return tape.record("cross_entropy", {1}, {log_z - lv[target]}, {logits},
                     [logits, target, n, log_z](Tape& t, std::size_t self) {
                       const double g = t.out_grad(self)[0];
                       auto L = logits.value().data();
                       auto gl = t.grad_buffer(logits);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double p = std::exp(L[i] - log_z);
                         gl[i] += g * (p - (i == target ? 1.0 : 0.0));
                       }
                     });
}

std::size_t argmax(const Tensor& t) {
  auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

}  // namespace csmn::num
