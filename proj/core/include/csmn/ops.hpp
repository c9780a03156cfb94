#pragma once

#include <cstddef>
#include <vector>

#include "csmn/tape.hpp"

/// Differentiable operations over tape variables. Every op validates shapes,
/// records its output on the tape of its first operand and, when any operand
/// requires a gradient, a backward rule.
///
/// Matrices are row-major [rows x cols]; a rank-1 tensor [n] is accepted
/// wherever a single row is expected.
namespace csmn::num {

using Mask = std::vector<bool>;

/// a[m x k] . b[k x n] -> [m x n]
Var matmul(Var a, Var b);

/// A[m x n] . x[n] -> [m]
Var matvec(Var a, Var x);

/// Affine map applied to each row: x[L x in] . W^T + b with W[out x in],
/// b[out]. A rank-1 x gives a rank-1 result. `bias` may be an empty Var.
Var linear(Var x, Var weight, Var bias = {});

/// Columns of an embedding matrix W[E x V] selected by token id, one row per
/// id: [ids.size() x E].
Var embed(Var weight, const std::vector<std::size_t>& ids);

Var relu(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);
/// Elementwise sum of equally shaped operands.
Var sum(const std::vector<Var>& xs);

/// Softmax restricted to the entries where `mask` is true; the rest are 0.
Var masked_softmax(Var logits, const Mask& mask);
Var softmax(Var logits);

/// Row i of M[m x d] multiplied by p[i].
Var scale_rows(Var p, Var m);

Var slice_rows(Var m, std::size_t start, std::size_t count);
/// Stack matrices (or rank-1 rows) sharing a column count.
Var concat_rows(const std::vector<Var>& parts);
/// Zero rows appended until the matrix has `total` rows.
Var pad_rows(Var m, std::size_t total);
/// Flattened concatenation into a rank-1 tensor.
Var concat(const std::vector<Var>& parts);

/// Valid (unpadded) 1-D convolution along the row axis.
/// input[L x d], filters[h x d x f], bias[f] -> [(L-h+1) x f].
Var conv1d_valid(Var input, Var filters, Var bias);

/// Per-column max over rows; ties resolve to the lowest row.
Var maxpool_time(Var input);

/// Mean of the rows whose mask entry is true; zeros if none are.
Var masked_mean_rows(Var input, const Mask& mask);

/// -log softmax(logits)[target] as a [1] tensor.
Var cross_entropy(Var logits, std::size_t target);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(const Tensor& t);

}  // namespace csmn::num
