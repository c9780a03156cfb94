#include <cmath>
#include <functional>
#include <numeric>

#include <gtest/gtest.h>

#include "csmn/gradcheck.hpp"
#include "csmn/ops.hpp"
#include "csmn/rng.hpp"

namespace {

using namespace csmn::num;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Reduces any op output to a scalar through a fixed random projection so that
// every output element contributes a distinct weight.
Var project(Var out, const Tensor& weights) {
  Tape& t = *out.tape();
  return linear(concat({out}), t.constant(weights));
}

using UnaryFn = std::function<Var(Tape&, Var)>;

// Central differences computed here, independently of finite_diff_check.
double fd_rel_error(const UnaryFn& f, const Tensor& x, double eps = 1e-6) {
  Tape tape(Precision::f64);
  Var xv = tape.parameter(x);
  Var out = f(tape, xv);
  tape.backward(out);
  const Tensor g = tape.grad(xv);

  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto eval = [&](double delta) {
      Tensor p = x;
      p.mutable_data()[i] += delta;
      Tape probe(Precision::f64, false);
      return f(probe, probe.constant(p)).value()[0];
    };
    const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
    diff = std::max(diff, std::abs(g[i] - fd));
    scale = std::max({scale, std::abs(g[i]), std::abs(fd)});
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

// Builds f(x) = w . flatten(op(x)) for an op with one varying operand.
UnaryFn projected(std::function<Var(Tape&, Var)> op, std::size_t out_size, Rng& rng) {
  const Tensor w = random_tensor({1, out_size}, rng);
  return [op, w](Tape& t, Var x) { return project(op(t, x), w); };
}

TEST(Tensor, ShapeAndElementCountAgree) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), std::exception);
}

TEST(Tensor, CopiesShareUntilWritten) {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = a;
  b.mutable_data()[0] = 9;
  EXPECT_EQ(a[0], 1);
  EXPECT_EQ(b[0], 9);
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, KnownFirstDraw) {
  // mt19937_64 with the default seed: the 10000th output is fixed by the standard.
  Rng r(5489u);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = r.next_u64();
  EXPECT_EQ(x, 9981545732273789042ULL);
}

TEST(Rng, BelowStaysInRangeAndUniformInUnitInterval) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.below(7), 7u);
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_THROW(r.below(0), std::invalid_argument);
}

TEST(Rng, MixSeedSeparatesStreams) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  EXPECT_EQ(mix_seed(9, 4), mix_seed(9, 4));
}

TEST(Matmul, IdentityAndHandValue) {
  Tape t(Precision::f64);
  Var eye = t.constant(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  Var x = t.constant(Tensor::matrix({{1.5}, {-2}, {4}}));
  EXPECT_TRUE(matmul(eye, x).value().same_values(x.value()));
  Var a = t.constant(Tensor::matrix({{1, 2}}));
  Var b = t.constant(Tensor::matrix({{3}, {4}}));
  const Tensor ab = matmul(a, b).value();
  EXPECT_EQ(ab.shape(), (Shape{1, 1}));
  EXPECT_EQ(ab[0], 11.0);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, SumGradientMatchesFiniteDifferences) {
  Rng rng(1);
  const Tensor b = random_tensor({3, 4}, rng);
  const Tensor ones = Tensor::filled({1, 8}, 1.0);
  auto f = [&](Tape& t, Var a) { return project(matmul(a, t.constant(b)), ones); };
  EXPECT_LE(fd_rel_error(f, random_tensor({2, 3}, rng)), 1e-5);
}

TEST(Relu, ValuesAndKinkSubgradient) {
  Tape t(Precision::f64);
  Var x = t.parameter(Tensor::vector({-2.0, 3.5, 0.0}));
  Var y = relu(x);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 3.5);
  EXPECT_EQ(y.value()[2], 0.0);
  t.backward(linear(y, t.constant(Tensor::matrix({{1, 1, 1}}))));
  const Tensor g = t.grad(x);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Relu, GradientAwayFromKinks) {
  Rng rng(2);
  Tensor x = random_tensor({12}, rng);
  for (auto& v : x.mutable_data()) {
    if (std::abs(v) < 1e-3) v = 0.5;
  }
  auto f = projected([](Tape&, Var v) { return relu(v); }, 12, rng);
  EXPECT_LE(fd_rel_error(f, x), 1e-5);
}

TEST(MaskedSoftmax, Examples) {
  Tape t(Precision::f64);
  const Tensor u = masked_softmax(t.constant(Tensor::zeros({4})), Mask(4, true)).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(u[i], 0.25, 1e-12);

  const Tensor single = masked_softmax(t.constant(Tensor::zeros({2})), Mask{true, false}).value();
  EXPECT_EQ(single[0], 1.0);
  EXPECT_EQ(single[1], 0.0);

  const Tensor p = masked_softmax(t.constant(Tensor::vector({1, 2, 3})), Mask(3, true)).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], std::exp(i + 1.0) / z, 1e-6);

  EXPECT_THROW(masked_softmax(t.constant(Tensor::zeros({2})), Mask{false, false}), std::invalid_argument);
}

TEST(MaskedSoftmax, ProbabilityVectorOnMaskProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(20);
    Mask mask(m);
    for (std::size_t i = 0; i < m; ++i) mask[i] = rng.uniform() < 0.6;
    mask[rng.below(m)] = true;
    Tape t(trial % 2 ? Precision::f32 : Precision::f64);
    const Tensor p = masked_softmax(t.constant(random_tensor({m}, rng, -50, 50)), mask).value();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!mask[i]) EXPECT_EQ(p[i], 0.0);
      EXPECT_GE(p[i], 0.0);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(MaskedSoftmax, LargeLogitsStayFinite) {
  Tape t(Precision::f64);
  const Tensor p = softmax(t.constant(Tensor::vector({1000, 999, -1000}))).value();
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Conv1d, ExamplesAndShapes) {
  Tape t(Precision::f64);
  Var in = t.constant(Tensor({5, 1}, {1, 2, 3, 4, 5}));
  Var w = t.constant(Tensor({3, 1, 1}, {1, 1, 1}));
  Var b = t.constant(Tensor::zeros({1}));
  const Tensor y = conv1d_valid(in, w, b).value();
  EXPECT_EQ(y.shape(), (Shape{3, 1}));
  EXPECT_EQ(y[0], 6.0);
  EXPECT_EQ(y[1], 9.0);
  EXPECT_EQ(y[2], 12.0);

  const Tensor z = conv1d_valid(t.constant(Tensor::zeros({7, 3})), t.constant(Tensor::filled({2, 3, 4}, 0.3)),
                                t.constant(Tensor::zeros({4})))
                       .value();
  for (double v : z.data()) EXPECT_EQ(v, 0.0);

  EXPECT_THROW(conv1d_valid(t.constant(Tensor::zeros({2, 1})), w, b), ShapeError);
}

TEST(Conv1d, GridSegmentLengths) {
  Tape t(Precision::f32, false);
  Rng rng(4);
  Var in = t.constant(random_tensor({49, 6}, rng));
  for (std::size_t h : {3u, 4u, 5u}) {
    const Tensor y = conv1d_valid(in, t.constant(random_tensor({h, 6, 300}, rng)), t.constant(Tensor::zeros({300})))
                         .value();
    EXPECT_EQ(y.shape(), (Shape{49 - h + 1, 300}));
  }
}

TEST(Conv1d, OutputLengthProperty) {
  Rng rng(5);
  Tape t(Precision::f64, false);
  for (std::size_t len = 1; len <= 9; ++len) {
    for (std::size_t h = 1; h <= len; ++h) {
      const Tensor y = conv1d_valid(t.constant(random_tensor({len, 2}, rng)), t.constant(random_tensor({h, 2, 3}, rng)),
                                    t.constant(Tensor::zeros({3})))
                           .value();
      EXPECT_EQ(y.dim(0), len - h + 1);
    }
  }
}

TEST(Conv1d, GradientsOfEveryOperand) {
  Rng rng(6);
  const Tensor in = random_tensor({6, 3}, rng), w = random_tensor({3, 3, 2}, rng), b = random_tensor({2}, rng);
  EXPECT_LE(fd_rel_error(projected([&](Tape& t, Var x) { return conv1d_valid(x, t.constant(w), t.constant(b)); }, 8, rng), in),
            1e-5);
  EXPECT_LE(fd_rel_error(projected([&](Tape& t, Var x) { return conv1d_valid(t.constant(in), x, t.constant(b)); }, 8, rng), w),
            1e-5);
  EXPECT_LE(fd_rel_error(projected([&](Tape& t, Var x) { return conv1d_valid(t.constant(in), t.constant(w), x); }, 8, rng), b),
            1e-5);
}

TEST(MaxPool, ExamplesAndTieRouting) {
  Tape t(Precision::f64);
  EXPECT_EQ(maxpool_time(t.constant(Tensor::matrix({{1}, {5}, {3}}))).value()[0], 5.0);
  const Tensor row = Tensor::matrix({{1, -2, 7}});
  EXPECT_TRUE(maxpool_time(t.constant(row)).value().same_values(row.reshaped({3})));

  Var tie = t.parameter(Tensor::matrix({{2}, {2}}));
  t.backward(maxpool_time(tie));
  const Tensor g = t.grad(tie);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(CrossEntropy, Examples) {
  Tape t(Precision::f64);
  EXPECT_NEAR(cross_entropy(t.constant(Tensor::zeros({4})), 2).value()[0], std::log(4.0), 1e-12);
  const double tiny = cross_entropy(t.constant(Tensor::vector({10, -10})), 0).value()[0];
  EXPECT_NEAR(tiny, std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(tiny, 2.06e-9, 0.01e-9);
  EXPECT_THROW(cross_entropy(t.constant(Tensor::zeros({4})), 4), std::out_of_range);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(7);
  const Tensor logits = random_tensor({6}, rng, -3, 3);
  Tape t(Precision::f64);
  Var l = t.parameter(logits);
  t.backward(cross_entropy(l, 4));
  const Tensor g = t.grad(l);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], std::exp(logits[i]) / z - (i == 4 ? 1.0 : 0.0), 1e-12);
  EXPECT_LE(fd_rel_error([](Tape&, Var x) { return cross_entropy(x, 4); }, logits), 1e-5);
}

struct OpCase {
  const char* name;
  Shape in;
  std::size_t out_size;
  std::function<Var(Tape&, Var, Rng&)> build;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const OpCase& c = GetParam();
  Rng rng(11);
  const Tensor x = random_tensor(c.in, rng, 0.1, 1.0);  // positive: no ReLU or max ties
  Rng draw(13);
  const Tensor w = random_tensor({1, c.out_size}, draw);
  auto f = [&](Tape& t, Var v) {
    // Reseeded per call so every probe sees the same constant operands.
    Rng local(14);
    return project(c.build(t, v, local), w);
  };
  EXPECT_LE(fd_rel_error(f, x), 1e-5) << c.name;
}

Tensor rt(Shape s, Rng& r) { return random_tensor(std::move(s), r); }

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"matmul_b", {3, 2}, 8, [](Tape& t, Var x, Rng& r) { return matmul(t.constant(rt({4, 3}, r)), x); }},
        OpCase{"matvec_a", {3, 4}, 3, [](Tape& t, Var x, Rng& r) { return matvec(x, t.constant(rt({4}, r))); }},
        OpCase{"matvec_x", {4}, 3, [](Tape& t, Var x, Rng& r) { return matvec(t.constant(rt({3, 4}, r)), x); }},
        OpCase{"linear_x", {2, 4}, 6,
               [](Tape& t, Var x, Rng& r) { return linear(x, t.constant(rt({3, 4}, r)), t.constant(rt({3}, r))); }},
        OpCase{"linear_w", {3, 4}, 6,
               [](Tape& t, Var x, Rng& r) { return linear(t.constant(rt({2, 4}, r)), x, t.constant(rt({3}, r))); }},
        OpCase{"linear_b", {3}, 6,
               [](Tape& t, Var x, Rng& r) { return linear(t.constant(rt({2, 4}, r)), t.constant(rt({3, 4}, r)), x); }},
        OpCase{"embed", {3, 5}, 9, [](Tape&, Var x, Rng&) { return embed(x, {4, 0, 4}); }},
        OpCase{"add", {2, 3}, 6, [](Tape& t, Var x, Rng& r) { return add(x, t.constant(rt({2, 3}, r))); }},
        OpCase{"scale", {5}, 5, [](Tape&, Var x, Rng&) { return scale(x, -1.7); }},
        OpCase{"sum", {4}, 4, [](Tape& t, Var x, Rng& r) { return sum({x, t.constant(rt({4}, r)), x}); }},
        OpCase{"masked_softmax", {5}, 5,
               [](Tape&, Var x, Rng&) { return masked_softmax(x, Mask{true, false, true, true, false}); }},
        OpCase{"softmax", {4}, 4, [](Tape&, Var x, Rng&) { return softmax(x); }},
        OpCase{"scale_rows_p", {3}, 6, [](Tape& t, Var x, Rng& r) { return scale_rows(x, t.constant(rt({3, 2}, r))); }},
        OpCase{"scale_rows_m", {3, 2}, 6, [](Tape& t, Var x, Rng& r) { return scale_rows(t.constant(rt({3}, r)), x); }},
        OpCase{"slice_rows", {5, 2}, 4, [](Tape&, Var x, Rng&) { return slice_rows(x, 2, 2); }},
        OpCase{"concat_rows", {2, 3}, 18,
               [](Tape& t, Var x, Rng& r) { return concat_rows({x, t.constant(rt({1, 3}, r)), relu(x), t.constant(rt({3}, r))}); }},
        OpCase{"pad_rows", {2, 3}, 12, [](Tape&, Var x, Rng&) { return pad_rows(x, 4); }},
        OpCase{"concat", {2, 2}, 9, [](Tape& t, Var x, Rng& r) { return concat({x, t.constant(rt({5}, r))}); }},
        OpCase{"maxpool_time", {4, 3}, 3, [](Tape&, Var x, Rng&) { return maxpool_time(x); }},
        OpCase{"masked_mean_rows", {4, 3}, 3,
               [](Tape&, Var x, Rng&) { return masked_mean_rows(x, Mask{true, false, true, true}); }},
        OpCase{"relu_chain", {3, 3}, 9,
               [](Tape& t, Var x, Rng& r) { return relu(linear(x, t.constant(rt({3, 3}, r)), t.constant(rt({3}, r)))); }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Ops, PureUnderFixedPrecision) {
  Rng rng(15);
  const Tensor a = random_tensor({4, 6}, rng), w = random_tensor({3, 6, 5}, rng), b = random_tensor({5}, rng);
  for (auto prec : {Precision::f32, Precision::f64}) {
    Tape t1(prec), t2(prec);
    const Tensor y1 = maxpool_time(relu(conv1d_valid(t1.constant(a), t1.constant(w), t1.constant(b)))).value();
    const Tensor y2 = maxpool_time(relu(conv1d_valid(t2.constant(a), t2.constant(w), t2.constant(b)))).value();
    EXPECT_TRUE(y1.same_values(y2));
  }
}

TEST(Tape, F32RoundsValues) {
  Tape t(Precision::f32);
  const double x = 0.1;
  EXPECT_EQ(t.constant(Tensor::vector({x})).value()[0], static_cast<double>(static_cast<float>(x)));
}

TEST(Tape, NonFiniteOutputIsAnError) {
  Tape t(Precision::f64);
  Var big = t.constant(Tensor::vector({1e300}));
  EXPECT_THROW(scale(big, 1e300), NumericError);
}

TEST(Tape, BackwardLeavesForwardValuesAlone) {
  Rng rng(16);
  Tape t(Precision::f64);
  Var x = t.parameter(random_tensor({3, 4}, rng));
  Var y = relu(linear(x, t.constant(random_tensor({2, 4}, rng))));
  Var loss = cross_entropy(concat({y}), 1);
  const Tensor before = y.value();
  const Tensor xb = x.value();
  t.backward(loss);
  EXPECT_TRUE(y.value().same_values(before));
  EXPECT_TRUE(x.value().same_values(xb));
}

TEST(Tape, GradientAccumulatesOverReuse) {
  Tape t(Precision::f64);
  Var x = t.parameter(Tensor::vector({2.0}));
  t.backward(add(scale(x, 3.0), x));
  EXPECT_EQ(t.grad(x)[0], 4.0);
}

TEST(FiniteDiffCheck, QuadraticAndConstant) {
  ParameterSet p;
  p.add("x", Tensor::vector({3.0}));
  GradCheckOptions opt;
  opt.eps = 1e-4;
  const auto quad = finite_diff_check([](Tape&, const std::vector<Var>& v) { return concat({scale_rows(v[0], concat_rows({v[0]}))}); }, p, opt);
  ASSERT_EQ(quad.entries.size(), 1u);
  EXPECT_LE(quad.entries[0].rel_error, 1e-6);
  EXPECT_NEAR(quad.entries[0].max_abs_grad, 6.0, 1e-9);

  const auto flat = finite_diff_check([](Tape& t, const std::vector<Var>&) { return t.constant(Tensor::vector({2.5})); }, p, opt);
  EXPECT_EQ(flat.entries[0].rel_error, 0.0);
  EXPECT_EQ(flat.entries[0].max_abs_grad, 0.0);
}

TEST(FiniteDiffCheck, RejectsNonFiniteObjective) {
  ParameterSet p;
  p.add("x", Tensor::vector({1.0}));
  EXPECT_THROW(finite_diff_check([](Tape&, const std::vector<Var>& v) { return scale(scale(v[0], 1e200), 1e200); }, p),
               NumericError);
}

TEST(Argmax, LowestIndexOnTies) {
  EXPECT_EQ(argmax(Tensor::vector({0.1, 0.7, 0.2})), 1u);
  EXPECT_EQ(argmax(Tensor::vector({0.5, 0.5, 0.1})), 0u);
}

}  // namespace
