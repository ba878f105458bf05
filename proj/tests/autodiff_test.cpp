#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "csst/autodiff.hpp"
#include "csst/gradcheck.hpp"
#include "csst/rng.hpp"

namespace ad = csst::ad;
using ad::Graph;
using ad::Tensor;

namespace {

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> random_values(csst::Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(Forward, SoftmaxOfZerosIsUniform) {
  Graph g;
  const auto y = ad::softmax(g.constant({3}, {0, 0, 0}), 0);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, SigmoidAtZero) {
  Graph g;
  EXPECT_DOUBLE_EQ(ad::sigmoid(g.scalar(0.0)).item(), 0.5);
}

TEST(Forward, MatmulOfOnes) {
  Graph g;
  const auto y = ad::matmul(g.constant({2, 3}, std::vector<double>(6, 1.0)), g.constant({3, 1}, {1, 1, 1}));
  EXPECT_EQ(y.shape(), (ad::Shape{2, 1}));
  EXPECT_EQ(values_of(y), (std::vector<double>{3.0, 3.0}));
}

TEST(Forward, BatchedMatmulAgainstLoops) {
  csst::Rng rng(1);
  const auto a = random_values(rng, 2 * 3 * 4), b = random_values(rng, 4 * 5);
  Graph g;
  const auto y = ad::matmul(g.constant({2, 3, 4}, a), g.constant({4, 5}, b));
  ASSERT_EQ(y.shape(), (ad::Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t n = 0; n < 5; ++n) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a[r * 4 + k] * b[k * 5 + n];
      EXPECT_NEAR(y[r * 5 + n], s, 1e-14);
    }
}

TEST(Forward, BroadcastingFollowsTrailingExtents) {
  Graph g;
  const auto col = g.constant({3, 1}, {1, 2, 3});
  const auto row = g.constant({1, 4}, {10, 20, 30, 40});
  const auto s = ad::sub(col, row);
  ASSERT_EQ(s.shape(), (ad::Shape{3, 4}));
  EXPECT_DOUBLE_EQ(s[0], 1 - 10);
  EXPECT_DOUBLE_EQ(s[7], 2 - 40);
  EXPECT_DOUBLE_EQ(s[8], 3 - 10);
  const auto m = ad::mul(g.constant({2, 1, 1}, {2, -1}), s);
  ASSERT_EQ(m.shape(), (ad::Shape{2, 3, 4}));
  EXPECT_DOUBLE_EQ(m[11], 2 * (3 - 40));
  EXPECT_DOUBLE_EQ(m[12], -(1 - 10));
}

TEST(Forward, ReductionsAndConcat) {
  Graph g;
  const auto x = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_DOUBLE_EQ(ad::sum(x).item(), 21);
  EXPECT_DOUBLE_EQ(ad::mean(x).item(), 3.5);
  EXPECT_EQ(values_of(ad::sum(x, 0)), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(values_of(ad::mean(x, -1)), (std::vector<double>{2, 5}));
  const std::vector<Tensor> parts{x, g.constant({2, 1}, {7, 8})};
  const auto c = ad::concat(parts, 1);
  EXPECT_EQ(c.shape(), (ad::Shape{2, 4}));
  EXPECT_EQ(values_of(c), (std::vector<double>{1, 2, 3, 7, 4, 5, 6, 8}));
}

TEST(Forward, EmbeddingGathersRows) {
  Graph g;
  const auto table = g.constant({3, 2}, {0, 1, 10, 11, 20, 21});
  const auto e = ad::embedding(table, {2, 0, 2}, {3});
  EXPECT_EQ(e.shape(), (ad::Shape{3, 2}));
  EXPECT_EQ(values_of(e), (std::vector<double>{20, 21, 0, 1, 20, 21}));
}

TEST(Forward, MaskedSoftmaxMatchesRemoval) {
  Graph g;
  const auto x = g.constant({4}, {0.3, -1.2, 2.0, 0.7});
  const auto masked = ad::softmax(ad::masked_fill(x, {0, 1, 0, 0}), 0);
  const auto removed = ad::softmax(g.constant({3}, {0.3, 2.0, 0.7}), 0);
  EXPECT_NEAR(masked[1], 0.0, 1e-300);
  EXPECT_NEAR(masked[0], removed[0], 1e-6);
  EXPECT_NEAR(masked[2], removed[1], 1e-6);
  EXPECT_NEAR(masked[3], removed[2], 1e-6);
}

TEST(Forward, CosineSimilarityReducesLastAxis) {
  Graph g;
  const auto a = g.constant({2, 2}, {1, 0, 3, 4});
  const auto b = g.constant({2, 2}, {0, 2, 6, 8});
  const auto c = ad::cosine_similarity(a, b);
  EXPECT_EQ(c.shape(), (ad::Shape{2}));
  EXPECT_NEAR(c[0], 0.0, 1e-15);
  EXPECT_NEAR(c[1], 1.0, 1e-15);
}

TEST(Forward, LogSigmoidIsStableForLargeInputs) {
  Graph g;
  const auto y = ad::log_sigmoid(g.constant({3}, {-800, 0, 800}));
  EXPECT_DOUBLE_EQ(y[0], -800);
  EXPECT_DOUBLE_EQ(y[1], -std::log(2.0));
  EXPECT_DOUBLE_EQ(y[2], 0.0);
}

TEST(Errors, ShapeMismatchNamesOpAndExtents) {
  Graph g;
  const auto a = g.constant({2, 3}, std::vector<double>(6, 1));
  const auto b = g.constant({2, 3}, std::vector<double>(6, 1));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ad::ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
    ASSERT_EQ(e.extents().size(), 2u);
    EXPECT_EQ(e.extents()[0], (ad::Shape{2, 3}));
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, g.constant({4}, {1, 2, 3, 4})), ad::ShapeError);
  EXPECT_THROW(ad::softmax(a, 2), ad::ShapeError);
  EXPECT_THROW(ad::embedding(a, {5}, {1}), ad::ShapeError);
}

TEST(Errors, DomainViolations) {
  Graph g;
  EXPECT_THROW(ad::log(g.constant({2}, {1.0, 0.0})), ad::DomainError);
  EXPECT_THROW(ad::log(g.constant({1}, {-3.0})), ad::DomainError);
  EXPECT_THROW(ad::exp(g.constant({1}, {1e4})), ad::DomainError);
  EXPECT_THROW(ad::cosine_similarity(g.constant({2}, {0, 0}), g.constant({2}, {1, 0})), ad::DomainError);
}

TEST(Errors, BackwardNeedsScalar) {
  Graph g;
  const auto x = g.leaf({3}, {1, 2, 3});
  EXPECT_THROW(g.backward(ad::tanh(x)), ad::ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  const auto x = g.leaf({3}, {0.1, -2, 5});
  const auto grads = g.backward(ad::sum(x));
  EXPECT_EQ(std::vector<double>(grads.of(x).begin(), grads.of(x).end()), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, SigmoidSlopeAtZero) {
  Graph g;
  const auto x = g.leaf({1}, {0.0});
  EXPECT_DOUBLE_EQ(g.backward(ad::sum(ad::sigmoid(x))).of(x)[0], 0.25);
}

TEST(Backward, UnreachableNodeGetsExactZero) {
  Graph g;
  const auto x = g.leaf({2}, {1, 2});
  const auto y = g.leaf({2}, {3, 4});
  const auto unused = ad::exp(y);
  const auto grads = g.backward(ad::sum(ad::mul(x, x)));
  for (double v : grads.of(y)) EXPECT_EQ(v, 0.0);
  for (double v : grads.of(unused)) EXPECT_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(grads.of(x)[1], 4.0);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Graph g;
  const auto c = g.constant({2}, {1, 2});
  const auto x = g.leaf({2}, {3, 4});
  const auto grads = g.backward(ad::sum(ad::mul(c, x)));
  for (double v : grads.of(c)) EXPECT_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(grads.of(x)[0], 1.0);
}

TEST(Backward, ReplayIsBitwiseIdentical) {
  csst::Rng rng(5);
  Graph g;
  const auto x = g.leaf({3, 4}, random_values(rng, 12));
  const auto w = g.leaf({4, 2}, random_values(rng, 8));
  const auto y = ad::sum(ad::log_sigmoid(ad::matmul(ad::tanh(x), w)));
  const auto first = g.backward(y), second = g.backward(y);
  for (const auto& t : {x, w}) {
    const auto a = first.of(t), b = second.of(t);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(Backward, BroadcastGradientsSumOverExpandedAxes) {
  Graph g;
  const auto a = g.leaf({3, 1}, {1, 2, 3});
  const auto b = g.leaf({4}, {1, 1, 1, 1});
  const auto grads = g.backward(ad::sum(ad::mul(a, b)));
  for (double v : grads.of(a)) EXPECT_DOUBLE_EQ(v, 4.0);
  for (double v : grads.of(b)) EXPECT_DOUBLE_EQ(v, 6.0);
}

TEST(FiniteDiff, LinearFunctionIsExact) {
  csst::Rng rng(2);
  const auto w = random_values(rng, 6);
  const ad::ScalarFn fn = [&](Graph& g, const Tensor& x) { return ad::sum(ad::mul(x, g.constant({6}, w))); };
  EXPECT_LE(ad::finite_diff_check(fn, {6}, random_values(rng, 6)), 1e-8);
}

TEST(FiniteDiff, ConstantFunctionHasZeroError) {
  const ad::ScalarFn fn = [](Graph& g, const Tensor&) { return g.scalar(3.0); };
  EXPECT_EQ(ad::finite_diff_check(fn, {4}, std::vector<double>{1, 2, 3, 4}), 0.0);
}

TEST(FiniteDiff, NonScalarFunctionThrows) {
  const ad::ScalarFn fn = [](Graph&, const Tensor& x) { return ad::tanh(x); };
  EXPECT_THROW(ad::finite_diff_check(fn, {2}, std::vector<double>{1, 2}), ad::ShapeError);
}

TEST(FiniteDiff, DetectsAWrongGradient) {
  // A leaf that pretends to be the input: analytic gradient 0, numeric 2x.
  const ad::ScalarFn fn = [](Graph& g, const Tensor& x) {
    const auto copy = g.constant(x.shape(), {x.values().begin(), x.values().end()});
    return ad::sum(ad::mul(copy, copy));
  };
  EXPECT_GT(ad::finite_diff_check(fn, {2}, std::vector<double>{1.0, -2.0}), 1.0);
}

TEST(FiniteDiff, SoftmaxMaskCompositeAtRandomPoints) {
  csst::Rng rng(11);
  for (int k = 0; k < 10; ++k) {
    const auto w = random_values(rng, 12);
    const ad::ScalarFn fn = [&](Graph& g, const Tensor& x) {
      const auto p = ad::softmax(ad::masked_fill(x, {0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1}), -1);
      return ad::sum(ad::mul(p, g.constant({3, 4}, w)));
    };
    EXPECT_LE(ad::finite_diff_check(fn, {3, 4}, random_values(rng, 12, -3, 3)), 1e-4);
  }
}

TEST(GradCheckSuite, EveryPrimitiveAndTheModelPass) {
  const auto results = csst::run_gradcheck_suite();
  ASSERT_GE(results.size(), 40u);
  for (const auto& r : results) {
    EXPECT_EQ(r.points, 10) << r.name;
    EXPECT_TRUE(r.passed()) << r.name << " max error " << r.max_error;
  }
}
