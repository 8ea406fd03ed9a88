#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mutexmatch/error.hpp"
#include "mutexmatch/tensor.hpp"
#include "test_util.hpp"

namespace mm = mutexmatch;
using mm::Tensor;

TEST(Tensor, ConstructionValidatesShapeAndValues) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), mm::DimensionError);
  EXPECT_THROW(Tensor({2, 2, 2}, std::vector<double>(8, 0.0)), mm::DimensionError);
  EXPECT_THROW(Tensor::vector({1.0, NAN}), mm::NumericError);
  EXPECT_THROW(Tensor::vector({INFINITY}), mm::NumericError);
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, MatmulHandExample) {
  const Tensor c = mm::matmul(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(2, 1, {1, 1}));
  ASSERT_EQ(c.shape(), (mm::Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(c.at(1, 0), 7.0);
  EXPECT_THROW(mm::matmul(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(3, 1, {1, 1, 1})),
               mm::DimensionError);
}

TEST(Tensor, ReluAndArgmax) {
  const Tensor r = mm::relu(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(mm::argmax(Tensor::vector({0.2, 0.5, 0.3})), 1u);
  EXPECT_EQ(mm::argmax(Tensor::vector({0.5, 0.5})), 0u);
  EXPECT_EQ(mm::argmin(Tensor::vector({0.2, 0.5, 0.3})), 0u);
}

TEST(Tensor, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(mm::add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), mm::DimensionError);
  EXPECT_THROW(mm::add_bias(Tensor::matrix(1, 2, {1, 2}), Tensor::vector({1})), mm::DimensionError);
  EXPECT_THROW(mm::gather(Tensor::matrix(1, 2, {1, 2}), std::vector<std::size_t>{2}), mm::DimensionError);
}

TEST(Tensor, NonFiniteResultIsNumericError) {
  EXPECT_THROW(mm::exp(Tensor::vector({1000.0})), mm::NumericError);
  EXPECT_THROW(mm::scale(Tensor::vector({1e300}), 1e300), mm::NumericError);
}

TEST(Tensor, LogClampsAtEpsilonWithZeroGradient) {
  const Tensor x = Tensor::vector({0.0, 1e-20, 0.5}, true);
  const Tensor y = mm::log(x);
  EXPECT_DOUBLE_EQ(y.data()[0], std::log(mm::kLogClamp));
  EXPECT_DOUBLE_EQ(y.data()[1], std::log(mm::kLogClamp));
  mm::sum(y).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Softmax, HandExamples) {
  const Tensor u = mm::softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor p = mm::softmax(Tensor::vector({std::log(2.0), 0.0}), 0);
  EXPECT_NEAR(p.data()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.data()[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsAreDistributionsAndPreserveArgmax) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor x = mmtest::random_matrix(6, 7, seed, false, 5.0);
    const Tensor p = mm::softmax(x, 1);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(p.at(r, c), 0.0);
        s += p.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_EQ(mm::argmax_rows(p), mm::argmax_rows(x));
  }
}

TEST(Softmax, StableForLargeLogits) {
  const Tensor p = mm::softmax(Tensor::vector({1000.0, 999.0}), 0);
  EXPECT_NEAR(p.data()[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Softmax, ColumnAxis) {
  const Tensor p = mm::softmax(Tensor::matrix(2, 2, {0, 1, 0, 1}), 0);
  EXPECT_NEAR(p.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(p.at(1, 1), 0.5, 1e-15);
  EXPECT_THROW(mm::softmax(Tensor::vector({1, 2}), 1), mm::DimensionError);
}

TEST(Backward, SumGivesOnes) {
  const Tensor t = Tensor::vector({1, 2, 3}, true);
  mm::sum(t).backward();
  for (double g : t.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareHandDerivative) {
  const Tensor t = Tensor::vector({1, 2}, true);
  mm::sum(t * t).backward();
  EXPECT_EQ(t.grad()[0], 2.0);
  EXPECT_EQ(t.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  const Tensor t = Tensor::vector({1, 2}, true);
  EXPECT_THROW((t * t).backward(), mm::UsageError);
}

TEST(Backward, LeafGradientsAccumulateAcrossCalls) {
  const Tensor t = Tensor::vector({1, 2}, true);
  const Tensor loss = mm::sum(t * t);
  loss.backward();
  loss.backward();
  EXPECT_EQ(t.grad()[0], 4.0);
  EXPECT_EQ(t.grad()[1], 8.0);
  Tensor u = t;
  u.zero_grad();
  EXPECT_EQ(t.grad()[0], 0.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  const Tensor x = Tensor::vector({3.0}, true);
  const Tensor y = x * x;
  mm::sum(y + y * x).backward();  // d/dx (x^2 + x^3) = 2x + 3x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0 + 27.0);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    const Tensor w = mmtest::random_matrix(5, 4, 1);
    const Tensor x = mmtest::random_matrix(3, 5, 2, false);
    mm::sum(mm::log(mm::softmax(mm::relu(mm::matmul(x, w)), 1))).backward();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(StopGradient, ForwardIdentityAndNoUpstreamGradient) {
  const Tensor t = Tensor::vector({0.3, -1.2, 2.0}, true);
  const Tensor s = mm::stop_gradient(t);
  EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()),
            std::vector<double>(t.data().begin(), t.data().end()));
  EXPECT_FALSE(s.requires_grad());
  const Tensor w = Tensor::vector({1.0, 2.0, 3.0}, true);
  mm::sum(mm::exp(s) * w).backward();
  EXPECT_FALSE(t.has_grad() && std::any_of(t.grad().begin(), t.grad().end(), [](double g) { return g != 0.0; }));
  EXPECT_TRUE(w.has_grad());
}

TEST(StopGradient, MixedGraphMatchesFiniteDifferenceOfLiveBranch) {
  // loss = f(t) + g(stop_gradient(t)), f = sum(t^2 * a), g = sum(exp(t)).
  const Tensor t = Tensor::vector({0.4, -0.7, 1.1}, true);
  const Tensor a = Tensor::vector({1.0, 2.0, 3.0});
  mm::sum(t * t * a + mm::exp(mm::stop_gradient(t))).backward();
  const auto fd = mm::finite_difference_grad([&] { return mm::sum(t * t * a).item(); }, {t}, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(t.grad()[i], fd[0][i], 1e-8);
}

TEST(Tape, TopologicalOrderAndSingleVisit) {
  const Tensor w = mmtest::random_matrix(4, 3, 5);
  const Tensor b = Tensor::vector({0.1, 0.2, 0.3}, true);
  const Tensor x = mmtest::random_matrix(2, 4, 6, false);
  const Tensor h = mm::add_bias(mm::matmul(x, w), b);
  const Tensor loss = mm::sum(mm::softmax(h, 1) * h);
  const mm::Tape tape = mm::Tape::record(loss);
  const auto entries = tape.entries();
  std::set<const void*> seen;
  for (const auto& e : entries) {
    EXPECT_TRUE(seen.insert(e.node).second) << "node visited twice";
    for (const void* in : e.inputs) EXPECT_TRUE(seen.count(in)) << e.op << " precedes an input";
  }
  EXPECT_EQ(entries.back().node, loss.id());
  EXPECT_TRUE(seen.count(w.id()));
  EXPECT_FALSE(seen.count(x.id()));  // constants do not participate
}

TEST(FiniteDifference, Oracles) {
  const Tensor x = Tensor::scalar(3.0, true);
  const auto g = mm::finite_difference_grad([&] { return x.item() * x.item(); }, {x}, 1e-5);
  EXPECT_NEAR(g[0][0], 6.0, 1e-6);
  const Tensor y = Tensor::vector({1, 2, 3}, true);
  const auto z = mm::finite_difference_grad([] { return 4.0; }, {y}, 1e-5);
  for (double v : z[0]) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(y.data()[1], 2.0);  // restored
  EXPECT_THROW(mm::finite_difference_grad([] { return 0.0; }, {y}, 0.0), mm::UsageError);
}

TEST(GradCheck, EveryOp) {
  const Tensor a = mmtest::random_matrix(3, 4, 11);
  const Tensor b = mmtest::random_matrix(3, 4, 12);
  const Tensor w = mmtest::random_matrix(4, 5, 13);
  const Tensor bias = Tensor::vector(mmtest::normal_values(5, 14), true);
  const Tensor pos = Tensor::matrix(3, 4, [] {
    auto v = mmtest::normal_values(12, 15);
    for (double& x : v) x = std::abs(x) + 0.5;
    return v;
  }(), true);
  const double tol = 1e-6;
  const std::vector<std::size_t> cols{3, 0, 2};
  const std::vector<std::size_t> rows{2, 0, 2};
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum((a + b) * (a - b)); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::mean(mm::scale(mm::add_scalar(a, 2.0), 3.0) * a); }, {a}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::relu(mm::add_bias(mm::matmul(a, w), bias))); },
                                   {a, w, bias}),
            tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::exp(a) * b); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::log(pos) * b); }, {pos, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::sum_rows(a * b)); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::max_rows(a) + mm::min_rows(b)); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::gather(a, cols) * mm::gather(b, cols)); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::index_select(a, rows) * mm::index_select(b, rows)); },
                                   {a, b}),
            tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::log(mm::softmax(a, 1)) * b); }, {a, b}), tol);
  EXPECT_LT(mmtest::max_grad_error([&] { return mm::sum(mm::log(mm::softmax(a, 0)) * b); }, {a, b}), tol);
}

TEST(GradCheck, TwoLayerNetwork) {
  const Tensor x = mmtest::random_matrix(6, 8, 21, false);
  const Tensor w1 = mmtest::random_matrix(8, 10, 22, true, 0.5);
  const Tensor b1 = Tensor::vector(mmtest::normal_values(10, 23, 0.1), true);
  const Tensor w2 = mmtest::random_matrix(10, 4, 24, true, 0.5);
  const std::vector<std::size_t> y{0, 1, 2, 3, 1, 0};
  const auto loss = [&] {
    const Tensor p = mm::softmax(mm::matmul(mm::relu(mm::add_bias(mm::matmul(x, w1), b1)), w2), 1);
    return mm::scale(mm::sum(mm::log(mm::gather(p, y))), -1.0 / 6.0);
  };
  EXPECT_LT(mmtest::max_grad_error(loss, {w1, b1, w2}), 1e-4);
}

TEST(GradCheck, ConvAndPool) {
  const mm::ImageGeometry g{2, 4, 4};
  const Tensor img = mmtest::random_matrix(2, g.size(), 31);
  const Tensor kernel = mmtest::random_matrix(3, 2 * 9, 32, true, 0.3);
  const Tensor bias = Tensor::vector({0.1, -0.2, 0.05}, true);
  const Tensor weights = mmtest::random_matrix(2, 3 * 4, 33, false);
  const auto loss = [&] {
    const Tensor c = mm::relu(mm::conv2d(img, kernel, bias, g, 3));
    return mm::sum(mm::max_pool2x2(c, {3, 4, 4}) * weights);
  };
  EXPECT_LT(mmtest::max_grad_error(loss, {img, kernel, bias}), 1e-6);
}

TEST(Conv, IdentityKernelCopiesInput) {
  const mm::ImageGeometry g{1, 3, 3};
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  const Tensor img = Tensor::matrix(1, 9, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor out = mm::conv2d(img, Tensor::matrix(1, 9, k), Tensor::vector({0.0}), g, 3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out.data()[i], img.data()[i]);
  const Tensor pooled = mm::max_pool2x2(Tensor::matrix(1, 4, {1, 4, 3, 2}), {1, 2, 2});
  EXPECT_DOUBLE_EQ(pooled.item(), 4.0);
}

TEST(RelativeError, Basics) {
  const std::vector<double> a{1, 2}, b{1, 2}, c{0, 0};
  EXPECT_EQ(mm::relative_error(a, b), 0.0);
  EXPECT_EQ(mm::relative_error(c, c), 0.0);
  EXPECT_NEAR(mm::relative_error(std::vector<double>{1}, std::vector<double>{3}), 0.5, 1e-15);
}
