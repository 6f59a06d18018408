#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dvt/autodiff.hpp"
#include "dvt/error.hpp"

using namespace dvt;

namespace {

Tensor random_tensor(std::mt19937_64& gen, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(gen);
  return t;
}

// Projects an op output onto fixed random weights so any shape reduces to a scalar.
Var project(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return sum(mul(out, tape.constant(random_tensor(gen, out.shape()))));
}

}  // namespace

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, TakeRowsGathersInOrder) {
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  std::vector<std::size_t> rows{2, 0};
  EXPECT_EQ(m.take_rows(rows), Tensor::matrix({{5, 6}, {1, 2}}));
}

TEST(Ops, MatmulIdentityLeavesMatrix) {
  Tape tape;
  Tensor a = Tensor::matrix({{1, -2, 3}, {0.5, 4, -1}, {7, 8, 9}});
  EXPECT_EQ(matmul(tape.constant(Tensor::identity(3)), tape.constant(a)).value(), a);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Tensor s = softmax(tape.constant(Tensor::vector({0, 0, 0}))).value();
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, SumOfSquares) {
  Tape tape;
  EXPECT_EQ(sum(square(tape.constant(Tensor::vector({1, 2, 3})))).value().item(), 14.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  try {
    add(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{4})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4,)"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))),
               ShapeError);
}

TEST(Ops, NonFiniteOutputIsRejected) {
  Tape tape;
  EXPECT_THROW(exp(tape.constant(Tensor::vector({1000.0}))), NumericError);
  EXPECT_THROW(log(tape.constant(Tensor::vector({0.0}))), NumericError);
  EXPECT_THROW(log(tape.constant(Tensor::vector({-1.0}))), NumericError);
  EXPECT_THROW(div(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({0.0}))),
               NumericError);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  EXPECT_EQ(tape.backward(square(x)).of(x).item(), 6.0);
}

TEST(Backward, DotProduct) {
  Tape tape;
  Var a = tape.variable(Tensor::vector({1, 2}));
  Var b = tape.variable(Tensor::vector({3, 4}));
  Gradients g = tape.backward(sum(mul(a, b)));
  EXPECT_EQ(g.of(a), Tensor::vector({3, 4}));
  EXPECT_EQ(g.of(b), Tensor::vector({1, 2}));
}

TEST(Backward, ReluFlatRegion) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(-1.0));
  EXPECT_EQ(tape.backward(relu(x)).of(x).item(), 0.0);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(2.5));
  EXPECT_EQ(tape.backward(add(mul(x, x), x)).of(x).item(), 6.0);
}

TEST(Backward, RejectsNonScalarLossAndForeignNodes) {
  Tape tape, other;
  Var x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(square(x)), ShapeError);
  Var y = other.variable(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(y), Error);
  Gradients g = tape.backward(sum(x));
  EXPECT_THROW(g.of(y), Error);
}

TEST(Backward, ReplayIsBitIdentical) {
  std::mt19937_64 gen(5);
  const Tensor a = random_tensor(gen, {4, 3});
  const Tensor w = random_tensor(gen, {3, 2});
  auto run = [&] {
    Tape tape;
    Var x = tape.variable(a);
    Var y = sum(softplus(matmul(x, tape.variable(w))));
    return std::make_pair(y.value(), tape.backward(y).of(x));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SoftmaxRowsAreDistributions) {
  std::mt19937_64 gen(9);
  Tape tape;
  Tensor s = softmax(tape.constant(random_tensor(gen, {50, 7}, -20.0, 20.0))).value();
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(s.at(r, c), 0.0);
      total += s.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(FiniteDiff, QuadraticIsExactToRounding) {
  TapeFunction f = [](Tape&, Var x) { return square(x); };
  EXPECT_LT(finite_diff_check(f, Tensor::scalar(3.0), 1e-5), 1e-8);
}

TEST(FiniteDiff, ConstantHasZeroError) {
  TapeFunction f = [](Tape& t, Var) { return t.constant(Tensor::scalar(4.0)); };
  EXPECT_EQ(finite_diff_check(f, Tensor::vector({1, 2, 3}), 1e-5), 0.0);
}

TEST(FiniteDiff, NonFinitePerturbationIsAnError) {
  std::function<double(const Tensor&)> f = [](const Tensor& x) {
    return x[0] > 0.0 ? std::log(x[0]) : std::nan("");
  };
  EXPECT_THROW(finite_diff_check(f, Tensor::vector({1.0}), Tensor::vector({1e-6}), 1e-5),
               NumericError);
}

struct OpCase {
  std::string name;
  std::function<Var(Tape&, Var)> op;
  Shape shape;
  double lo = -2.0;
  double hi = 2.0;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase& c = GetParam();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 gen(seed * 31 + 1);
    Tensor x0 = random_tensor(gen, c.shape, c.lo, c.hi);
    if (c.name == "relu") {
      for (double& v : x0.values()) {
        if (std::abs(v) < 1e-3) v = 0.5;
      }
    }
    TapeFunction f = [&](Tape& tape, Var x) { return project(tape, c.op(tape, x), seed + 100); };
    EXPECT_LT(finite_diff_check(f, x0, 1e-5), 1e-6) << c.name << " seed " << seed;
  }
}

namespace {

Var constant_of(Tape& tape, Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 gen(seed);
  return tape.constant(random_tensor(gen, std::move(shape), lo, hi));
}

std::vector<OpCase> op_cases() {
  return {
      {"add_same", [](Tape& t, Var x) { return add(x, constant_of(t, {3, 4}, 1)); }, {3, 4}},
      {"add_row_broadcast", [](Tape& t, Var x) { return add(constant_of(t, {3, 4}, 2), x); }, {4}},
      {"add_scalar_broadcast", [](Tape& t, Var x) { return add(constant_of(t, {3, 4}, 2), x); }, {}},
      {"sub", [](Tape& t, Var x) { return sub(constant_of(t, {2, 3}, 3), x); }, {2, 3}},
      {"mul", [](Tape& t, Var x) { return mul(x, constant_of(t, {2, 3}, 4)); }, {2, 3}},
      {"mul_broadcast", [](Tape& t, Var x) { return mul(constant_of(t, {2, 3}, 4), x); }, {3}},
      {"div_numerator", [](Tape& t, Var x) { return div(x, constant_of(t, {2, 3}, 5, 0.5, 2.0)); }, {2, 3}},
      {"div_denominator", [](Tape& t, Var x) { return div(constant_of(t, {2, 3}, 6), x); }, {2, 3}, 0.5, 2.0},
      {"add_scalar", [](Tape&, Var x) { return add_scalar(x, 1.5); }, {5}},
      {"mul_scalar", [](Tape&, Var x) { return mul_scalar(x, -0.7); }, {5}},
      {"neg", [](Tape&, Var x) { return neg(x); }, {5}},
      {"matmul_left", [](Tape& t, Var x) { return matmul(x, constant_of(t, {4, 2}, 7)); }, {3, 4}},
      {"matmul_right", [](Tape& t, Var x) { return matmul(constant_of(t, {3, 4}, 8), x); }, {4, 2}},
      {"exp", [](Tape&, Var x) { return exp(x); }, {2, 3}},
      {"log", [](Tape&, Var x) { return log(x); }, {2, 3}, 0.1, 2.0},
      {"square", [](Tape&, Var x) { return square(x); }, {2, 3}},
      {"relu", [](Tape&, Var x) { return relu(x); }, {2, 3}},
      {"softplus", [](Tape&, Var x) { return softplus(x); }, {2, 3}},
      {"sigmoid", [](Tape&, Var x) { return sigmoid(x); }, {2, 3}},
      {"sum", [](Tape&, Var x) { return mul_scalar(square(sum(x)), 1.0); }, {2, 3}},
      {"mean", [](Tape&, Var x) { return square(mean(x)); }, {2, 3}},
      {"sum_last", [](Tape&, Var x) { return sum_last(x); }, {3, 4}},
      {"softmax", [](Tape&, Var x) { return softmax(x); }, {3, 4}},
      {"log_softmax", [](Tape&, Var x) { return log_softmax(x); }, {3, 4}},
      {"concat",
       [](Tape& t, Var x) {
         std::vector<Var> parts{x, constant_of(t, {3, 1}, 9), square(x)};
         return concat(parts);
       },
       {3, 2}},
      {"slice_last", [](Tape&, Var x) { return slice_last(x, 1, 3); }, {3, 4}},
      {"segment", [](Tape&, Var x) { return segment(x, 2, {2, 3}); }, {10}},
      {"broadcast_last", [](Tape&, Var x) { return broadcast_last(x, 3); }, {4}},
      {"sq_dist_to_rows",
       [](Tape&, Var x) {
         return sq_dist_to_rows(x, Tensor::matrix({{1, 0, 0}, {0, -1, 2}}));
       },
       {4, 3}},
  };
}

}  // namespace

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return info.param.name; });

TEST(StraightThrough, ForwardIsOneHotWhenAnchorIsRelaxed) {
  Tape tape;
  Var r = tape.variable(Tensor::matrix({{0.2, 0.7, 0.1}, {0.5, 0.5, 0.0}}));
  EXPECT_EQ(straight_through(r, r.value()).value(), Tensor::matrix({{0, 1, 0}, {1, 0, 0}}));
}

TEST(StraightThrough, BackwardIsIdentity) {
  Tape tape;
  Var r = tape.variable(Tensor::vector({0.2, 0.3, 0.5}));
  const Tensor weights = Tensor::vector({1, -2, 3});
  Var w = tape.constant(weights);
  EXPECT_EQ(tape.backward(sum(mul(straight_through(r, r.value()), w))).of(r), weights);
}
