#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "abe/autodiff.hpp"
#include "abe/errors.hpp"
#include "abe/random.hpp"
#include "test_util.hpp"

using namespace abe;
using abe::testing::autodiff_gradient;
using abe::testing::eval_scalar;
using abe::testing::max_relative_error;
using abe::testing::numeric_gradient;

namespace {

using Graph = std::function<Var(Tape&, Var)>;

double fd_error(const Graph& f, const Tensor& x) {
  const Tensor ad = autodiff_gradient(f, x);
  const Tensor fd = numeric_gradient([&](const Tensor& p) { return eval_scalar(f, p); }, x);
  return max_relative_error(ad, fd);
}

// Values bounded away from zero so ReLU kinks stay further than h.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = uniform_tensor(shape, 0.1, 1.0, rng);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.data())
    if (flip(rng)) v = -v;
  return t;
}

}  // namespace

TEST_CASE("forward definitions") {
  Tape tape;
  SUBCASE("relu") {
    auto out = relu(tape.constant(Tensor::vector({-1, 0, 2})));
    CHECK(out.value() == Tensor::vector({0, 0, 2}));
  }
  SUBCASE("softmax is symmetric") {
    auto out = softmax(tape.constant(Tensor::vector({0, 0})));
    CHECK(out.value()[0] == doctest::Approx(0.5));
    CHECK(out.value()[1] == doctest::Approx(0.5));
  }
  SUBCASE("matmul") {
    auto out = matmul(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                      tape.constant(Tensor::matrix({{1}, {1}})));
    CHECK(out.value() == Tensor::matrix({{3}, {7}}));
  }
  SUBCASE("max pool picks window maxima") {
    Tensor x({2, 4, 1}, std::vector<double>{1, 5, 2, 0, 3, 4, 7, 1});
    auto out = max_pool2x2(tape.constant(x));
    CHECK(out.shape() == Shape{1, 2, 1});
    CHECK(out.value()[0] == 5);
    CHECK(out.value()[1] == 7);
  }
  SUBCASE("conv2d with identity kernel copies the input window") {
    Tensor x({3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({2, 2, 1, 1}, std::vector<double>{1, 0, 0, 0});
    auto out = conv2d_valid(tape.constant(x), tape.constant(k), tape.constant(Tensor::vector({0.5})));
    CHECK(out.shape() == Shape{2, 2, 1});
    CHECK(out.value() == Tensor({2, 2, 1}, std::vector<double>{1.5, 2.5, 4.5, 5.5}));
  }
  SUBCASE("log softmax agrees with log of softmax") {
    auto x = tape.constant(Tensor::vector({0.3, -1.2, 2.0}));
    auto a = log_softmax(x);
    auto b = log(softmax(x));
    CHECK(max_abs_diff(a.value(), b.value()) < 1e-14);
  }
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    Tape tape;
    auto x = tape.variable(Tensor::vector({1, 2, 3}));
    tape.backward(sum(x * x));
    CHECK(tape.gradient(x) == Tensor::vector({2, 4, 6}));
    REQUIRE(x.value().has_grad());
    CHECK(x.value().grad()[2] == 6.0);
  }
  SUBCASE("linear form") {
    Tape tape;
    auto w = tape.constant(Tensor::vector({2, 3}));
    auto x = tape.variable(Tensor::vector({1, 1}));
    tape.backward(sum(w * x));
    CHECK(tape.gradient(x) == Tensor::vector({2, 3}));
  }
}

TEST_CASE("backward errors") {
  Tape tape;
  auto x = tape.variable(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(x), GradientError);
  auto l = sum(x);
  tape.backward(l);
  CHECK_THROWS_AS(tape.backward(l), GradientError);
}

TEST_CASE("shape and finiteness errors") {
  Tape tape;
  auto a = tape.constant(Tensor::vector({1, 2}));
  auto b = tape.constant(Tensor::vector({1, 2, 3}));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2)") != std::string::npos);
    CHECK(msg.find("(3)") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{1, 2}}))),
                  ShapeError);
  auto bad = tape.constant(Tensor::vector({1, std::numeric_limits<double>::quiet_NaN()}));
  CHECK_THROWS_AS(relu(bad), NumericalError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({0.0}))), NumericalError);
}

TEST_CASE("every primitive matches central finite differences") {
  Rng rng = make_rng(11);
  const Tensor w = uniform_tensor({3, 4}, -1, 1, rng);
  const Tensor r = uniform_tensor({4}, -1, 1, rng);

  const std::vector<std::pair<const char*, Graph>> cases = {
      {"add", [&](Tape& t, Var x) { return sum((x + t.constant(r)) * t.constant(r)); }},
      {"sub", [&](Tape& t, Var x) { return sum((t.constant(r) - x) * t.constant(r)); }},
      {"mul", [&](Tape&, Var x) { return sum(x * x * x); }},
      {"scale", [&](Tape&, Var x) { return sum((x * 2.5) * x); }},
      {"relu", [&](Tape& t, Var x) { return sum(relu(x) * t.constant(r)); }},
      {"sigmoid", [&](Tape& t, Var x) { return sum(sigmoid(x) * t.constant(r)); }},
      {"log", [&](Tape&, Var x) { return sum(log(x * x)); }},
      {"softmax", [&](Tape& t, Var x) { return sum(softmax(x) * t.constant(r)); }},
      {"log_softmax", [&](Tape& t, Var x) { return sum(log_softmax(x) * t.constant(r)); }},
      {"mean", [&](Tape&, Var x) { return mean(x * x); }},
      {"gather", [&](Tape&, Var x) { return sum(gather(x * x, {3, 0, 3})); }},
      {"cross_entropy", [&](Tape&, Var x) { return cross_entropy(x, 2); }},
      {"matmul", [&](Tape& t, Var x) {
         return sum(matmul(t.constant(w), reshape(x, {4, 1})) * t.constant(Tensor({3, 1}, 0.7)));
       }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const Tensor x = away_from_zero({4}, rng);
    CHECK(fd_error(f, x) < 1e-5);
  }

  SUBCASE("conv2d and max pool") {
    const Tensor k = uniform_tensor({3, 3, 2, 3}, -1, 1, rng);
    const Tensor b = uniform_tensor({3}, -1, 1, rng);
    const Tensor x = uniform_tensor({6, 6, 2}, -1, 1, rng);
    Graph f = [&](Tape& t, Var in) {
      auto c = conv2d_valid(in, t.constant(k), t.constant(b));
      return sum(max_pool2x2(c) * max_pool2x2(c));
    };
    CHECK(fd_error(f, x) < 1e-5);
    Graph fk = [&](Tape& t, Var kv) {
      return sum(max_pool2x2(conv2d_valid(t.constant(x), kv, t.constant(b))));
    };
    CHECK(fd_error(fk, k) < 1e-5);
    Graph fb = [&](Tape& t, Var bv) { return sum(relu(conv2d_valid(t.constant(x), t.constant(k), bv))); };
    CHECK(fd_error(fb, b) < 1e-5);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng = make_rng(5);
  const Tensor x0 = uniform_tensor({5}, -1, 1, rng);
  Graph l1 = [](Tape&, Var x) { return sum(sigmoid(x) * x); };
  Graph l2 = [](Tape&, Var x) { return sum(softmax(x) * x * x); };
  const double a = 1.7, b = -0.4;
  Graph combo = [&](Tape& t, Var x) { return add(mul(l1(t, x), a), mul(l2(t, x), b)); };
  const Tensor g1 = autodiff_gradient(l1, x0);
  const Tensor g2 = autodiff_gradient(l2, x0);
  const Tensor gc = autodiff_gradient(combo, x0);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(gc[i] - (a * g1[i] + b * g2[i])) < 1e-12);
}

TEST_CASE("no_grad_eval") {
  SUBCASE("identity") {
    CHECK(no_grad_eval([](Tape&, Var x) { return x; }, Tensor::vector({1, 2})) == Tensor::vector({1, 2}));
  }
  Rng rng = make_rng(3);
  const Tensor w1 = uniform_tensor({4, 6}, -1, 1, rng);
  const Tensor w2 = uniform_tensor({6, 3}, -1, 1, rng);
  Graph mlp = [&](Tape& t, Var x) {
    return matmul(relu(matmul(reshape(x, {1, 4}), t.constant(w1))), t.constant(w2));
  };
  const Tensor x = uniform_tensor({4}, -1, 1, rng);
  SUBCASE("tracked and untracked outputs are bitwise equal") {
    Tape tape;
    const Tensor tracked = mlp(tape, tape.variable(x)).value();
    CHECK(tracked == no_grad_eval(mlp, x));
  }
  SUBCASE("repeated untracked evaluation leaves no tape storage behind") {
    const std::size_t before = Tape::live_nodes();
    for (int i = 0; i < 1000; ++i) (void)no_grad_eval(mlp, x);
    CHECK(Tape::live_nodes() == before);
  }
  SUBCASE("untracked tapes refuse backward") {
    Tape tape(GradMode::Disabled);
    auto v = tape.variable(x);
    CHECK_THROWS_AS(tape.backward(sum(v)), GradientError);
  }
}

TEST_CASE("determinism") {
  Rng a = make_rng(42), b = make_rng(42);
  const Tensor xa = uniform_tensor({8}, -1, 1, a);
  const Tensor xb = uniform_tensor({8}, -1, 1, b);
  CHECK(xa == xb);
  Graph f = [](Tape&, Var x) { return sum(softmax(x) * sigmoid(x)); };
  CHECK(autodiff_gradient(f, xa) == autodiff_gradient(f, xb));
}
