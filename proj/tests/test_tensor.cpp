#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "medcam/selftest.hpp"
#include "medcam/tensor.hpp"

using namespace medcam;

TEST_CASE("backward of sum(x^2) gives 2x", "[tensor]") {
  Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  Tape tape;
  Tensor loss = sum(tape, square(tape, x));
  backward(loss, tape);
  const auto g = x.grad_or_zeros();
  CHECK(g == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("constant loss leaves unrelated leaves with zero gradient", "[tensor]") {
  Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  Tensor y = Tensor::from({2}, {5.0, -1.0}, true);
  Tape tape;
  Tensor loss = sum(tape, square(tape, y));
  backward(loss, tape);
  CHECK(x.grad_or_zeros() == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("repeated backward calls accumulate leaf gradients", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
  Tape tape;
  Tensor loss = sum(tape, square(tape, x));
  backward(loss, tape);
  backward(loss, tape);
  const auto g = x.grad_or_zeros();
  CHECK(g[0] == Catch::Approx(4.0).margin(0));
  CHECK(g[1] == Catch::Approx(-8.0).margin(0));
}

TEST_CASE("backward requires a scalar loss", "[tensor]") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor out = square(tape, x);
  CHECK_THROWS_AS(backward(out, tape), ContractError);
}

TEST_CASE("softmax of [0,0] is uniform", "[tensor]") {
  Tape tape;
  Tensor p = softmax(tape, Tensor::from({2}, {0.0, 0.0}));
  CHECK(p.data()[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(p.data()[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("softmax of [1,2,3] matches exp-normalize oracle", "[tensor]") {
  // Frozen from a high-precision exp-normalize computation.
  const double expected[3] = {0.090030573170380457998, 0.24472847105479765247,
                              0.66524095577482188953};
  Tape tape;
  Tensor p = softmax(tape, Tensor::from({3}, {1.0, 2.0, 3.0}));
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(p.data()[i] - expected[i]) < 1e-10);
  }
}

TEST_CASE("softmax rows sum to one for random finite vectors", "[tensor]") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.uniform_int(6);
    Tensor v = Tensor::zeros({n});
    // Strict interior bounds need gaps below ~36 (exp(-37) vanishes next to
    // 1.0 in double arithmetic); wider gaps are covered below.
    for (int i = 0; i < n; ++i) v.data()[i] = rng.uniform(-15.0, 15.0);
    Tape tape;
    Tensor p = softmax(tape, v);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      s += p.data()[i];
      REQUIRE(p.data()[i] > 0.0);
      REQUIRE(p.data()[i] < 1.0);
    }
    REQUIRE(std::fabs(s - 1.0) < 1e-12);
  }
  // Extreme logit gaps: normalization still holds exactly.
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.uniform_int(6);
    Tensor v = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) v.data()[i] = rng.uniform(-350.0, 350.0);
    Tape tape;
    Tensor p = softmax(tape, v);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      s += p.data()[i];
      REQUIRE(p.data()[i] >= 0.0);
      REQUIRE(p.data()[i] <= 1.0);
    }
    REQUIRE(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("relu matches its definition", "[tensor]") {
  Tape tape;
  Tensor out = relu(tape, Tensor::from({3}, {-1.0, 0.0, 2.0}));
  CHECK(out.values() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("log_clamped floors its argument at 1e-12", "[tensor]") {
  Tape tape;
  Tensor out = log_clamped(tape, Tensor::from({2}, {0.0, 1.0}));
  CHECK(out.data()[0] == Catch::Approx(std::log(1e-12)).margin(1e-12));
  CHECK(out.data()[1] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("elementwise ops reject non-finite input by name", "[tensor]") {
  Tape tape;
  Tensor bad = Tensor::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_WITH(relu(tape, bad), Catch::Matchers::ContainsSubstring("relu"));
  CHECK_THROWS_AS(relu(tape, bad), NumericError);
  Tensor inf = Tensor::from({1}, {std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(sigmoid(tape, inf), NumericError);
}

TEST_CASE("scalar broadcast works on either side", "[tensor]") {
  Tape tape;
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
  Tensor s = Tensor::scalar(10.0);
  CHECK(add(tape, a, s).values() == std::vector<double>{11.0, 12.0, 13.0});
  CHECK(sub(tape, s, a).values() == std::vector<double>{9.0, 8.0, 7.0});
  CHECK(mul(tape, s, a).values() == std::vector<double>{10.0, 20.0, 30.0});
}

TEST_CASE("shape mismatches are dimension errors", "[tensor]") {
  Tape tape;
  Tensor a = Tensor::zeros({3});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_AS(add(tape, a, b), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
}

TEST_CASE("item requires a scalar tensor", "[tensor]") {
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ContractError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("identical forward/backward passes give bit-identical gradients",
          "[tensor]") {
  auto run = []() {
    Rng rng(0xabcdULL);
    Tensor x = Tensor::zeros({2, 5}, true);
    for (long long i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
    Tape tape;
    Tensor h = sigmoid(tape, x);
    Tensor loss = mean(tape, square(tape, h));
    backward(loss, tape);
    return x.grad_or_zeros();
  };
  CHECK(run() == run());
}

TEST_CASE("composite graphs agree with central finite differences", "[tensor]") {
  // Composite of elementwise, reduction, and softmax ops.
  GradCaseBuilder builder = [](Rng& rng) {
    GradCase c;
    Tensor a = selftest_detail::random_tensor(rng, {2, 3}, 0.2, 1.5);
    Tensor b = selftest_detail::random_tensor(rng, {2, 3}, 0.2, 1.5);
    c.inputs = {a, b};
    c.forward = [=](Tape& tape) -> Tensor {
      Tensor h = mul(tape, sigmoid(tape, a), sqrt_op(tape, b));
      Tensor p = softmax(tape, h);
      return sum(tape, square(tape, sub(tape, p, mean(tape, h))));
    };
    return c;
  };
  Rng rng(51);
  const auto out = gradient_check(builder, 25, rng);
  INFO(out.worst);
  CHECK(out.max_rel_err < kGradTolerance);
}

TEST_CASE("select picks one element and routes its gradient", "[tensor]") {
  Tensor x = Tensor::from({4}, {1.0, 5.0, 3.0, 2.0}, true);
  Tape tape;
  Tensor s = select(tape, x, 1);
  CHECK(s.item() == 5.0);
  backward(s, tape);
  CHECK(x.grad_or_zeros() == std::vector<double>{0.0, 1.0, 0.0, 0.0});
  CHECK_THROWS_AS(select(tape, x, 9), ContractError);
}

TEST_CASE("argmax ties break to the lowest index", "[tensor]") {
  CHECK(argmax_index(Tensor::from({4}, {1.0, 3.0, 3.0, 0.5})) == 1);
  CHECK(argmax_index(Tensor::from({2}, {2.0, 2.0})) == 0);
}
