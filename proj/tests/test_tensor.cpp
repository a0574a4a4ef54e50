#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"

#include "cvlnm/attention.hpp"
#include "cvlnm/controller.hpp"
#include "cvlnm/decoder.hpp"
#include "cvlnm/optim.hpp"
#include "cvlnm/tensor.hpp"
#include "test_util.hpp"

using namespace cvlnm;

TEST_CASE("matmul matches hand-computed values") {
  Tensor a = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  Tensor b = Tensor::from({7, 8, 9, 10, 11, 12}, {3, 2});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(58).epsilon(1e-15));
  CHECK(c.at(0, 1) == doctest::Approx(64).epsilon(1e-15));
  CHECK(c.at(1, 0) == doctest::Approx(139).epsilon(1e-15));
  CHECK(c.at(1, 1) == doctest::Approx(154).epsilon(1e-15));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matvec and transpose agree with loops") {
  Rng rng(3);
  Tensor m = testutil::random_matrix(4, 5, rng);
  Tensor x = testutil::random_vector(5, rng);
  Tensor y = matvec(m, x);
  for (std::size_t r = 0; r < 4; ++r) {
    Scalar expect = 0.0;
    for (std::size_t c = 0; c < 5; ++c) expect += m.at(r, c) * x.at(c);
    CHECK(y.at(r) == doctest::Approx(expect).epsilon(1e-14));
  }
  Tensor mt = transpose(m);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(mt.at(c, r) == m.at(r, c));
}

TEST_CASE("softmax is shift invariant and overflow safe") {
  Tensor big = softmax(Tensor::vector({1000.0, 1001.0, 1002.0}));
  Tensor small = softmax(Tensor::vector({0.0, 1.0, 2.0}));
  Scalar total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::isfinite(big.at(i)));
    CHECK(big.at(i) == doctest::Approx(small.at(i)).epsilon(1e-12));
    total += big.at(i);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax sums to one over many random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.integer(12);
    std::vector<Scalar> v(n);
    for (auto& x : v) x = rng.uniform(-30.0, 30.0);
    Tensor p = softmax(Tensor::vector(std::move(v)));
    Scalar total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += p.at(i);
      CHECK(p.at(i) >= 0.0);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = Tensor::vector({2.0, -1.0}, true);
  Tensor y = add(mul(x, x), x);  // y_i = x_i^2 + x_i
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(5.0).epsilon(1e-14));   // 2*2 + 1
  CHECK(x.grad()[1] == doctest::Approx(-1.0).epsilon(1e-14));  // -2 + 1
}

TEST_CASE("elementary op gradients match finite differences") {
  Rng rng(17);
  Tensor a = testutil::random_vector(5, rng, true);
  Tensor b = testutil::random_vector(5, rng, true);
  Tensor m = testutil::random_matrix(3, 5, rng, true);
  auto f = [&] {
    Tensor v = add(mul(a, b), sigmoid(sub(a, b)));
    Tensor w = tanh_t(matvec(m, v));
    return sum(mul(w, w));
  };
  CHECK(grad_check(f, {a, b, m}) < 1e-4);
}

TEST_CASE("activation gradients at generic points") {
  Rng rng(19);
  Tensor x = testutil::random_vector(8, rng, true);
  for (Act kind : {Act::Tanh, Act::Relu, Act::LeakyRelu, Act::Sigmoid}) {
    auto f = [&] { return sum(activation(x, kind, 0.2)); };
    CHECK(grad_check(f, {x}) < 1e-6);
  }
}

TEST_CASE("log_clamped floors the argument and its gradient") {
  Tensor x = Tensor::vector({0.5, 0.0}, true);
  Tensor y = log_clamped(x);
  CHECK(y.at(0) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  CHECK(y.at(1) == doctest::Approx(std::log(1e-12)).epsilon(1e-12));
  backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x.grad()[1] == 0.0);  // clamped region contributes nothing
}

TEST_CASE("straight-through one-hot forwards argmax and passes gradient") {
  Tensor p = softmax(Tensor::vector({0.1, 2.0, 0.3}, true));
  Tensor hard = straight_through_onehot(p);
  CHECK(hard.at(0) == 0.0);
  CHECK(hard.at(1) == 1.0);
  CHECK(hard.at(2) == 0.0);
  backward(pick(hard, 0));  // gradient flows even through a zero forward slot
  bool any = false;
  for (Scalar g : p.grad()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("detach cuts the graph but keeps values") {
  Tensor x = Tensor::vector({3.0}, true);
  Tensor d = detach(mul(x, x));
  CHECK(d.at(0) == doctest::Approx(9.0));
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("rng state round-trips exactly") {
  Rng rng(99);
  for (int i = 0; i < 7; ++i) {
    rng.normal();
    rng.uniform();
  }
  std::string saved = rng.state();
  std::vector<Scalar> expect;
  for (int i = 0; i < 20; ++i) expect.push_back(rng.normal());
  Rng restored(0);
  restored.set_state(saved);
  for (int i = 0; i < 20; ++i) CHECK(restored.normal() == expect[i]);
}

TEST_CASE("adam first step moves each parameter by about lr in sign direction") {
  // With zero initial moments, one bias-corrected step is exactly
  // lr * g / (|g| + eps'), i.e. close to lr * sign(g).
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt({{"p", p}}, cfg);
  p.grad()[0] = 0.5;
  p.grad()[1] = -3.0;
  opt.step();
  CHECK(p.at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
  CHECK(p.at(1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-5));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam rejects non-finite gradients without touching parameters") {
  Tensor p = Tensor::vector({1.0}, true);
  Adam opt({{"p", p}});
  p.grad()[0] = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(), NumericsError);
  CHECK(p.at(0) == 1.0);
}

TEST_CASE("adam state round-trips through save and restore") {
  Rng rng(5);
  Tensor p = testutil::random_vector(4, rng, true);
  Tensor q = testutil::random_vector(4, rng, true);
  auto run_steps = [&](Adam& opt, Tensor a, Tensor b, int n) {
    Rng grads(123);
    for (int i = 0; i < n; ++i) {
      opt.zero_grad();
      for (std::size_t j = 0; j < 4; ++j) {
        a.grad()[j] = grads.normal();
        b.grad()[j] = grads.normal();
      }
      opt.step();
    }
  };
  Adam opt({{"a", p}, {"b", q}});
  run_steps(opt, p, q, 3);
  Adam::State snapshot = opt.state();
  std::vector<Scalar> pd = p.data(), qd = q.data();
  run_steps(opt, p, q, 2);
  std::vector<Scalar> expect_p = p.data(), expect_q = q.data();

  p.data() = pd;
  q.data() = qd;
  Adam fresh({{"a", p}, {"b", q}});
  fresh.restore(snapshot);
  run_steps(fresh, p, q, 2);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(p.data()[j] == expect_p[j]);
    CHECK(q.data()[j] == expect_q[j]);
  }
}

TEST_CASE("positional encoding follows the sinusoidal formula") {
  std::size_t dim = 6;
  Tensor pe = positional_encoding(3, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    Scalar angle = 3.0 / std::pow(10000.0, Scalar(2 * (i / 2)) / Scalar(dim));
    Scalar expect = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    CHECK(pe.at(i) == doctest::Approx(expect).epsilon(1e-15));
  }
  Tensor zero = positional_encoding(0, dim);
  for (std::size_t i = 0; i < dim; ++i)
    CHECK(zero.at(i) == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("zero_and_renormalize removes one component and keeps a simplex") {
  Tensor w = Tensor::vector({0.1, 0.2, 0.3, 0.4}, true);
  Tensor out = zero_and_renormalize(w, 1);
  CHECK(out.at(1) == 0.0);
  CHECK(out.at(0) == doctest::Approx(0.1 / 0.8).epsilon(1e-14));
  CHECK(out.at(2) == doctest::Approx(0.3 / 0.8).epsilon(1e-14));
  CHECK(out.at(3) == doctest::Approx(0.4 / 0.8).epsilon(1e-14));
  // the output is analytically independent of w[1], so the finite-difference
  // probe there is pure rounding noise against a zero gradient
  auto f = [&] { return pick(zero_and_renormalize(softmax(w), 1), 2); };
  CHECK(grad_check(f, {w}) < 1e-3);
}

TEST_CASE("gumbel hard selection is one-hot and gradient-connected") {
  Tensor w = softmax(Tensor::vector({0.5, 1.5, -0.2, 0.1}, true));
  std::vector<Scalar> noise{0.3, -0.1, 0.2, 0.0};
  Tensor hard = gumbel_softmax_hard(w, 0.7, noise);
  int ones = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((hard.at(i) == 0.0 || hard.at(i) == 1.0));
    if (hard.at(i) == 1.0) ++ones;
  }
  CHECK(ones == 1);
  backward(pick(hard, 1));
  // Straight-through: the upstream gradient reaches the soft distribution.
  bool any = false;
  for (Scalar g : w.node()->grad) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("grad_check can skip coordinates straddling an activation kink") {
  // x[0] sits closer to the ReLU kink than the probe step, so the central
  // difference there is not a derivative estimate; the reverse pass correctly
  // reports the dead-side zero.
  Tensor x = Tensor::vector({1e-6, 1.0, -1.0}, true);
  auto f = [&] { return sum(relu(x)); };
  CHECK(grad_check(f, {x}, {1e-5, 10, 0}) > 0.1);
  GradCheckOptions skip;
  skip.skip_nonsmooth = true;
  CHECK(grad_check(f, {x}, skip) < 1e-6);
}

TEST_CASE("lstm cell with zeroed parameters produces zero hidden state") {
  Rng rng(7);
  LstmCell cell(3, 4, rng);
  NamedParams params;
  cell.collect("cell", params);
  for (auto& [name, t] : params) std::fill(t.data().begin(), t.data().end(), 0.0);
  auto state = cell.step(Tensor::vector({1.0, -2.0, 0.5}), cell.initial_state());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(state.h.at(i) == 0.0);  // o=0.5, tanh(c)=0
    CHECK(state.c.at(i) == 0.0);
  }
}
