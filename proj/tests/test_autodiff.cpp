#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "poe/autodiff.hpp"

using namespace poe;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& x : t.data) x = u(gen);
  return t;
}

}  // namespace

TEST_CASE("matmul forward and backward by hand") {
  Tape t;
  Node a = t.leaf(Tensor(2, 2, {1, 2, 3, 4}), true);
  Node b = t.leaf(Tensor(2, 1, {5, 6}), true);
  Node c = matmul(a, b);
  CHECK(c.value() == Tensor(2, 1, {17, 39}));
  t.backward(sum(c));
  CHECK(a.grad() == Tensor(2, 2, {5, 6, 5, 6}));
  CHECK(b.grad() == Tensor(2, 1, {4, 6}));
}

TEST_CASE("shape mismatches name the op") {
  Tape t;
  Node a = t.leaf(Tensor(2, 3));
  Node b = t.leaf(Tensor(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, t.leaf(Tensor(3, 2))), ShapeError);
  CHECK_THROWS_AS(slice(a, 2, 4), ShapeError);
  CHECK_THROWS_AS(gather_rows(a, std::vector<std::size_t>{5}), ShapeError);
}

TEST_CASE("log and sqrt reject non-positive input") {
  Tape t;
  Node z = t.leaf(Tensor(1, 2, {1.0, 0.0}));
  CHECK_THROWS_AS(log(z), DomainError);
  CHECK_THROWS_AS(sqrt(t.leaf(Tensor(1, 1, {-1.0}))), DomainError);
  CHECK_THROWS_AS(div(z, t.leaf(Tensor(1, 2, {1.0, 0.0}))), DomainError);
}

TEST_CASE("backward needs a scalar root and sweeps once") {
  Tape t;
  Node a = t.leaf(Tensor(1, 2, {1, 2}), true);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
  Node s = sum(square(a));
  t.backward(s);
  CHECK(a.grad() == Tensor(1, 2, {2, 4}));
  CHECK_THROWS_AS(t.backward(s), TapeError);
  t.reset_grads();
  t.backward(s);
  CHECK(a.grad() == Tensor(1, 2, {2, 4}));
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(3.0), true);
  Node y = x * x + x;  // dy/dx = 2x + 1
  t.backward(y);
  CHECK(x.grad().data[0] == doctest::Approx(7.0));
}

TEST_CASE("constants carry no gradient") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(2.0), true);
  Node c = t.constant(5.0);
  Node y = x * c;
  CHECK_FALSE(c.requires_grad());
  CHECK(y.requires_grad());
  t.backward(y);
  CHECK(x.grad().data[0] == 5.0);
  CHECK(c.grad().size() == 0);
}

TEST_CASE("log_sum_exp is stable for large inputs") {
  Tape t;
  Node a = t.leaf(Tensor(1, 3, {1000.0, 1000.0, 1000.0}));
  CHECK(log_sum_exp(a).item() == doctest::Approx(1000.0 + std::log(3.0)));
}

TEST_CASE("repeat_rows and gather_rows layouts") {
  Tape t;
  Node a = t.leaf(Tensor(2, 2, {1, 2, 3, 4}), true);
  Node r = repeat_rows(a, 2);
  CHECK(r.value() == Tensor(4, 2, {1, 2, 1, 2, 3, 4, 3, 4}));
  const std::vector<std::size_t> idx{1, 1, 0};
  Node g = gather_rows(a, idx);
  CHECK(g.value() == Tensor(3, 2, {3, 4, 3, 4, 1, 2}));
  t.backward(sum(g) + sum(r));
  CHECK(a.grad() == Tensor(2, 2, {3, 3, 4, 4}));
}

TEST_CASE("clear recycles buffers and resets the tape") {
  Tape t;
  Node a = t.leaf(Tensor(3, 3, 1.0), true);
  t.backward(sum(exp(a)));
  t.clear();
  CHECK(t.size() == 0);
  CHECK_FALSE(t.swept());
  Tensor z = t.alloc(3, 3);
  CHECK(z == Tensor(3, 3));
  Node b = t.leaf(Tensor(1, 1, 2.0), true);
  t.backward(square(b));
  CHECK(b.grad().data[0] == 4.0);
}

TEST_CASE("every primitive passes a finite-difference check") {
  std::mt19937_64 gen(11);
  const Tensor A = random_tensor(3, 4, gen);
  const Tensor B = random_tensor(4, 2, gen);
  const Tensor P = random_tensor(3, 4, gen, 0.5, 2.0);
  const std::vector<Tensor> params{A, B, P};

  auto check = [&](const char* name, LossBuilder fn) {
    const GradCheckReport r = grad_check(fn, params);
    INFO(name << " max rel " << r.max_rel_error << " at param " << r.worst.param);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  };

  check("matmul", [](Tape&, std::span<const Node> p) { return sum(square(matmul(p[0], p[1]))); });
  check("add/sub/mul/div", [](Tape&, std::span<const Node> p) { return sum((p[0] + p[2]) * (p[0] - p[2]) / p[2]); });
  check("scale/shift/exp/log", [](Tape&, std::span<const Node> p) {
    return mean(log(shift(exp(scale(p[0], 0.7)), 1.0)) * p[2]);
  });
  check("sqrt", [](Tape&, std::span<const Node> p) { return sum(sqrt(p[2]) * p[0]); });
  check("relu/clamp", [](Tape&, std::span<const Node> p) { return sum(square(relu(p[0])) + clamp_min(p[0], 0.2) * p[2]); });
  check("sum_axis", [](Tape&, std::span<const Node> p) {
    return sum(square(sum_axis(p[0], Axis::rows))) + sum(square(sum_axis(p[0], Axis::cols)));
  });
  check("max_over_axis", [](Tape&, std::span<const Node> p) {
    return sum(square(max_over_axis(p[0], Axis::rows))) + sum(max_over_axis(p[2] * p[0], Axis::cols));
  });
  check("log_sum_exp", [](Tape&, std::span<const Node> p) { return sum(log_sum_exp(matmul(p[0], p[1]))); });
  check("broadcast", [](Tape&, std::span<const Node> p) {
    Node row = sum_axis(p[0], Axis::rows);
    return sum(square(broadcast(row, 3, 4) * p[2]));
  });
  check("repeat/gather/slice/concat", [](Tape&, std::span<const Node> p) {
    const std::vector<std::size_t> idx{2, 0, 0, 5};
    Node r = repeat_rows(p[0], 2);
    Node g = gather_rows(r, idx);
    const Node parts[] = {slice(g, 1, 3), g};
    return sum(square(concat(parts)));
  });
}

TEST_CASE("grad_check flags a wrong adjoint") {
  // A derivative deliberately off by a factor of 2.
  auto bad_square = [](Node a) {
    Tape& t = a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v *= v;
    const std::size_t ia = a.id();
    return t.push(OpKind::square, std::move(out), {ia}, [ia](Tape& tp, std::size_t self) {
      Tensor* g = tp.grad_target(ia);
      if (!g) return;
      for (std::size_t i = 0; i < g->size(); ++i)
        g->data[i] += tp.record(self).grad.data[i] * 4.0 * tp.record(ia).value.data[i];
    });
  };
  const std::vector<Tensor> params{Tensor(1, 3, {0.5, -1.0, 2.0})};
  const GradCheckReport r = grad_check([&](Tape&, std::span<const Node> p) { return sum(bad_square(p[0])); }, params);
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
}

TEST_CASE("grad_check excludes components that straddle a kink") {
  const std::vector<Tensor> params{Tensor(1, 2, {0.0, 1.0})};
  const GradCheckReport r = grad_check([](Tape&, std::span<const Node> p) { return sum(relu(p[0])); }, params);
  CHECK(r.excluded_kinks == 1);
  CHECK(r.checked == 1);
  CHECK(r.passed);
}

TEST_CASE("forward values are deterministic across tapes") {
  std::mt19937_64 gen(3);
  const Tensor A = random_tensor(5, 5, gen);
  auto run = [&] {
    Tape t;
    Node a = t.leaf(A, true);
    Node l = sum(log_sum_exp(matmul(a, a)));
    t.backward(l);
    return std::make_pair(l.item(), a.grad());
  };
  CHECK(run() == run());
}
