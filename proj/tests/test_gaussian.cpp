#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "poe/gaussian.hpp"

using namespace poe;

TEST_CASE("DiagonalGaussian validates its parameters") {
  CHECK_THROWS_AS(DiagonalGaussian({0.0, 1.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(DiagonalGaussian({0.0}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(DiagonalGaussian({0.0}, {-1.0}), std::invalid_argument);
  CHECK_NOTHROW(DiagonalGaussian({0.0}, {1e-3}));
}

TEST_CASE("reparameterize is mu + sigma * eps") {
  const DiagonalGaussian g({1.0, -2.0}, {0.5, 2.0});
  const EmbeddingSample s = reparameterize(g, {2.0, -1.0});
  CHECK(s.z == std::vector<double>{2.0, -4.0});
  CHECK(reparameterize(g, {0.0, 0.0}).z == g.mu());
  CHECK_THROWS_AS(reparameterize(g, {1.0}), std::invalid_argument);
}

TEST_CASE("sample rejects a zero count and is seed-deterministic") {
  const DiagonalGaussian g({0.0}, {1.0});
  Rng r1(5, "sampling"), r2(5, "sampling");
  CHECK_THROWS_AS(sample(g, 0, r1), std::invalid_argument);
  const auto a = sample(g, 10, r1);
  const auto b = sample(g, 10, r2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].z == b[i].z);
}

TEST_CASE("sample moments follow the law of large numbers") {
  const DiagonalGaussian g({1.5, -0.5, 0.0}, {0.2, 1.0, 3.0});
  Rng rng(42, "sampling");
  const std::size_t n = 200000;
  const auto draws = sample(g, n, rng);
  for (std::size_t j = 0; j < g.dim(); ++j) {
    double m = 0.0, v = 0.0;
    for (const auto& d : draws) m += d.z[j];
    m /= static_cast<double>(n);
    for (const auto& d : draws) v += (d.z[j] - m) * (d.z[j] - m);
    v /= static_cast<double>(n - 1);
    const double sd = g.sigma()[j];
    CHECK(std::abs(m - g.mu()[j]) < 5.0 * sd / std::sqrt(static_cast<double>(n)));
    // Var of the sample variance is about 2 sigma^4 / n.
    CHECK(std::abs(v - sd * sd) < 5.0 * sd * sd * std::sqrt(2.0 / static_cast<double>(n)));
  }
}

TEST_CASE("skl closed form on hand-computed cases") {
  const DiagonalGaussian a({0.0}, {1.0});
  CHECK(skl(a, a) == 0.0);
  // Same sigma: SKL = (mu_a - mu_b)^2 / sigma^2.
  CHECK(skl(a, DiagonalGaussian({2.0}, {1.0})) == doctest::Approx(4.0));
  // Same mean, sigma 1 vs 2: 0.5 * (1/4 + 4 - 2) = 1.125.
  CHECK(skl(a, DiagonalGaussian({0.0}, {2.0})) == doctest::Approx(1.125));
  const DiagonalGaussian b({1.0, 0.0}, {1.0, 2.0});
  const DiagonalGaussian c({0.0, 3.0}, {2.0, 1.0});
  CHECK(skl(b, c) == doctest::Approx(skl(c, b)));
  CHECK_THROWS_AS(skl(a, b), std::invalid_argument);
}

TEST_CASE("skl agrees with a Monte-Carlo KL estimate") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = oracle::random_gaussian(3, gen);
    const auto b = oracle::random_gaussian(3, gen);
    const double mc = oracle::mc_skl(a, b, 200000, gen);
    CHECK(skl(a, b) == doctest::Approx(mc).epsilon(0.05));
  }
}

TEST_CASE("w2_squared") {
  const DiagonalGaussian a({0.0, 1.0}, {1.0, 2.0});
  const DiagonalGaussian b({3.0, 1.0}, {2.0, 2.0});
  CHECK(w2_squared(a, b) == 10.0);
  // Equal sigmas: exactly the squared Euclidean distance of the means.
  const DiagonalGaussian c({0.5, -1.0}, {1.0, 2.0});
  CHECK(w2_squared(a, c) == 0.25 + 4.0);
  CHECK(distance(Metric::w2_squared, a, b) == w2_squared(a, b));
  CHECK(distance(Metric::skl, a, b) == skl(a, b));
}

TEST_CASE("vib_kl") {
  CHECK(vib_kl(DiagonalGaussian({0.0, 0.0}, {1.0, 1.0})) == 0.0);
  CHECK(vib_kl(DiagonalGaussian({2.0}, {1.0})) == 2.0);
  const double s = 0.5;
  CHECK(vib_kl(DiagonalGaussian({0.0}, {s})) == doctest::Approx(0.5 * (s * s - std::log(s * s) - 1.0)));
}

TEST_CASE("uncertainty_score is the harmonic mean of sigma") {
  CHECK(uncertainty_score(DiagonalGaussian({0.0, 0.0}, {1.0, 1.0})) == 1.0);
  CHECK(uncertainty_score(DiagonalGaussian({0.0, 0.0}, {1.0, 3.0})) == doctest::Approx(1.5));
  // Monotone: growing any sigma grows the score.
  CHECK(uncertainty_score(DiagonalGaussian({0.0, 0.0}, {1.0, 3.5})) >
        uncertainty_score(DiagonalGaussian({0.0, 0.0}, {1.0, 3.0})));
}

TEST_CASE("metric names round-trip") {
  CHECK(parse_metric(to_string(Metric::skl)) == Metric::skl);
  CHECK(parse_metric(to_string(Metric::w2_squared)) == Metric::w2_squared);
  CHECK_THROWS_AS(parse_metric("l2"), std::invalid_argument);
}

TEST_CASE("batched divergences match the value-level ones") {
  std::mt19937_64 gen(19);
  const std::size_t B = 6, D = 4;
  std::vector<DiagonalGaussian> as, bs;
  Tensor amu(B, D), asg(B, D), bmu(B, D), bsg(B, D);
  for (std::size_t i = 0; i < B; ++i) {
    as.push_back(oracle::random_gaussian(D, gen, 2.0));
    bs.push_back(oracle::random_gaussian(D, gen, 2.0));
    for (std::size_t j = 0; j < D; ++j) {
      amu(i, j) = as[i].mu()[j];
      asg(i, j) = as[i].sigma()[j];
      bmu(i, j) = bs[i].mu()[j];
      bsg(i, j) = bs[i].sigma()[j];
    }
  }
  Tape t;
  const GaussianBatch a{t.leaf(amu), t.leaf(asg)};
  const GaussianBatch b{t.leaf(bmu), t.leaf(bsg)};
  const Node s = skl(a, b), w = w2_squared(a, b), v = vib_kl(a);
  for (std::size_t i = 0; i < B; ++i) {
    CHECK(s.value().data[i] == doctest::Approx(skl(as[i], bs[i])).epsilon(1e-12));
    CHECK(w.value().data[i] == doctest::Approx(w2_squared(as[i], bs[i])).epsilon(1e-12));
    CHECK(v.value().data[i] == doctest::Approx(vib_kl(as[i])).epsilon(1e-12));
  }
  CHECK(row_gaussian(amu, asg, 2) == as[2]);
}

TEST_CASE("batched reparameterize layout and noise shape") {
  Tape t;
  const GaussianBatch g{t.leaf(Tensor(2, 1, {1.0, 10.0})), t.leaf(Tensor(2, 1, {2.0, 3.0}))};
  const Tensor eps(4, 1, {0.0, 1.0, -1.0, 2.0});
  CHECK(reparameterize(g, eps, 2).value() == Tensor(4, 1, {1.0, 3.0, 7.0, 16.0}));
  CHECK_THROWS_AS(reparameterize(g, eps, 3), ShapeError);
  Rng rng(1);
  CHECK(draw_noise(3, 2, 5, rng).rows == 15);
  CHECK_THROWS_AS(draw_noise(3, 2, 0, rng), std::invalid_argument);
}

TEST_CASE("divergence gradients pass a finite-difference check") {
  std::mt19937_64 gen(23);
  auto rnd = [&](double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor x(4, 3);
    for (double& v : x.data) v = u(gen);
    return x;
  };
  const std::vector<Tensor> params{rnd(-1, 1), rnd(0.5, 2), rnd(-1, 1), rnd(0.5, 2)};
  for (Metric m : {Metric::skl, Metric::w2_squared}) {
    const auto r = grad_check(
        [m](Tape&, std::span<const Node> p) { return sum(distance(m, {p[0], p[1]}, {p[2], p[3]})); }, params);
    INFO(to_string(m) << " " << r.max_rel_error);
    CHECK(r.passed);
  }
  const auto r = grad_check([](Tape&, std::span<const Node> p) { return sum(vib_kl({p[0], p[1]})); }, params);
  CHECK(r.passed);
}
