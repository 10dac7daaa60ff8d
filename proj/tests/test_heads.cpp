#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "poe/gaussian.hpp"
#include "poe/heads.hpp"

using namespace poe;

namespace {

// D x D identity head so that the logits equal z.
HeadParams identity_head(HeadKind kind, int classes) {
  const std::size_t w = HeadParams::output_width(kind, classes);
  HeadParams h = HeadParams::zeros(kind, w, classes);
  for (std::size_t i = 0; i < w; ++i) h.weights(i, i) = 1.0;
  return h;
}

double classification_loss(const HeadParams& h, const Tensor& z, std::vector<int> classes, std::size_t T) {
  Tape t;
  return loss_classification(bind(t, h, false), t.leaf(z), classes, T).item();
}

double lse(std::vector<double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace

TEST_CASE("direct head losses") {
  Tape t;
  HeadParams h = HeadParams::zeros(HeadKind::direct, 2, 5);
  const std::vector<double> y{3.0};
  CHECK(loss_direct(bind(t, h, false), t.leaf(Tensor(3, 2, {1, 2, 3, 4, 5, 6})), y, 3).item() == 9.0);

  h.weights = Tensor(2, 1, {1.0, 0.0});
  CHECK(loss_direct(bind(t, h, false), t.leaf(Tensor(1, 2, {3.0, 7.0})), y, 1).item() == 0.0);
  // T = 2 with predictions 2 and 4 around y = 3.
  CHECK(loss_direct(bind(t, h, false), t.leaf(Tensor(2, 2, {2.0, 0.0, 4.0, 0.0})), y, 2).item() == 1.0);
}

TEST_CASE("classification head losses") {
  HeadParams zero = HeadParams::zeros(HeadKind::classification, 3, 4);
  CHECK(classification_loss(zero, Tensor(1, 3, {1, 2, 3}), {2}, 1) == doctest::Approx(std::log(4.0)));

  const HeadParams id = identity_head(HeadKind::classification, 3);
  CHECK(classification_loss(id, Tensor(1, 3, {0.0, 50.0, 0.0}), {2}, 1) < 1e-20);
  CHECK(classification_loss(id, Tensor(1, 3, {1.0, 2.0, 3.0}), {2}, 1) == doctest::Approx(1.4076059644));
  CHECK_THROWS_AS(classification_loss(id, Tensor(1, 3), {4}, 1), std::out_of_range);
  CHECK_THROWS_AS(classification_loss(id, Tensor(1, 3), {0}, 1), std::out_of_range);
}

TEST_CASE("ranking head losses") {
  Tape t;
  const HeadParams zero = HeadParams::zeros(HeadKind::ranking, 3, 5);
  const std::vector<RankLabels> lab{make_rank_labels(3, 5)};
  CHECK(loss_ranking(bind(t, zero, false), t.leaf(Tensor(1, 3, {1, 2, 3})), lab, 1).item() ==
        doctest::Approx(4.0 * std::log(2.0)));

  const HeadParams id = identity_head(HeadKind::ranking, 3);
  const std::vector<RankLabels> two{make_rank_labels(2, 3)};  // bits (1, 0)
  // Saturated and correct: classifier 1 says "1", classifier 2 says "0".
  CHECK(loss_ranking(bind(t, id, false), t.leaf(Tensor(1, 4, {-40, 40, 40, -40})), two, 1).item() < 1e-15);

  const Tensor z(1, 4, {0.3, -1.2, 0.5, 2.0});
  const double expected = (lse({0.3, -1.2}) - (-1.2)) + (lse({0.5, 2.0}) - 0.5);
  CHECK(loss_ranking(bind(t, id, false), t.leaf(z), two, 1).item() == doctest::Approx(expected));

  const std::vector<RankLabels> short_label{RankLabels{{1}}};
  CHECK_THROWS_AS(loss_ranking(bind(t, id, false), t.leaf(z), short_label, 1), std::invalid_argument);
}

TEST_CASE("head kind mismatch is rejected") {
  Tape t;
  const HeadParams h = HeadParams::zeros(HeadKind::classification, 2, 3);
  const std::vector<double> y{1.0};
  CHECK_THROWS_AS(loss_direct(bind(t, h, false), t.leaf(Tensor(1, 2)), y, 1), std::invalid_argument);
  CHECK_THROWS_AS(point_loss_direct(h, std::vector<double>{0, 0}, 1.0), std::invalid_argument);
}

TEST_CASE("rank labels") {
  CHECK(make_rank_labels(1, 5).bits == std::vector<std::uint8_t>{0, 0, 0, 0});
  CHECK(make_rank_labels(5, 5).bits == std::vector<std::uint8_t>{1, 1, 1, 1});
  CHECK(make_rank_labels(3, 5).bits == std::vector<std::uint8_t>{1, 1, 0, 0});
  CHECK(make_rank_labels(3, 5).class_index() == 3);
  CHECK_THROWS_AS(make_rank_labels(0, 5), std::out_of_range);
  CHECK_THROWS_AS(make_rank_labels(6, 5), std::out_of_range);
  CHECK_THROWS_AS((RankLabels{{0, 1}}.validate()), std::invalid_argument);
  CHECK_NOTHROW((RankLabels{{1, 1, 0}}.validate()));
}

TEST_CASE("decoding rules") {
  const BinLayout bins{0.0, 10.0, 5};
  const HeadParams cls = identity_head(HeadKind::classification, 3);
  const Decoded d = decode(cls, std::vector<double>{0.1, 2.0, -1.0}, BinLayout{0.0, 3.0, 3});
  CHECK(d.class_index == 2);
  CHECK(d.estimate == 1.5);
  // Argmax ties go to the lowest index.
  CHECK(decode(cls, std::vector<double>{1.0, 1.0, 0.0}, BinLayout{0.0, 3.0, 3}).class_index == 1);

  const HeadParams rank8 = identity_head(HeadKind::ranking, 8);
  std::vector<double> all_zero(14), all_one(14);
  for (std::size_t k = 0; k < 7; ++k) {
    all_zero[2 * k] = 1.0;
    all_one[2 * k + 1] = 1.0;
  }
  CHECK(decode(rank8, all_zero, BinLayout{0.0, 8.0, 8}).class_index == 1);
  CHECK(decode(rank8, all_one, BinLayout{0.0, 8.0, 8}).class_index == 8);
  // Tied binary logits count as b_k = 0.
  CHECK(decode(rank8, std::vector<double>(14, 0.0), BinLayout{0.0, 8.0, 8}).class_index == 1);

  HeadParams direct = HeadParams::zeros(HeadKind::direct, 1, 5);
  direct.weights(0, 0) = 1.0;
  const Decoded dd = decode(direct, std::vector<double>{4.2}, bins);
  CHECK(dd.estimate == 4.2);
  CHECK(dd.class_index == 3);
  CHECK(decode(direct, std::vector<double>{-3.0}, bins).class_index == 1);
  CHECK(decode(direct, std::vector<double>{30.0}, bins).class_index == 5);

  const HeadParams cls5 = identity_head(HeadKind::classification, 5);
  const Decoded ex = decode(cls5, std::vector<double>(5, 0.0), bins, ClassDecode::expectation);
  CHECK(ex.estimate == doctest::Approx(5.0));
}

TEST_CASE("decode properties on random logits") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd(0.0, 3.0);
  const HeadParams rank = identity_head(HeadKind::ranking, 6);
  const HeadParams cls = identity_head(HeadKind::classification, 6);
  const BinLayout bins{0.0, 6.0, 6};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(10), c(6);
    for (double& v : r) v = nd(gen);
    for (double& v : c) v = nd(gen);
    const int k = decode(rank, r, bins).class_index;
    CHECK(k >= 1);
    CHECK(k <= 6);
    std::vector<double> shifted = c;
    const double s = nd(gen);
    for (double& v : shifted) v += s;
    CHECK(decode(cls, c, bins).class_index == decode(cls, shifted, bins).class_index);
  }
}

TEST_CASE("bin layout: half-open bins, last closed") {
  const BinLayout b{0.0, 10.0, 5};
  CHECK(b.bin(0.0) == 1);
  CHECK(b.bin(1.999) == 1);
  CHECK(b.bin(2.0) == 2);
  CHECK(b.bin(8.0) == 5);
  CHECK(b.bin(10.0) == 5);
  CHECK(b.center(1) == 1.0);
  CHECK(b.center(5) == 9.0);
}

TEST_CASE("losses are invariant under permuting the samples") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  Rng rng(3);
  const std::size_t T = 6, D = 4;
  for (HeadKind kind : {HeadKind::direct, HeadKind::classification, HeadKind::ranking}) {
    const HeadParams h = HeadParams::random(kind, D, 4, rng);
    Tensor z(T, D);
    for (double& v : z.data) v = nd(gen);
    Tensor zr(T, D);
    for (std::size_t i = 0; i < T; ++i) std::copy_n(&z.data[(T - 1 - i) * D], D, &zr.data[i * D]);
    auto run = [&](const Tensor& zz) {
      Tape t;
      const HeadBinding b = bind(t, h, false);
      const Node zn = t.leaf(zz);
      switch (kind) {
        case HeadKind::direct: return loss_direct(b, zn, std::vector<double>{1.7}, T).item();
        case HeadKind::classification: return loss_classification(b, zn, std::vector<int>{3}, T).item();
        case HeadKind::ranking: return loss_ranking(b, zn, std::vector<RankLabels>{make_rank_labels(2, 4)}, T).item();
      }
      return 0.0;
    };
    CHECK(run(z) == doctest::Approx(run(zr)).epsilon(1e-14));
  }
}

TEST_CASE("one sample with zero sigma equals the point loss") {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> nd;
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t D = 5;
    std::vector<double> mu(D);
    for (double& v : mu) v = nd(gen);
    const int c = 1 + trial % 5;
    const double y = nd(gen) * 3.0;
    for (HeadKind kind : {HeadKind::direct, HeadKind::classification, HeadKind::ranking}) {
      const HeadParams h = HeadParams::random(kind, D, 5, rng);
      Tape t;
      const GaussianBatch g{t.leaf(Tensor(1, D, mu)), t.leaf(Tensor(1, D, 0.0))};
      const Node z = reparameterize(g, Tensor(1, D, std::vector<double>(D, nd(gen))), 1);
      const HeadBinding b = bind(t, h, false);
      double prob = 0.0, point = 0.0;
      switch (kind) {
        case HeadKind::direct:
          prob = loss_direct(b, z, std::vector<double>{y}, 1).item();
          point = point_loss_direct(h, mu, y);
          break;
        case HeadKind::classification:
          prob = loss_classification(b, z, std::vector<int>{c}, 1).item();
          point = point_loss_classification(h, mu, c);
          break;
        case HeadKind::ranking:
          prob = loss_ranking(b, z, std::vector<RankLabels>{make_rank_labels(c, 5)}, 1).item();
          point = point_loss_ranking(h, mu, make_rank_labels(c, 5));
          break;
      }
      CHECK(std::abs(prob - point) <= 1e-12);
    }
  }
}

TEST_CASE("head loss gradients through the reparameterization") {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> nd;
  const std::size_t B = 3, D = 4, T = 5;
  Rng rng(9);
  Tensor eps(B * T, D);
  for (double& v : eps.data) v = nd(gen);
  Tensor mu(B, D), sigma(B, D);
  for (double& v : mu.data) v = nd(gen);
  for (double& v : sigma.data) v = 0.5 + std::abs(nd(gen));
  const std::vector<double> y{1.0, -2.0, 0.5};
  const std::vector<int> cls{1, 4, 2};
  std::vector<RankLabels> ranks;
  for (int c : cls) ranks.push_back(make_rank_labels(c, 4));
  for (HeadKind kind : {HeadKind::direct, HeadKind::classification, HeadKind::ranking}) {
    const HeadParams h = HeadParams::random(kind, D, 4, rng);
    const std::vector<Tensor> params{mu, sigma, h.weights};
    const auto r = grad_check(
        [&](Tape&, std::span<const Node> p) {
          const HeadBinding b{kind, 4, p[2]};
          const Node z = reparameterize({p[0], p[1]}, eps, T);
          switch (kind) {
            case HeadKind::direct: return loss_direct(b, z, y, T);
            case HeadKind::classification: return loss_classification(b, z, cls, T);
            case HeadKind::ranking: break;
          }
          return loss_ranking(b, z, ranks, T);
        },
        params);
    INFO(to_string(kind) << " " << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("head parameter shapes") {
  CHECK(HeadParams::output_width(HeadKind::direct, 5) == 1);
  CHECK(HeadParams::output_width(HeadKind::classification, 5) == 5);
  CHECK(HeadParams::output_width(HeadKind::ranking, 5) == 8);
  HeadParams h = HeadParams::zeros(HeadKind::classification, 4, 5);
  h.weights = Tensor(4, 4);
  CHECK_THROWS_AS(h.validate(), ShapeError);
  CHECK(parse_head_kind("ranking") == HeadKind::ranking);
  CHECK_THROWS_AS(parse_head_kind("ordinal"), std::invalid_argument);
}
