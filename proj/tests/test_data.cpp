#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "oracles.hpp"
#include "poe/data.hpp"
#include "poe/evaluation.hpp"
#include "poe/model.hpp"

using namespace poe;

namespace {

DatasetSpec clean_spec(std::size_t n, int classes, std::uint64_t seed) {
  DatasetSpec s;
  s.n_samples = n;
  s.classes = classes;
  s.noise_mixture.clear();
  s.seed = seed;
  return s;
}

double agreement(const std::vector<int>& a, const Dataset& d) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hits += a[i] == d[i].class_index;
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("generated records satisfy their invariants") {
  DatasetSpec spec;
  spec.n_samples = 500;
  spec.seed = 3;
  const Dataset d = generate(spec);
  REQUIRE(d.size() == 500);
  for (const SampleRecord& r : d) {
    CHECK(r.features.size() == spec.features);
    CHECK(r.target >= spec.y_min);
    CHECK(r.target <= spec.y_max);
    CHECK(r.class_index == spec.bins().bin(r.target));
    CHECK(r.noise_level >= 0.0);
    CHECK((r.noise_level == 0.1 || r.noise_level == 1.0));
  }
}

TEST_CASE("generation is a pure function of its parameters and seed") {
  DatasetSpec spec;
  spec.n_samples = 200;
  CHECK(generate(spec) == generate(spec));
  DatasetSpec other = spec;
  other.seed = 1;
  CHECK_FALSE(generate(spec) == generate(other));
}

TEST_CASE("noise-free features lie on the curve and 1-NN on the curve recovers the class") {
  for (int classes : {2, 5, 8}) {
    const DatasetSpec spec = clean_spec(1000, classes, 11);
    const Dataset d = generate(spec);
    for (const SampleRecord& r : d) CHECK(r.features == curve_point(r.target, spec));
    CHECK(agreement(oracle::curve_decode_classes(d, spec), d) == 1.0);
  }
}

TEST_CASE("the curve is injective with a separated first pair of coordinates") {
  const DatasetSpec spec;
  const auto a = curve_point(0.0, spec), b = curve_point(10.0, spec), c = curve_point(5.0, spec);
  CHECK(a != b);
  double norm = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) norm += (a[k] - b[k]) * (a[k] - b[k]);
  CHECK(norm > 1.0);
  CHECK(c[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mixture component counts stay within a 4-sigma binomial bound") {
  DatasetSpec spec;
  spec.n_samples = 1000;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    spec.seed = seed;
    const Dataset d = generate(spec);
    const auto low = std::count_if(d.begin(), d.end(), [](const SampleRecord& r) { return r.noise_level < 0.5; });
    const double sd = std::sqrt(1000 * 0.5 * 0.5);
    CHECK(std::abs(static_cast<double>(low) - 500.0) <= 4.0 * sd);
  }
}

TEST_CASE("corrupt") {
  DatasetSpec spec = clean_spec(4000, 5, 2);
  const Dataset d = generate(spec);
  CHECK(corrupt(d, 0.0, 1) == d);
  CHECK_THROWS_AS(corrupt(d, -0.1, 1), std::invalid_argument);

  const double a = 0.3, b = 0.4;
  const Dataset twice = corrupt(corrupt(d, a, 10), b, 20);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(twice[i].target == d[i].target);
    CHECK(twice[i].class_index == d[i].class_index);
    CHECK(twice[i].noise_level == doctest::Approx(std::hypot(a, b)));
    for (std::size_t k = 0; k < d[i].features.size(); ++k) {
      const double diff = twice[i].features[k] - d[i].features[k];
      acc += diff * diff;
      ++n;
    }
  }
  const double var = acc / static_cast<double>(n);
  // Sample variance of n normals has relative sd sqrt(2 / n).
  CHECK(std::abs(var - (a * a + b * b)) < 5.0 * (a * a + b * b) * std::sqrt(2.0 / static_cast<double>(n)));
  CHECK(corrupt(d, a, 10) == corrupt(d, a, 10));
}

TEST_CASE("heavy corruption lowers curve-decoder accuracy") {
  const DatasetSpec spec = clean_spec(300, 5, 8);
  const Dataset d = generate(spec);
  const double clean = agreement(oracle::curve_decode_classes(d, spec), d);
  const Dataset noisy = corrupt(d, 2.0, 4);
  CHECK(agreement(oracle::curve_decode_classes(noisy, spec), noisy) < clean);
}

TEST_CASE("split keeps order") {
  DatasetSpec spec;
  spec.n_samples = 10;
  const Dataset d = generate(spec);
  const auto [tr, te] = split(d, 0.2);
  CHECK(tr.size() == 8);
  CHECK(te.size() == 2);
  CHECK(te[0] == d[8]);
  CHECK(split(d, 0.0).second.empty());
  CHECK_THROWS_AS(split(d, 1.0), std::invalid_argument);
}

TEST_CASE("spec validation") {
  DatasetSpec s;
  s.y_min = 5.0;
  s.y_max = 5.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = DatasetSpec{};
  s.noise_mixture = {{0.1, 0.5}, {1.0, 0.4}};
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = DatasetSpec{};
  s.base_noise = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = DatasetSpec{};
  s.n_samples = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("CSV round trip is exact") {
  DatasetSpec spec;
  spec.n_samples = 50;
  const Dataset d = generate(spec);
  CHECK(parse_csv(to_csv(d)) == d);
  const auto path = std::filesystem::temp_directory_path() / "poe_test_roundtrip.csv";
  save_csv(d, path);
  CHECK(load_csv(path) == d);
  std::filesystem::remove(path);
  CHECK(to_csv(d).rfind("feat_0,feat_1,feat_2,feat_3,feat_4,feat_5,feat_6,feat_7,target,class_index,noise_level\n", 0) == 0);
}

TEST_CASE("CSV errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    try {
      parse_csv(text);
    } catch (const CsvError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("") == 1);
  CHECK(line_of("feat_0,target,class_index\n1,2,3\n") == 1);
  CHECK(line_of("feat_0,target,class_index,noise_level\n") == 1);
  CHECK(line_of("feat_0,target,class_index,noise_level\n1,2,1,0\n1,2,1\n") == 3);
  CHECK(line_of("feat_0,target,class_index,noise_level\n1,abc,1,0\n") == 2);
  CHECK(line_of("feat_0,target,class_index,noise_level\n1,2,1.5,0\n") == 2);
  CHECK(line_of("feat_0,target,class_index,noise_level\n1,2,1,-1\n") == 2);
  CHECK_THROWS_AS(load_csv("/nonexistent/poe.csv"), std::runtime_error);
}

TEST_CASE("a deterministic classifier learns the clean data") {
  const Dataset d = generate(clean_spec(2000, 5, 21));
  const auto [train_set, test_set] = split(d, 0.2);
  TrainConfig cfg;
  cfg.mode = Mode::deterministic_baseline;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 60;
  PoeModel m = PoeModel::create(cfg, 8);
  train(m, train_set, cfg);
  std::vector<int> pred, truth;
  for (const Prediction& p : predict(m, test_set)) pred.push_back(p.decoded.class_index);
  for (const SampleRecord& r : test_set) truth.push_back(r.class_index);
  CHECK(accuracy(pred, truth) >= 0.95);
}
