#pragma once

// Synthetic ordinal-regression data with per-example feature noise.
//
// A target y ~ U[y_min, y_max] is mapped onto a smooth injective curve
// phi(y) in F dimensions; each example then receives isotropic Gaussian
// noise with a standard deviation drawn from a discrete mixture. The noise
// level plays the role of image degradation and gives a ground-truth
// ordering of how uncertain each input is.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "poe/bins.hpp"

namespace poe {

struct SampleRecord {
  std::vector<double> features;
  double target = 0.0;
  int class_index = 1;
  double noise_level = 0.0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

using Dataset = std::vector<SampleRecord>;

struct NoiseComponent {
  double level = 0.0;
  double probability = 1.0;
};

struct DatasetSpec {
  std::size_t n_samples = 4000;
  std::size_t features = 8;
  int classes = 5;
  double y_min = 0.0;
  double y_max = 10.0;
  double base_noise = 0.0;
  std::vector<NoiseComponent> noise_mixture{{0.1, 0.5}, {1.0, 0.5}};
  std::uint64_t seed = 0;

  BinLayout bins() const { return {y_min, y_max, classes}; }
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// The noise-free feature vector for target y.
std::vector<double> curve_point(double y, const DatasetSpec& spec);

// Deterministic in spec (including spec.seed). Each example's noise level is
// sqrt(base_noise^2 + level^2) for its drawn mixture component.
Dataset generate(const DatasetSpec& spec);

// Adds extra_noise * N(0, I) to every feature vector; labels are unchanged
// and noise_level becomes sqrt(noise_level^2 + extra_noise^2).
Dataset corrupt(const Dataset& data, double extra_noise, std::uint64_t seed);

// The first round((1 - test_fraction) * n) records train, the rest test.
std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction);

std::size_t feature_count(const Dataset& data);

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Header: feat_0..feat_{F-1},target,class_index,noise_level. Reals are
// written with 17 significant digits.
void save_csv(const Dataset& data, const std::filesystem::path& path);
std::string to_csv(const Dataset& data);
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& text);

}  // namespace poe
