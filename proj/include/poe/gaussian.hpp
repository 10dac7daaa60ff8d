#pragma once

// Diagonal-Gaussian embeddings: reparameterized sampling, closed-form
// divergences and the per-example uncertainty score.
//
// Every divergence exists twice: a value-level version over
// DiagonalGaussian and a batched tape version over (mu, sigma) nodes whose
// rows are paired up elementwise. Both evaluate the same closed forms.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poe/autodiff.hpp"
#include "poe/rng.hpp"

namespace poe {

// Floor applied to sigma inside the SKL ratio terms.
inline constexpr double kSigmaFloor = 1e-8;

class DiagonalGaussian {
 public:
  DiagonalGaussian() = default;
  // Throws std::invalid_argument on length mismatch or non-positive sigma.
  DiagonalGaussian(std::vector<double> mu, std::vector<double> sigma);

  std::size_t dim() const { return mu_.size(); }
  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& sigma() const { return sigma_; }

  friend bool operator==(const DiagonalGaussian&, const DiagonalGaussian&) = default;

 private:
  std::vector<double> mu_;
  std::vector<double> sigma_;
};

struct EmbeddingSample {
  std::vector<double> z;
  std::vector<double> epsilon;
};

enum class Metric { skl, w2_squared };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

// z = mu + sigma * epsilon.
EmbeddingSample reparameterize(const DiagonalGaussian& g, std::vector<double> epsilon);
std::vector<EmbeddingSample> sample(const DiagonalGaussian& g, std::size_t count, Rng& rng);

double skl(const DiagonalGaussian& a, const DiagonalGaussian& b);
double w2_squared(const DiagonalGaussian& a, const DiagonalGaussian& b);
double distance(Metric metric, const DiagonalGaussian& a, const DiagonalGaussian& b);
double vib_kl(const DiagonalGaussian& g);

// Harmonic mean of the per-dimension standard deviations.
double uncertainty_score(const DiagonalGaussian& g);

// ---------------------------------------------------------------------------
// Tape versions. A batch holds one Gaussian per row: mu and sigma are B x D.

struct GaussianBatch {
  Node mu;
  Node sigma;
  std::size_t size() const { return mu.rows(); }
  std::size_t dim() const { return mu.cols(); }
};

// Standard-normal draws laid out for reparameterize: row b * count + t.
Tensor draw_noise(std::size_t batch, std::size_t dim, std::size_t count, Rng& rng);

// (B * count) x D samples, row b * count + t = mu_b + sigma_b * eps_{b,t}.
Node reparameterize(const GaussianBatch& g, const Tensor& epsilon, std::size_t count);

// Row-paired divergences: row i compares a_i with b_i; results are B x 1.
Node skl(const GaussianBatch& a, const GaussianBatch& b);
Node w2_squared(const GaussianBatch& a, const GaussianBatch& b);
Node distance(Metric metric, const GaussianBatch& a, const GaussianBatch& b);
Node vib_kl(const GaussianBatch& g);

GaussianBatch gather(const GaussianBatch& g, std::span<const std::size_t> rows);

// Row i of the batch as a value-level Gaussian.
DiagonalGaussian row_gaussian(const Tensor& mu, const Tensor& sigma, std::size_t row);

}  // namespace poe
