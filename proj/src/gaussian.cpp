#include "poe/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace poe {

DiagonalGaussian::DiagonalGaussian(std::vector<double> mu, std::vector<double> sigma)
    : mu_(std::move(mu)), sigma_(std::move(sigma)) {
  if (mu_.size() != sigma_.size()) {
    throw std::invalid_argument("DiagonalGaussian: mu has " + std::to_string(mu_.size()) +
                                " dims, sigma has " + std::to_string(sigma_.size()));
  }
  for (std::size_t j = 0; j < sigma_.size(); ++j) {
    if (!(sigma_[j] > 0.0)) {
      throw std::invalid_argument("DiagonalGaussian: sigma[" + std::to_string(j) +
                                  "] = " + std::to_string(sigma_[j]) + " is not positive");
    }
  }
}

std::string_view to_string(Metric m) { return m == Metric::skl ? "skl" : "w2_squared"; }

Metric parse_metric(std::string_view s) {
  if (s == "skl") return Metric::skl;
  if (s == "w2_squared" || s == "w2") return Metric::w2_squared;
  throw std::invalid_argument("unknown metric '" + std::string(s) + "' (expected skl or w2_squared)");
}

namespace {

void require_same_dim(const char* op, const DiagonalGaussian& a, const DiagonalGaussian& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
}

}  // namespace

EmbeddingSample reparameterize(const DiagonalGaussian& g, std::vector<double> epsilon) {
  if (epsilon.size() != g.dim()) throw ShapeError("reparameterize: epsilon length mismatch");
  EmbeddingSample s;
  s.z.resize(g.dim());
  for (std::size_t j = 0; j < g.dim(); ++j) s.z[j] = g.mu()[j] + g.sigma()[j] * epsilon[j];
  s.epsilon = std::move(epsilon);
  return s;
}

std::vector<EmbeddingSample> sample(const DiagonalGaussian& g, std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("sample: sample count T must be at least 1");
  std::vector<EmbeddingSample> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<double> eps(g.dim());
    for (double& e : eps) e = rng.normal();
    out.push_back(reparameterize(g, std::move(eps)));
  }
  return out;
}

double skl(const DiagonalGaussian& a, const DiagonalGaussian& b) {
  require_same_dim("skl", a, b);
  double acc = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    const double sa = std::max(a.sigma()[j], kSigmaFloor);
    const double sb = std::max(b.sigma()[j], kSigmaFloor);
    const double va = sa * sa, vb = sb * sb;
    const double d = a.mu()[j] - b.mu()[j];
    acc += va / vb + vb / va - 2.0 + d * d / va + d * d / vb;
  }
  return 0.5 * acc;
}

double w2_squared(const DiagonalGaussian& a, const DiagonalGaussian& b) {
  require_same_dim("w2_squared", a, b);
  double acc = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    const double dm = a.mu()[j] - b.mu()[j];
    const double ds = a.sigma()[j] - b.sigma()[j];
    acc += dm * dm + ds * ds;
  }
  return acc;
}

double distance(Metric metric, const DiagonalGaussian& a, const DiagonalGaussian& b) {
  return metric == Metric::skl ? skl(a, b) : w2_squared(a, b);
}

double vib_kl(const DiagonalGaussian& g) {
  double acc = 0.0;
  for (std::size_t j = 0; j < g.dim(); ++j) {
    const double m = g.mu()[j];
    const double v = g.sigma()[j] * g.sigma()[j];
    acc += m * m + v - std::log(v) - 1.0;
  }
  return 0.5 * acc;
}

double uncertainty_score(const DiagonalGaussian& g) {
  if (g.dim() == 0) throw std::invalid_argument("uncertainty_score: empty Gaussian");
  double inv = 0.0;
  for (double s : g.sigma()) inv += 1.0 / s;
  return static_cast<double>(g.dim()) / inv;
}

// ---------------------------------------------------------------------------

Tensor draw_noise(std::size_t batch, std::size_t dim, std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("draw_noise: sample count T must be at least 1");
  Tensor eps(batch * count, dim);
  for (double& e : eps.data) e = rng.normal();
  return eps;
}

Node reparameterize(const GaussianBatch& g, const Tensor& epsilon, std::size_t count) {
  if (count == 0) throw std::invalid_argument("reparameterize: sample count T must be at least 1");
  if (epsilon.rows != g.size() * count || epsilon.cols != g.dim()) {
    throw ShapeError("reparameterize: epsilon is " + epsilon.shape_str() + ", expected " +
                     std::to_string(g.size() * count) + "x" + std::to_string(g.dim()));
  }
  Tape& t = g.mu.tape();
  Node eps = t.constant(epsilon);
  return repeat_rows(g.mu, count) + repeat_rows(g.sigma, count) * eps;
}

namespace {

void require_same_batch(const char* op, const GaussianBatch& a, const GaussianBatch& b) {
  if (!a.mu.value().same_shape(b.mu.value()) || !a.sigma.value().same_shape(a.mu.value()) ||
      !b.sigma.value().same_shape(b.mu.value())) {
    throw ShapeError(std::string(op) + ": incompatible batches " + a.mu.value().shape_str() + " and " +
                     b.mu.value().shape_str());
  }
}

}  // namespace

Node skl(const GaussianBatch& a, const GaussianBatch& b) {
  require_same_batch("skl", a, b);
  Node va = square(clamp_min(a.sigma, kSigmaFloor));
  Node vb = square(clamp_min(b.sigma, kSigmaFloor));
  Node d2 = square(a.mu - b.mu);
  Node terms = shift(va / vb + vb / va, -2.0) + d2 / va + d2 / vb;
  return scale(sum_axis(terms, Axis::cols), 0.5);
}

Node w2_squared(const GaussianBatch& a, const GaussianBatch& b) {
  require_same_batch("w2_squared", a, b);
  return sum_axis(square(a.mu - b.mu) + square(a.sigma - b.sigma), Axis::cols);
}

Node distance(Metric metric, const GaussianBatch& a, const GaussianBatch& b) {
  return metric == Metric::skl ? skl(a, b) : w2_squared(a, b);
}

Node vib_kl(const GaussianBatch& g) {
  Node v = square(g.sigma);
  Node terms = shift(square(g.mu) + v - log(v), -1.0);
  return scale(sum_axis(terms, Axis::cols), 0.5);
}

GaussianBatch gather(const GaussianBatch& g, std::span<const std::size_t> rows) {
  return {gather_rows(g.mu, rows), gather_rows(g.sigma, rows)};
}

DiagonalGaussian row_gaussian(const Tensor& mu, const Tensor& sigma, std::size_t row) {
  if (!mu.same_shape(sigma) || row >= mu.rows) throw ShapeError("row_gaussian: bad row or shapes");
  const auto b = mu.data.begin() + static_cast<std::ptrdiff_t>(row * mu.cols);
  const auto s = sigma.data.begin() + static_cast<std::ptrdiff_t>(row * sigma.cols);
  return DiagonalGaussian(std::vector<double>(b, b + static_cast<std::ptrdiff_t>(mu.cols)),
                          std::vector<double>(s, s + static_cast<std::ptrdiff_t>(sigma.cols)));
}

}  // namespace poe
