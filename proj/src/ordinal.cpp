#include "poe/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "poe/rng.hpp"

namespace poe {

void OrdinalConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("OrdinalConfig: margin must be positive");
}

double default_margin(Metric metric) { return metric == Metric::skl ? 5.0 : 100.0; }

bool in_ordinal_set(std::span<const double> labels, const Triplet& t) {
  return std::abs(labels[t.l] - labels[t.m]) < std::abs(labels[t.l] - labels[t.n]);
}

std::vector<Triplet> mine_triplets(std::span<const double> labels) {
  const std::size_t N = labels.size();
  if (N < 3) throw std::invalid_argument("mine_triplets: batch of " + std::to_string(N) + " is smaller than 3");
  std::vector<Triplet> out;
  out.reserve(N);
  for (std::size_t l = 0; l < N; ++l) {
    const std::size_t m = (l + 1) % N;
    const double dm = std::abs(labels[l] - labels[m]);
    std::size_t best = N;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < N; ++k) {
      if (k == l || k == m) continue;
      const double dk = std::abs(labels[l] - labels[k]);
      if (dk == dm) continue;
      const double gap = std::abs(dm - dk);
      if (gap < best_gap) {
        best_gap = gap;
        best = k;
      }
    }
    if (best == N) continue;
    if (dm < std::abs(labels[l] - labels[best])) {
      out.push_back({l, m, best});
    } else {
      out.push_back({l, best, m});
    }
  }
  return out;
}

namespace {

void check_indices(std::size_t size, std::span<const Triplet> triplets) {
  for (const Triplet& t : triplets) {
    if (t.l >= size || t.m >= size || t.n >= size) {
      throw std::out_of_range("ordinal_loss: triplet (" + std::to_string(t.l) + ", " + std::to_string(t.m) + ", " +
                              std::to_string(t.n) + ") out of range for batch of " + std::to_string(size));
    }
  }
}

}  // namespace

Node ordinal_loss(const GaussianBatch& batch, std::span<const Triplet> triplets, const OrdinalConfig& cfg) {
  cfg.validate();
  check_indices(batch.size(), triplets);
  Tape& tape = batch.mu.tape();
  if (triplets.empty()) return tape.constant(0.0);
  std::vector<std::size_t> ls, ms, ns;
  for (const Triplet& t : triplets) {
    ls.push_back(t.l);
    ms.push_back(t.m);
    ns.push_back(t.n);
  }
  const GaussianBatch anchor = gather(batch, ls);
  const Node d_near = distance(cfg.metric, anchor, gather(batch, ms));
  const Node d_far = distance(cfg.metric, anchor, gather(batch, ns));
  return mean(relu(shift(d_near - d_far, cfg.margin)));
}

double ordinal_loss(std::span<const DiagonalGaussian> gaussians, std::span<const Triplet> triplets,
                    const OrdinalConfig& cfg) {
  cfg.validate();
  check_indices(gaussians.size(), triplets);
  if (triplets.empty()) return 0.0;
  double acc = 0.0;
  for (const Triplet& t : triplets) {
    const double h = distance(cfg.metric, gaussians[t.l], gaussians[t.m]) + cfg.margin -
                     distance(cfg.metric, gaussians[t.l], gaussians[t.n]);
    acc += std::max(0.0, h);
  }
  return acc / static_cast<double>(triplets.size());
}

double violation_rate(std::span<const DiagonalGaussian> gaussians, std::span<const double> labels, Metric metric,
                      std::size_t budget, std::uint64_t seed) {
  const std::size_t N = labels.size();
  if (gaussians.size() != N) throw std::invalid_argument("violation_rate: gaussians/labels length mismatch");
  if (N < 3) throw std::invalid_argument("violation_rate: need at least 3 examples");

  std::size_t valid = 0, violated = 0;
  auto visit = [&](std::size_t l, std::size_t a, std::size_t b) {
    const double da = std::abs(labels[l] - labels[a]);
    const double db = std::abs(labels[l] - labels[b]);
    if (da == db) return false;
    const std::size_t m = da < db ? a : b;
    const std::size_t n = da < db ? b : a;
    ++valid;
    if (distance(metric, gaussians[l], gaussians[m]) >= distance(metric, gaussians[l], gaussians[n])) ++violated;
    return true;
  };

  // Each anchor with an unordered pair {a, b} is one candidate.
  const double candidates = static_cast<double>(N) * static_cast<double>(N - 1) * static_cast<double>(N - 2) / 2.0;
  if (candidates <= static_cast<double>(budget)) {
    for (std::size_t l = 0; l < N; ++l)
      for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = a + 1; b < N; ++b)
          if (a != l && b != l) visit(l, a, b);
  } else {
    Rng rng(seed, "violation");
    const std::size_t max_draws = budget * 20;
    for (std::size_t draw = 0; draw < max_draws && valid < budget; ++draw) {
      const std::size_t l = rng.index(N);
      std::size_t a = rng.index(N - 1);
      if (a >= l) ++a;
      std::size_t b = rng.index(N - 2);
      for (std::size_t skip : {std::min(l, a), std::max(l, a)})
        if (b >= skip) ++b;
      visit(l, a, b);
    }
  }
  return valid == 0 ? 0.0 : static_cast<double>(violated) / static_cast<double>(valid);
}

}  // namespace poe
