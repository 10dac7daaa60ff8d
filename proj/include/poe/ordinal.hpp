#pragma once

// Ordinal distribution constraint: triplet mining, the hinge loss over
// distribution distances, and the violation-rate diagnostic.

#include <cstdint>
#include <span>
#include <vector>

#include "poe/autodiff.hpp"
#include "poe/gaussian.hpp"

namespace poe {

// Batch indices with |y_l - y_m| < |y_l - y_n|.
struct Triplet {
  std::size_t l = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct OrdinalConfig {
  Metric metric = Metric::skl;
  double margin = 5.0;

  void validate() const;
};

// Default margins: 5 for SKL, 100 for squared 2-Wasserstein.
double default_margin(Metric metric);

bool in_ordinal_set(std::span<const double> labels, const Triplet& t);

// One triplet per anchor l: m is the next sample (wrapping at the end), n is
// the remaining sample whose label distance to l is closest to |y_l - y_m|
// without being equal (lowest index wins ties). m and n swap roles when
// needed so the triplet lies in the ordinal set; anchors without a candidate
// are skipped. Throws std::invalid_argument for batches smaller than 3.
std::vector<Triplet> mine_triplets(std::span<const double> labels);

// Mean hinge max(0, d(l,m) + margin - d(l,n)) over the triplets, 0 if none.
Node ordinal_loss(const GaussianBatch& batch, std::span<const Triplet> triplets, const OrdinalConfig& cfg);
double ordinal_loss(std::span<const DiagonalGaussian> gaussians, std::span<const Triplet> triplets,
                    const OrdinalConfig& cfg);

// Fraction of ordinal-set triplets with d(l,m) >= d(l,n). When the set has at
// most `budget` members it is enumerated; otherwise `budget` members are drawn
// uniformly with the given seed. Label ties are never counted. Returns 0 when
// the set is empty.
double violation_rate(std::span<const DiagonalGaussian> gaussians, std::span<const double> labels, Metric metric,
                      std::size_t budget = 100000, std::uint64_t seed = 0);

}  // namespace poe
