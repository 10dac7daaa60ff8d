#pragma once

// Direct, classification and ranking regression heads.
//
// The tape losses take a block of sampled embeddings z with T consecutive
// rows per example (the layout produced by reparameterize) and return the
// mean over examples of the per-example Monte-Carlo average. With one
// example they are exactly the per-example losses. The value-level
// point_loss_* functions evaluate the deterministic losses on a single
// point embedding.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "poe/autodiff.hpp"
#include "poe/bins.hpp"
#include "poe/rng.hpp"

namespace poe {

enum class HeadKind { direct, classification, ranking };

std::string_view to_string(HeadKind k);
HeadKind parse_head_kind(std::string_view s);

// Weight layout (column-major with respect to the classifiers):
//   direct          D x 1        column 0 is w
//   classification  D x C        column c-1 is w_c
//   ranking         D x 2(C-1)   columns 2(k-1), 2(k-1)+1 are w_{k,0}, w_{k,1}
struct HeadParams {
  HeadKind kind = HeadKind::classification;
  std::size_t dim = 0;
  int classes = 0;
  Tensor weights;

  static std::size_t output_width(HeadKind kind, int classes);
  static HeadParams zeros(HeadKind kind, std::size_t dim, int classes);
  // Uniform(-1/sqrt(D), 1/sqrt(D)) initialization.
  static HeadParams random(HeadKind kind, std::size_t dim, int classes, Rng& rng);
  void validate() const;
};

// bits[k-1] = [class_index > k] for k = 1..C-1.
struct RankLabels {
  std::vector<std::uint8_t> bits;

  // Throws std::invalid_argument unless bits are 1...1 0...0.
  void validate() const;
  int class_index() const;
};

RankLabels make_rank_labels(int class_index, int classes);

struct HeadBinding {
  HeadKind kind;
  int classes;
  Node weights;
};

HeadBinding bind(Tape& tape, const HeadParams& head, bool requires_grad);

Node loss_direct(const HeadBinding& head, Node z, std::span<const double> targets, std::size_t samples);
Node loss_classification(const HeadBinding& head, Node z, std::span<const int> classes, std::size_t samples);
Node loss_ranking(const HeadBinding& head, Node z, std::span<const RankLabels> labels, std::size_t samples);

// Deterministic losses on one point embedding.
double point_loss_direct(const HeadParams& head, std::span<const double> z, double y);
double point_loss_classification(const HeadParams& head, std::span<const double> z, int class_index);
double point_loss_ranking(const HeadParams& head, std::span<const double> z, const RankLabels& labels);

// head output z^T W as a row of length output_width().
std::vector<double> head_outputs(const HeadParams& head, std::span<const double> z);

enum class ClassDecode { argmax, expectation };

struct Decoded {
  int class_index = 1;
  double estimate = 0.0;
};

// direct: estimate = w^T z, class = nearest bin center.
// classification: argmax class (lowest index on ties), estimate = its center;
//   with ClassDecode::expectation the estimate is the softmax-weighted center.
// ranking: class = 1 + sum_k b_k with b_k = [logit_{k,1} > logit_{k,0}].
Decoded decode(const HeadParams& head, std::span<const double> z, const BinLayout& bins,
               ClassDecode rule = ClassDecode::argmax);

}  // namespace poe
