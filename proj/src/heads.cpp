#include "poe/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace poe {

int BinLayout::bin(double y) const {
  if (y <= y_min) return 1;
  if (y >= y_max) return classes;
  const int k = static_cast<int>(std::floor((y - y_min) / width()));
  return std::clamp(k + 1, 1, classes);
}

double BinLayout::center(int class_index) const { return y_min + (class_index - 0.5) * width(); }

std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::direct: return "direct";
    case HeadKind::classification: return "classification";
    case HeadKind::ranking: return "ranking";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "direct") return HeadKind::direct;
  if (s == "classification") return HeadKind::classification;
  if (s == "ranking") return HeadKind::ranking;
  throw std::invalid_argument("unknown head kind '" + std::string(s) +
                              "' (expected direct, classification or ranking)");
}

std::size_t HeadParams::output_width(HeadKind kind, int classes) {
  switch (kind) {
    case HeadKind::direct: return 1;
    case HeadKind::classification: return static_cast<std::size_t>(classes);
    case HeadKind::ranking: return 2 * static_cast<std::size_t>(classes - 1);
  }
  return 0;
}

HeadParams HeadParams::zeros(HeadKind kind, std::size_t dim, int classes) {
  if (classes < 2 && kind != HeadKind::direct) throw std::invalid_argument("HeadParams: need at least 2 classes");
  HeadParams h{kind, dim, classes, Tensor(dim, output_width(kind, classes))};
  return h;
}

HeadParams HeadParams::random(HeadKind kind, std::size_t dim, int classes, Rng& rng) {
  HeadParams h = zeros(kind, dim, classes);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& w : h.weights.data) w = rng.uniform(-bound, bound);
  return h;
}

void HeadParams::validate() const {
  if (weights.rows != dim || weights.cols != output_width(kind, classes)) {
    throw ShapeError("HeadParams: " + std::string(to_string(kind)) + " head with D=" + std::to_string(dim) +
                     ", C=" + std::to_string(classes) + " expects " + std::to_string(dim) + "x" +
                     std::to_string(output_width(kind, classes)) + " weights, got " + weights.shape_str());
  }
}

void RankLabels::validate() const {
  bool seen_zero = false;
  for (std::uint8_t b : bits) {
    if (b > 1) throw std::invalid_argument("RankLabels: bits must be 0 or 1");
    if (b == 1 && seen_zero) throw std::invalid_argument("RankLabels: bits must be non-increasing");
    seen_zero = seen_zero || b == 0;
  }
}

int RankLabels::class_index() const {
  return 1 + static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

RankLabels make_rank_labels(int class_index, int classes) {
  if (classes < 2 || class_index < 1 || class_index > classes) {
    throw std::out_of_range("make_rank_labels: class " + std::to_string(class_index) + " outside [1, " +
                            std::to_string(classes) + "]");
  }
  RankLabels r;
  r.bits.resize(static_cast<std::size_t>(classes - 1));
  for (int k = 1; k < classes; ++k) r.bits[static_cast<std::size_t>(k - 1)] = class_index > k ? 1 : 0;
  return r;
}

HeadBinding bind(Tape& tape, const HeadParams& head, bool requires_grad) {
  head.validate();
  return {head.kind, head.classes, tape.leaf(head.weights, requires_grad)};
}

namespace {

void require_kind(const HeadBinding& head, HeadKind kind, const char* op) {
  if (head.kind != kind) {
    throw std::invalid_argument(std::string(op) + ": head kind is " + std::string(to_string(head.kind)) +
                                ", expected " + std::string(to_string(kind)));
  }
}

void require_rows(const char* op, Node z, std::size_t examples, std::size_t samples) {
  if (samples == 0 || examples == 0) throw std::invalid_argument(std::string(op) + ": no samples");
  if (z.rows() != examples * samples) {
    throw ShapeError(std::string(op) + ": z has " + std::to_string(z.rows()) + " rows, expected " +
                     std::to_string(examples) + " examples x " + std::to_string(samples) + " samples");
  }
}

// Negative log-softmax of the selected column of each row of `logits`.
Node picked_nll(Node logits, const Tensor& one_hot) {
  Tape& t = logits.tape();
  Node picked = sum_axis(logits * t.constant(one_hot), Axis::cols);
  return log_sum_exp(logits) - picked;
}

}  // namespace

Node loss_direct(const HeadBinding& head, Node z, std::span<const double> targets, std::size_t samples) {
  require_kind(head, HeadKind::direct, "loss_direct");
  require_rows("loss_direct", z, targets.size(), samples);
  Tensor y(z.rows(), 1);
  for (std::size_t i = 0; i < z.rows(); ++i) y.data[i] = targets[i / samples];
  Node residual = z.tape().constant(std::move(y)) - matmul(z, head.weights);
  return mean(square(residual));
}

Node loss_classification(const HeadBinding& head, Node z, std::span<const int> classes, std::size_t samples) {
  require_kind(head, HeadKind::classification, "loss_classification");
  require_rows("loss_classification", z, classes.size(), samples);
  const auto C = static_cast<std::size_t>(head.classes);
  Tensor one_hot(z.rows(), C);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const int c = classes[i / samples];
    if (c < 1 || c > head.classes) {
      throw std::out_of_range("loss_classification: class " + std::to_string(c) + " outside [1, " +
                              std::to_string(head.classes) + "]");
    }
    one_hot(i, static_cast<std::size_t>(c - 1)) = 1.0;
  }
  return mean(picked_nll(matmul(z, head.weights), one_hot));
}

Node loss_ranking(const HeadBinding& head, Node z, std::span<const RankLabels> labels, std::size_t samples) {
  require_kind(head, HeadKind::ranking, "loss_ranking");
  require_rows("loss_ranking", z, labels.size(), samples);
  const auto K = static_cast<std::size_t>(head.classes - 1);
  for (const RankLabels& r : labels) {
    if (r.bits.size() != K) {
      throw std::invalid_argument("loss_ranking: rank label has " + std::to_string(r.bits.size()) +
                                  " bits, expected " + std::to_string(K));
    }
  }
  Node logits = matmul(z, head.weights);
  Node total;
  for (std::size_t k = 0; k < K; ++k) {
    Tensor one_hot(z.rows(), 2);
    for (std::size_t i = 0; i < z.rows(); ++i) one_hot(i, labels[i / samples].bits[k]) = 1.0;
    Node term = picked_nll(slice(logits, 2 * k, 2 * k + 2), one_hot);
    total = total.valid() ? total + term : term;
  }
  return mean(total);
}

std::vector<double> head_outputs(const HeadParams& head, std::span<const double> z) {
  head.validate();
  if (z.size() != head.dim) throw ShapeError("head_outputs: embedding length mismatch");
  std::vector<double> out(head.weights.cols, 0.0);
  for (std::size_t j = 0; j < head.dim; ++j)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += z[j] * head.weights(j, c);
  return out;
}

namespace {

double log_sum_exp(std::span<const double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace

double point_loss_direct(const HeadParams& head, std::span<const double> z, double y) {
  if (head.kind != HeadKind::direct) throw std::invalid_argument("point_loss_direct: wrong head kind");
  const double r = y - head_outputs(head, z)[0];
  return r * r;
}

double point_loss_classification(const HeadParams& head, std::span<const double> z, int class_index) {
  if (head.kind != HeadKind::classification) throw std::invalid_argument("point_loss_classification: wrong head kind");
  if (class_index < 1 || class_index > head.classes) throw std::out_of_range("point_loss_classification: class");
  const std::vector<double> logits = head_outputs(head, z);
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(class_index - 1)];
}

double point_loss_ranking(const HeadParams& head, std::span<const double> z, const RankLabels& labels) {
  if (head.kind != HeadKind::ranking) throw std::invalid_argument("point_loss_ranking: wrong head kind");
  if (labels.bits.size() + 1 != static_cast<std::size_t>(head.classes))
    throw std::invalid_argument("point_loss_ranking: label length");
  const std::vector<double> logits = head_outputs(head, z);
  double loss = 0.0;
  for (std::size_t k = 0; k < labels.bits.size(); ++k) {
    const std::span<const double> pair(&logits[2 * k], 2);
    loss += log_sum_exp(pair) - pair[labels.bits[k]];
  }
  return loss;
}

Decoded decode(const HeadParams& head, std::span<const double> z, const BinLayout& bins, ClassDecode rule) {
  const std::vector<double> out = head_outputs(head, z);
  Decoded d;
  switch (head.kind) {
    case HeadKind::direct:
      d.estimate = out[0];
      d.class_index = bins.bin(out[0]);
      break;
    case HeadKind::classification: {
      const auto best = std::max_element(out.begin(), out.end());
      d.class_index = static_cast<int>(best - out.begin()) + 1;
      if (rule == ClassDecode::expectation) {
        const double lse = log_sum_exp(out);
        d.estimate = 0.0;
        for (std::size_t c = 0; c < out.size(); ++c)
          d.estimate += std::exp(out[c] - lse) * bins.center(static_cast<int>(c) + 1);
      } else {
        d.estimate = bins.center(d.class_index);
      }
      break;
    }
    case HeadKind::ranking: {
      int rank = 1;
      for (std::size_t k = 0; 2 * k + 1 < out.size(); ++k) rank += out[2 * k + 1] > out[2 * k] ? 1 : 0;
      d.class_index = rank;
      d.estimate = bins.center(rank);
      break;
    }
  }
  return d;
}

}  // namespace poe
