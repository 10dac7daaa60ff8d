#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D array (scalars are 1x1, row vectors 1xn). A Tape owns
// all nodes of one graph in creation order, which is also a topological
// order, so backward is a single reverse sweep. Node is a lightweight handle
// (tape pointer + index) and stays valid as long as the tape lives.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace poe {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values);

  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  scale,
  shift,
  exp,
  log,
  square,
  sqrt,
  relu,
  clamp_min,
  sum,
  mean,
  sum_axis,
  max_over_axis,
  log_sum_exp,
  broadcast,
  repeat_rows,
  concat,
  slice,
  gather_rows,
};

const char* op_name(OpKind op);

// Reduction axis: `rows` collapses the row dimension (m x n -> 1 x n),
// `cols` collapses the column dimension (m x n -> m x 1).
enum class Axis : std::uint8_t { rows, cols };

class Tape;

class Node {
 public:
  Node() = default;
  Node(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;  // empty (0x0) unless requires_grad()
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Adjoint = std::function<void(Tape&, std::size_t self)>;

  struct Record {
    OpKind op = OpKind::leaf;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Adjoint adjoint;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node leaf(Tensor value, bool requires_grad = false);
  Node constant(Tensor value) { return leaf(std::move(value), false); }
  Node constant(double v) { return leaf(Tensor::scalar(v), false); }

  // Appends a computed node. requires_grad is inherited from the parents.
  Node push(OpKind op, Tensor value, std::vector<std::size_t> parents, Adjoint adjoint);

  std::size_t size() const { return records_.size(); }
  Record& record(std::size_t id) { return records_[id]; }
  const Record& record(std::size_t id) const { return records_[id]; }

  // Accumulates `delta` into the gradient of node `id` if it tracks gradients.
  Tensor* grad_target(std::size_t id);

  // Propagates d(root)/d(node) into every gradient-tracking node. A tape can
  // be swept once; call reset_grads() before sweeping again.
  void backward(Node root);
  void reset_grads();
  bool swept() const { return swept_; }

  // Drops every node but keeps their buffers for reuse by alloc(), so a
  // training loop can rebuild the same graph shape without reallocating.
  // Invalidates all existing Nodes.
  void clear();
  Tensor alloc(std::size_t rows, std::size_t cols);  // zero-filled

  // Non-smooth primitives (relu, clamp, max) record on which side of their
  // kink each element fell: -1, 0 (exactly at the kink) or +1. Two forward
  // passes with equal signatures are on the same smooth piece.
  const std::vector<std::int8_t>& kink_signature() const { return kinks_; }
  void note_kink(double offset) { kinks_.push_back(offset > 0 ? 1 : (offset < 0 ? -1 : 0)); }

 private:
  std::vector<Record> records_;
  std::vector<std::int8_t> kinks_;
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool_;
  bool swept_ = false;
};

// Primitives. All of them validate shapes and throw ShapeError naming the op.
Node matmul(Node a, Node b);
Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);
Node div(Node a, Node b);
Node scale(Node a, double s);
Node shift(Node a, double s);
Node exp(Node a);
Node log(Node a);
Node square(Node a);
Node sqrt(Node a);
Node relu(Node a);
Node clamp_min(Node a, double lo);
Node sum(Node a);
Node mean(Node a);
Node sum_axis(Node a, Axis axis);
Node max_over_axis(Node a, Axis axis);
Node log_sum_exp(Node a);  // row-wise, m x n -> m x 1, max-shifted
Node broadcast(Node a, std::size_t rows, std::size_t cols);
Node repeat_rows(Node a, std::size_t times);  // each row repeated `times` consecutively
Node concat(std::span<const Node> parts);     // along columns
Node slice(Node a, std::size_t col_begin, std::size_t col_end);
Node gather_rows(Node a, std::span<const std::size_t> index);

inline Node operator+(Node a, Node b) { return add(a, b); }
inline Node operator-(Node a, Node b) { return sub(a, b); }
inline Node operator*(Node a, Node b) { return mul(a, b); }
inline Node operator/(Node a, Node b) { return div(a, b); }

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::vector<double> per_param_max;  // max relative discrepancy per parameter
  std::size_t checked = 0;
  std::size_t excluded_kinks = 0;  // components straddling a non-smooth point
  GradCheckEntry worst;
};

// Builds the loss on a fresh tape from leaves bound to `params`.
using LossBuilder = std::function<Node(Tape&, std::span<const Node> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

// Compares reverse-mode gradients against central differences. The builder
// must be deterministic (any sampling noise frozen). Components whose +/-step
// evaluations fall on different sides of a kink are excluded and counted.
// Throws DomainError if the loss is non-finite at any evaluation.
GradCheckReport grad_check(const LossBuilder& loss_fn, std::span<const Tensor> params,
                           const GradCheckOptions& opts = {});

}  // namespace poe
