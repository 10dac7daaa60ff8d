#include "poe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace poe {

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("Tensor: " + std::to_string(data.size()) + " values for shape " +
                     std::to_string(r) + "x" + std::to_string(c));
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(n, 1, std::move(values));
}

std::string Tensor::shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul_elementwise";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::relu: return "relu";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::max_over_axis: return "max_over_axis";
    case OpKind::log_sum_exp: return "log_sum_exp";
    case OpKind::broadcast: return "broadcast";
    case OpKind::repeat_rows: return "repeat_rows";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::gather_rows: return "gather_rows";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Node / Tape

const Tensor& Node::value() const { return tape_->record(id_).value; }
const Tensor& Node::grad() const { return tape_->record(id_).grad; }
bool Node::requires_grad() const { return tape_->record(id_).requires_grad; }

double Node::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item: node is " + v.shape_str() + ", not scalar");
  return v.data[0];
}

Node Tape::leaf(Tensor value, bool requires_grad) {
  Record r;
  r.op = OpKind::leaf;
  if (requires_grad) r.grad = alloc(value.rows, value.cols);
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  records_.push_back(std::move(r));
  return Node(this, records_.size() - 1);
}

Node Tape::push(OpKind op, Tensor value, std::vector<std::size_t> parents, Adjoint adjoint) {
  Record r;
  r.op = op;
  for (std::size_t p : parents) {
    if (p >= records_.size()) throw TapeError(std::string(op_name(op)) + ": dangling parent");
    r.requires_grad = r.requires_grad || records_[p].requires_grad;
  }
  if (r.requires_grad) r.grad = alloc(value.rows, value.cols);
  r.value = std::move(value);
  r.parents = std::move(parents);
  if (r.requires_grad) r.adjoint = std::move(adjoint);
  records_.push_back(std::move(r));
  return Node(this, records_.size() - 1);
}

Tensor* Tape::grad_target(std::size_t id) {
  Record& r = records_[id];
  return r.requires_grad ? &r.grad : nullptr;
}

void Tape::backward(Node root) {
  if (&root.tape() != this) throw TapeError("backward: root belongs to another tape");
  if (swept_) throw TapeError("backward: tape already swept; reset_grads() before reuse");
  Record& top = records_[root.id()];
  if (top.value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + top.value.shape_str());
  }
  swept_ = true;
  if (!top.requires_grad) return;
  top.grad.data[0] += 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Record& r = records_[i];
    if (r.requires_grad && r.adjoint) r.adjoint(*this, i);
  }
}

Tensor Tape::alloc(std::size_t rows, std::size_t cols) {
  auto it = pool_.find(rows * cols);
  if (it == pool_.end() || it->second.empty()) return Tensor(rows, cols);
  Tensor out;
  out.rows = rows;
  out.cols = cols;
  out.data = std::move(it->second.back());
  it->second.pop_back();
  std::fill(out.data.begin(), out.data.end(), 0.0);
  return out;
}

void Tape::clear() {
  // Keep at most as many buffers per size as this graph used, so leaves
  // created from outside the pool do not accumulate across steps.
  std::unordered_map<std::size_t, std::size_t> used;
  auto recycle = [&](Tensor& t) {
    if (t.data.empty()) return;
    ++used[t.size()];
    pool_[t.size()].push_back(std::move(t.data));
  };
  for (Record& r : records_) {
    recycle(r.value);
    recycle(r.grad);
  }
  for (auto& [size, buffers] : pool_) {
    const auto it = used.find(size);
    const std::size_t keep = it == used.end() ? 0 : it->second;
    if (buffers.size() > keep) buffers.resize(keep);
  }
  records_.clear();
  kinks_.clear();
  swept_ = false;
}

void Tape::reset_grads() {
  for (Record& r : records_) std::fill(r.grad.data.begin(), r.grad.data.end(), 0.0);
  swept_ = false;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

[[noreturn]] void shape_fail(OpKind op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

void require_same_tape(OpKind op, Node a, Node b) {
  if (&a.tape() != &b.tape()) throw TapeError(std::string(op_name(op)) + ": operands on different tapes");
}

void require_same_shape(OpKind op, Node a, Node b) {
  require_same_tape(op, a, b);
  if (!a.value().same_shape(b.value())) shape_fail(op, a.value(), b.value());
}

template <class F>
Tensor map(Tape& t, const Tensor& a, F f) {
  Tensor out = t.alloc(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

Tensor copy_of(Node a) {
  Tensor out = a.tape().alloc(a.rows(), a.cols());
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  return out;
}

// Elementwise unary op whose local derivative depends on (input, output).
template <class Fwd, class Deriv>
Node unary(OpKind op, Node a, Fwd fwd, Deriv deriv) {
  Tape& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(op, map(t, a.value(), fwd), {ia}, [ia, deriv](Tape& tp, std::size_t self) {
    Tensor* ga = tp.grad_target(ia);
    if (!ga) return;
    const Tensor& x = tp.record(ia).value;
    const Tensor& y = tp.record(self).value;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * deriv(x.data[i], y.data[i]);
  });
}

}  // namespace

Node matmul(Node a, Node b) {
  require_same_tape(OpKind::matmul, a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols != B.rows) shape_fail(OpKind::matmul, A, B);
  const std::size_t m = A.rows, k = A.cols, n = B.cols;
  Tensor C = a.tape().alloc(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &C.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B.data[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(OpKind::matmul, std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& G = tp.record(self).grad;
    if (Tensor* gA = tp.grad_target(ia)) {
      const Tensor& B = tp.record(ib).value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G.data[i * n + j] * B.data[p * n + j];
          gA->data[i * k + p] += acc;
        }
    }
    if (Tensor* gB = tp.grad_target(ib)) {
      const Tensor& A = tp.record(ia).value;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gB->data[p * n + j] += av * G.data[i * n + j];
        }
    }
  });
}

Node add(Node a, Node b) {
  require_same_shape(OpKind::add, a, b);
  Tensor out = copy_of(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(OpKind::add, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.record(self).grad;
    for (std::size_t id : {ia, ib})
      if (Tensor* t = tp.grad_target(id))
        for (std::size_t i = 0; i < g.size(); ++i) t->data[i] += g.data[i];
  });
}

Node sub(Node a, Node b) {
  require_same_shape(OpKind::sub, a, b);
  Tensor out = copy_of(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(OpKind::sub, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.record(self).grad;
    if (Tensor* t = tp.grad_target(ia))
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] += g.data[i];
    if (Tensor* t = tp.grad_target(ib))
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] -= g.data[i];
  });
}

Node mul(Node a, Node b) {
  require_same_shape(OpKind::mul, a, b);
  Tensor out = copy_of(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(OpKind::mul, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.record(self).grad;
    if (Tensor* t = tp.grad_target(ia)) {
      const Tensor& bv = tp.record(ib).value;
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] += g.data[i] * bv.data[i];
    }
    if (Tensor* t = tp.grad_target(ib)) {
      const Tensor& av = tp.record(ia).value;
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] += g.data[i] * av.data[i];
    }
  });
}

Node div(Node a, Node b) {
  require_same_shape(OpKind::div, a, b);
  Tensor out = copy_of(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = b.value().data[i];
    if (d == 0.0) throw DomainError("div: division by zero at element " + std::to_string(i));
    out.data[i] /= d;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(OpKind::div, std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.record(self).grad;
    const Tensor& y = tp.record(self).value;
    const Tensor& bv = tp.record(ib).value;
    if (Tensor* t = tp.grad_target(ia))
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] += g.data[i] / bv.data[i];
    if (Tensor* t = tp.grad_target(ib))
      for (std::size_t i = 0; i < g.size(); ++i) t->data[i] -= g.data[i] * y.data[i] / bv.data[i];
  });
}

Node scale(Node a, double s) {
  return unary(OpKind::scale, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Node shift(Node a, double s) {
  return unary(OpKind::shift, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Node exp(Node a) {
  return unary(OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Node log(Node a) {
  const Tensor& v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v.data[i] > 0.0))
      throw DomainError("log: non-positive input " + std::to_string(v.data[i]) + " at element " +
                        std::to_string(i));
  return unary(OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Node square(Node a) {
  return unary(OpKind::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Node sqrt(Node a) {
  const Tensor& v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v.data[i] > 0.0))
      throw DomainError("sqrt: non-positive input " + std::to_string(v.data[i]) + " at element " +
                        std::to_string(i));
  return unary(OpKind::sqrt, a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Node relu(Node a) {
  for (double x : a.value().data) a.tape().note_kink(x);
  return unary(OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node clamp_min(Node a, double lo) {
  for (double x : a.value().data) a.tape().note_kink(x - lo);
  return unary(OpKind::clamp_min, a, [lo](double x) { return x > lo ? x : lo; },
               [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Node sum(Node a) {
  double s = 0.0;
  for (double x : a.value().data) s += x;
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::sum, Tensor::scalar(s), {ia}, [ia](Tape& tp, std::size_t self) {
    if (Tensor* t = tp.grad_target(ia)) {
      const double g = tp.record(self).grad.data[0];
      for (double& x : t->data) x += g;
    }
  });
}

Node mean(Node a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double x : a.value().data) s += x;
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::mean, Tensor::scalar(s / static_cast<double>(n)), {ia},
                       [ia, n](Tape& tp, std::size_t self) {
                         if (Tensor* t = tp.grad_target(ia)) {
                           const double g = tp.record(self).grad.data[0] / static_cast<double>(n);
                           for (double& x : t->data) x += g;
                         }
                       });
}

Node sum_axis(Node a, Axis axis) {
  const Tensor& v = a.value();
  const std::size_t m = v.rows, n = v.cols;
  Tensor out = axis == Axis::rows ? a.tape().alloc(1, n) : a.tape().alloc(m, 1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[axis == Axis::rows ? j : i] += v.data[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::sum_axis, std::move(out), {ia}, [ia, axis, m, n](Tape& tp, std::size_t self) {
    Tensor* t = tp.grad_target(ia);
    if (!t) return;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) t->data[i * n + j] += g.data[axis == Axis::rows ? j : i];
  });
}

Node max_over_axis(Node a, Axis axis) {
  const Tensor& v = a.value();
  const std::size_t m = v.rows, n = v.cols;
  if (m == 0 || n == 0) throw ShapeError("max_over_axis: empty input " + v.shape_str());
  const std::size_t outer = axis == Axis::rows ? n : m;
  const std::size_t inner = axis == Axis::rows ? m : n;
  auto at = [&](std::size_t o, std::size_t k) { return axis == Axis::rows ? k * n + o : o * n + k; };
  Tensor out = axis == Axis::rows ? a.tape().alloc(1, n) : a.tape().alloc(m, 1);
  std::vector<std::size_t> arg(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = at(o, 0);
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < inner; ++k) {
      const std::size_t idx = at(o, k);
      if (v.data[idx] > v.data[best]) {
        second = v.data[best];
        best = idx;
      } else {
        second = std::max(second, v.data[idx]);
      }
    }
    arg[o] = best;
    out.data[o] = v.data[best];
    if (inner > 1) a.tape().note_kink(v.data[best] - second);
  }
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::max_over_axis, std::move(out), {ia},
                       [ia, arg = std::move(arg)](Tape& tp, std::size_t self) {
                         Tensor* t = tp.grad_target(ia);
                         if (!t) return;
                         const Tensor& g = tp.record(self).grad;
                         for (std::size_t o = 0; o < arg.size(); ++o) t->data[arg[o]] += g.data[o];
                       });
}

Node log_sum_exp(Node a) {
  const Tensor& v = a.value();
  const std::size_t m = v.rows, n = v.cols;
  if (n == 0) throw ShapeError("log_sum_exp: empty rows in " + v.shape_str());
  Tensor out = a.tape().alloc(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &v.data[i * n];
    const double hi = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - hi);
    out.data[i] = hi + std::log(s);
  }
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::log_sum_exp, std::move(out), {ia}, [ia, m, n](Tape& tp, std::size_t self) {
    Tensor* t = tp.grad_target(ia);
    if (!t) return;
    const Tensor& x = tp.record(ia).value;
    const Tensor& y = tp.record(self).value;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        t->data[i * n + j] += g.data[i] * std::exp(x.data[i * n + j] - y.data[i]);
  });
}

Node broadcast(Node a, std::size_t rows, std::size_t cols) {
  const Tensor& v = a.value();
  const bool row_ok = v.rows == rows || v.rows == 1;
  const bool col_ok = v.cols == cols || v.cols == 1;
  if (!row_ok || !col_ok) shape_fail(OpKind::broadcast, v, Tensor(rows, cols));
  const std::size_t sr = v.rows, sc = v.cols;
  Tensor out = a.tape().alloc(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out.data[i * cols + j] = v.data[(sr == 1 ? 0 : i) * sc + (sc == 1 ? 0 : j)];
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::broadcast, std::move(out), {ia}, [ia, rows, cols, sr, sc](Tape& tp, std::size_t self) {
    Tensor* t = tp.grad_target(ia);
    if (!t) return;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        t->data[(sr == 1 ? 0 : i) * sc + (sc == 1 ? 0 : j)] += g.data[i * cols + j];
  });
}

Node repeat_rows(Node a, std::size_t times) {
  if (times == 0) throw ShapeError("repeat_rows: zero repetitions");
  const Tensor& v = a.value();
  const std::size_t m = v.rows, n = v.cols;
  Tensor out = a.tape().alloc(m * times, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(&v.data[i * n], n, &out.data[(i * times + t) * n]);
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::repeat_rows, std::move(out), {ia}, [ia, m, n, times](Tape& tp, std::size_t self) {
    Tensor* tg = tp.grad_target(ia);
    if (!tg) return;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < n; ++j) tg->data[i * n + j] += g.data[(i * times + t) * n + j];
  });
}

Node concat(std::span<const Node> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Node& p : parts) {
    require_same_tape(OpKind::concat, parts[0], p);
    if (p.rows() != m) shape_fail(OpKind::concat, parts[0].value(), p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
    n += p.cols();
  }
  Tensor out = parts[0].tape().alloc(m, n);
  std::size_t off = 0;
  for (const Node& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(&v.data[i * v.cols], v.cols, &out.data[i * n + off]);
    off += v.cols;
  }
  std::vector<std::size_t> parents = ids;
  return parts[0].tape().push(OpKind::concat, std::move(out), std::move(parents),
                              [ids, widths, m, n](Tape& tp, std::size_t self) {
                                const Tensor& g = tp.record(self).grad;
                                std::size_t off = 0;
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  if (Tensor* t = tp.grad_target(ids[k]))
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < widths[k]; ++j)
                                        t->data[i * widths[k] + j] += g.data[i * n + off + j];
                                  off += widths[k];
                                }
                              });
}

Node slice(Node a, std::size_t col_begin, std::size_t col_end) {
  const Tensor& v = a.value();
  if (col_begin >= col_end || col_end > v.cols) {
    throw ShapeError("slice: columns [" + std::to_string(col_begin) + ", " + std::to_string(col_end) +
                     ") out of range for " + v.shape_str());
  }
  const std::size_t m = v.rows, n = v.cols, w = col_end - col_begin;
  Tensor out = a.tape().alloc(m, w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&v.data[i * n + col_begin], w, &out.data[i * w]);
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::slice, std::move(out), {ia}, [ia, m, n, w, col_begin](Tape& tp, std::size_t self) {
    Tensor* t = tp.grad_target(ia);
    if (!t) return;
    const Tensor& g = tp.record(self).grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) t->data[i * n + col_begin + j] += g.data[i * w + j];
  });
}

Node gather_rows(Node a, std::span<const std::size_t> index) {
  const Tensor& v = a.value();
  const std::size_t n = v.cols;
  Tensor out = a.tape().alloc(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= v.rows) {
      throw ShapeError("gather_rows: row " + std::to_string(index[r]) + " out of range for " + v.shape_str());
    }
    std::copy_n(&v.data[index[r] * n], n, &out.data[r * n]);
  }
  const std::size_t ia = a.id();
  return a.tape().push(OpKind::gather_rows, std::move(out), {ia},
                       [ia, n, idx = std::vector<std::size_t>(index.begin(), index.end())](Tape& tp, std::size_t self) {
                         Tensor* t = tp.grad_target(ia);
                         if (!t) return;
                         const Tensor& g = tp.record(self).grad;
                         for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t j = 0; j < n; ++j) t->data[idx[r] * n + j] += g.data[r * n + j];
                       });
}

// ---------------------------------------------------------------------------
// Finite-difference check

namespace {

struct Evaluation {
  double value;
  std::vector<std::int8_t> kinks;
};

Evaluation evaluate(const LossBuilder& loss_fn, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Node> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p, false));
  Node loss = loss_fn(tape, leaves);
  const double v = loss.item();
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "grad_check: non-finite loss " << v << " on a " << tape.size() << "-node graph";
    throw DomainError(msg.str());
  }
  return {v, tape.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss_fn, std::span<const Tensor> params,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  report.per_param_max.assign(params.size(), 0.0);

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Node> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p, true));
    Node loss = loss_fn(tape, leaves);
    if (!std::isfinite(loss.item())) throw DomainError("grad_check: non-finite loss at the base point");
    tape.backward(loss);
    for (const Node& l : leaves) analytic.push_back(l.grad());
  }

  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p].data[i];
      work[p].data[i] = orig + opts.step;
      const Evaluation plus = evaluate(loss_fn, work);
      work[p].data[i] = orig - opts.step;
      const Evaluation minus = evaluate(loss_fn, work);
      work[p].data[i] = orig;
      if (plus.kinks != minus.kinks) {
        ++report.excluded_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.step);
      const double a = analytic[p].data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      report.per_param_max[p] = std::max(report.per_param_max[p], rel);
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {p, i, a, numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace poe
