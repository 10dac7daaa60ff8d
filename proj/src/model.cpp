#include "poe/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "poe/config.hpp"
#include "poe/rng.hpp"

namespace poe {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::deterministic_baseline: return "deterministic-baseline";
    case Mode::p_emb: return "p-emb";
    case Mode::p_emb_ord: return "p-emb+ord";
    case Mode::p_emb_vib: return "p-emb+vib";
    case Mode::full_poe: return "full-poe";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::deterministic_baseline, Mode::p_emb, Mode::p_emb_ord, Mode::p_emb_vib, Mode::full_poe})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown mode '" + std::string(s) +
                              "' (expected deterministic-baseline, p-emb, p-emb+ord, p-emb+vib or full-poe)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(alpha >= 0.0) || !(beta >= 0.0)) fail("alpha and beta must be non-negative");
  if (samples < 1) fail("samples (T) must be at least 1");
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (classes < 2) fail("classes must be at least 2");
  if (!(y_min < y_max)) fail("y_min must be below y_max");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (effective_alpha() > 0.0 && batch_size < 3) fail("batch_size must be at least 3 when alpha > 0");
  if (!(margin > 0.0)) fail("margin must be positive");
  for (std::size_t h : hidden)
    if (h == 0) fail("hidden layer sizes must be positive");
}

// ---------------------------------------------------------------------------
// Model

namespace {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  Linear l{Tensor(in, out), Tensor(1, out)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
  for (double& b : l.bias.data) b = rng.uniform(-bound, bound);
  return l;
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& what) {
  if (t.rows != rows || t.cols != cols) {
    throw ShapeError("model: " + what + " is " + t.shape_str() + ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

}  // namespace

PoeModel PoeModel::create(const TrainConfig& cfg, std::size_t input_dim) {
  cfg.validate();
  if (input_dim == 0) throw std::invalid_argument("model: input dimension must be positive");
  Rng rng(cfg.seed, "init");
  PoeModel m;
  m.config = cfg;
  m.input_dim = input_dim;
  std::size_t width = input_dim;
  for (std::size_t h : cfg.hidden) {
    m.backbone.push_back(make_linear(width, h, rng));
    width = h;
  }
  m.mu_head = make_linear(width, cfg.embed_dim, rng);
  m.sigma_head = make_linear(width, cfg.embed_dim, rng);
  m.sigma_bn.gamma = Tensor(1, cfg.embed_dim, 1.0);
  m.sigma_bn.beta = Tensor(1, cfg.embed_dim, 0.0);
  m.sigma_bn.running_mean = Tensor(1, cfg.embed_dim, 0.0);
  m.sigma_bn.running_var = Tensor(1, cfg.embed_dim, 1.0);
  m.head = HeadParams::random(cfg.head, cfg.embed_dim, cfg.classes, rng);
  return m;
}

std::vector<Tensor*> PoeModel::parameters() {
  std::vector<Tensor*> p;
  for (Linear& l : backbone) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  for (Linear* l : {&mu_head, &sigma_head}) {
    p.push_back(&l->weight);
    p.push_back(&l->bias);
  }
  p.push_back(&sigma_bn.gamma);
  p.push_back(&sigma_bn.beta);
  p.push_back(&head.weights);
  return p;
}

std::vector<const Tensor*> PoeModel::parameters() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<PoeModel*>(this)->parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor*> PoeModel::state() {
  std::vector<Tensor*> s = parameters();
  s.push_back(&sigma_bn.running_mean);
  s.push_back(&sigma_bn.running_var);
  return s;
}

std::vector<const Tensor*> PoeModel::state() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<PoeModel*>(this)->state()) out.push_back(t);
  return out;
}

void PoeModel::validate_shapes() const {
  if (backbone.size() != config.hidden.size()) {
    throw ShapeError("model: " + std::to_string(backbone.size()) + " backbone layers, config declares " +
                     std::to_string(config.hidden.size()));
  }
  std::size_t width = input_dim;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const std::string name = "backbone[" + std::to_string(i) + "]";
    expect_shape(backbone[i].weight, width, config.hidden[i], name + ".weight");
    expect_shape(backbone[i].bias, 1, config.hidden[i], name + ".bias");
    width = config.hidden[i];
  }
  const std::size_t D = config.embed_dim;
  expect_shape(mu_head.weight, width, D, "mu_head.weight");
  expect_shape(mu_head.bias, 1, D, "mu_head.bias");
  expect_shape(sigma_head.weight, width, D, "sigma_head.weight");
  expect_shape(sigma_head.bias, 1, D, "sigma_head.bias");
  expect_shape(sigma_bn.gamma, 1, D, "sigma_bn.gamma");
  expect_shape(sigma_bn.beta, 1, D, "sigma_bn.beta");
  expect_shape(sigma_bn.running_mean, 1, D, "sigma_bn.running_mean");
  expect_shape(sigma_bn.running_var, 1, D, "sigma_bn.running_var");
  expect_shape(head.weights, D, HeadParams::output_width(config.head, config.classes), "head.weights");
}

// ---------------------------------------------------------------------------
// Graph

ModelGraph::ModelGraph(Tape& tape, const PoeModel& model, bool requires_grad) : tape_(&tape), model_(&model) {
  for (const Tensor* p : model.parameters()) params_.push_back(tape.leaf(*p, requires_grad));
}

ModelGraph::ModelGraph(Tape& tape, const PoeModel& model, std::span<const Node> params)
    : tape_(&tape), model_(&model), params_(params.begin(), params.end()) {
  if (params_.size() != model.parameters().size()) throw std::invalid_argument("ModelGraph: parameter count mismatch");
}

HeadBinding ModelGraph::head() const {
  return {model_->config.head, model_->config.classes, params_.back()};
}

namespace {

Node affine(Node x, Node w, Node b) {
  Node y = matmul(x, w);
  return y + broadcast(b, y.rows(), y.cols());
}

}  // namespace

ForwardResult ModelGraph::forward(const Tensor& x, bool training) const {
  const PoeModel& m = *model_;
  if (x.cols != m.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(x.cols) + " features, model expects " +
                     std::to_string(m.input_dim));
  }
  const std::size_t B = x.rows;
  Tape& t = *tape_;
  std::size_t p = 0;
  Node h = t.constant(x);
  for (std::size_t i = 0; i < m.backbone.size(); ++i, p += 2) h = relu(affine(h, params_[p], params_[p + 1]));
  ForwardResult out;
  out.embedding.mu = affine(h, params_[p], params_[p + 1]);
  p += 2;
  const std::size_t D = m.config.embed_dim;
  if (!m.config.sampling()) {
    out.embedding.sigma = t.constant(Tensor(B, D, 1.0));
    return out;
  }
  Node s = affine(h, params_[p], params_[p + 1]);
  Node gamma = params_[p + 2];
  Node beta = params_[p + 3];
  Node normalized;
  if (training) {
    const double inv_b = 1.0 / static_cast<double>(B);
    Node batch_mean = scale(sum_axis(s, Axis::rows), inv_b);
    Node centered = s - broadcast(batch_mean, B, D);
    Node batch_var = scale(sum_axis(square(centered), Axis::rows), inv_b);
    Node stdev = sqrt(shift(batch_var, BatchNorm::kEpsilon));
    normalized = centered / broadcast(stdev, B, D);
    out.stats = {batch_mean.value(), batch_var.value()};
  } else {
    Tensor inv_std = m.sigma_bn.running_var;
    for (double& v : inv_std.data) v = 1.0 / std::sqrt(v + BatchNorm::kEpsilon);
    Node rm = broadcast(t.constant(m.sigma_bn.running_mean), B, D);
    normalized = (s - rm) * broadcast(t.constant(std::move(inv_std)), B, D);
  }
  out.embedding.sigma = exp(normalized * broadcast(gamma, B, D) + broadcast(beta, B, D));
  return out;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t F = feature_count(data);
  Batch b;
  b.x = Tensor(rows.size(), F);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SampleRecord& r = data.at(rows[i]);
    if (r.features.size() != F) throw ShapeError("make_batch: ragged feature vectors");
    std::copy(r.features.begin(), r.features.end(), &b.x.data[i * F]);
    b.targets.push_back(r.target);
    b.classes.push_back(r.class_index);
  }
  return b;
}

Batch make_batch(const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(data, rows);
}

LossTerms total_loss(const ModelGraph& graph, const Batch& batch, const TrainConfig& cfg, const Tensor& epsilon) {
  if (batch.size() == 0) throw std::invalid_argument("total_loss: empty batch");
  ForwardResult fr = graph.forward(batch.x, true);
  const GaussianBatch& emb = fr.embedding;
  const std::size_t T = cfg.sampling() ? cfg.samples : 1;
  Node z = cfg.sampling() ? reparameterize(emb, epsilon, T) : emb.mu;

  const HeadBinding head = graph.head();
  Node head_loss;
  switch (cfg.head) {
    case HeadKind::direct: head_loss = loss_direct(head, z, batch.targets, T); break;
    case HeadKind::classification: head_loss = loss_classification(head, z, batch.classes, T); break;
    case HeadKind::ranking: {
      std::vector<RankLabels> labels;
      for (int c : batch.classes) labels.push_back(make_rank_labels(c, cfg.classes));
      head_loss = loss_ranking(head, z, labels, T);
      break;
    }
  }

  LossTerms terms;
  terms.head = head_loss.item();
  terms.total = head_loss;
  terms.stats = std::move(fr.stats);
  const double alpha = cfg.effective_alpha();
  if (alpha > 0.0 && batch.size() >= 3) {
    const std::vector<Triplet> triplets = mine_triplets(batch.targets);
    Node ord = ordinal_loss(emb, triplets, cfg.ordinal());
    terms.ordinal = ord.item();
    terms.total = terms.total + scale(ord, alpha);
  }
  const double beta = cfg.effective_beta();
  if (beta > 0.0) {
    Node vib = mean(vib_kl(emb));
    terms.vib = vib.item();
    terms.total = terms.total + scale(vib, beta);
  }
  return terms;
}

void update_running_stats(PoeModel& model, const BatchStats& stats, std::size_t batch_size) {
  if (stats.mean.size() == 0) return;
  const double unbias = batch_size > 1 ? static_cast<double>(batch_size) / static_cast<double>(batch_size - 1) : 1.0;
  BatchNorm& bn = model.sigma_bn;
  const double k = BatchNorm::kMomentum;
  for (std::size_t j = 0; j < bn.running_mean.size(); ++j) {
    bn.running_mean.data[j] = (1.0 - k) * bn.running_mean.data[j] + k * stats.mean.data[j];
    bn.running_var.data[j] = (1.0 - k) * bn.running_var.data[j] + k * stats.var.data[j] * unbias;
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Adam {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Tensor> m, v;
  std::size_t t = 0;

  explicit Adam(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
      m.emplace_back(p->rows, p->cols);
      v.emplace_back(p->rows, p->cols);
    }
  }

  void step(const std::vector<Tensor*>& params, const std::vector<Node>& leaves, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& g = leaves[i].grad();
      Tensor& p = *params[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[i].data[k] = kBeta1 * m[i].data[k] + (1.0 - kBeta1) * g.data[k];
        v[i].data[k] = kBeta2 * v[i].data[k] + (1.0 - kBeta2) * g.data[k] * g.data[k];
        p.data[k] -= lr * (m[i].data[k] / c1) / (std::sqrt(v[i].data[k] / c2) + kEps);
      }
    }
  }
};

bool all_finite(const std::vector<Tensor*>& params) {
  for (const Tensor* p : params)
    for (double x : p->data)
      if (!std::isfinite(x)) return false;
  return true;
}

void require_compatible(const PoeModel& model, const TrainConfig& cfg) {
  const TrainConfig& a = model.config;
  if (a.head != cfg.head || a.embed_dim != cfg.embed_dim || a.hidden != cfg.hidden || a.classes != cfg.classes ||
      a.sampling() != cfg.sampling()) {
    throw std::invalid_argument("train: config architecture differs from the model's");
  }
}

}  // namespace

TrainReport train(PoeModel& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require_compatible(model, cfg);
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (feature_count(data) != model.input_dim) {
    throw ShapeError("train: dataset has " + std::to_string(feature_count(data)) + " features, model expects " +
                     std::to_string(model.input_dim));
  }
  model.config = cfg;

  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng sampling_rng(cfg.seed, "sampling");
  std::vector<Tensor*> params = model.parameters();
  Adam adam(params);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  Tape tape;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    EpochStats stats;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Batch batch = make_batch(data, rows);
      Tensor eps;
      if (cfg.sampling()) eps = draw_noise(batch.size(), cfg.embed_dim, cfg.samples, sampling_rng);

      tape.clear();
      ModelGraph graph(tape, model, true);
      LossTerms terms;
      try {
        terms = total_loss(graph, batch, cfg, eps);
      } catch (const DomainError& e) {
        throw TrainingDiverged(report.steps, e.what());
      }
      const double loss = terms.total.item();
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "loss " << loss << " (head " << terms.head << ", ordinal " << terms.ordinal << ", vib " << terms.vib
            << ")";
        throw TrainingDiverged(report.steps, msg.str());
      }
      tape.backward(terms.total);
      adam.step(params, graph.params(), cfg.learning_rate);
      if (!all_finite(params)) throw TrainingDiverged(report.steps, "non-finite parameter after update");
      update_running_stats(model, terms.stats, batch.size());
      ++report.steps;

      stats.loss += loss;
      stats.head += terms.head;
      stats.ordinal += terms.ordinal;
      stats.vib += terms.vib;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    report.epochs.push_back({stats.loss * inv, stats.head * inv, stats.ordinal * inv, stats.vib * inv});
  }

  const std::vector<Prediction> preds = predict(model, data);
  double abs_err = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    abs_err += std::abs(preds[i].decoded.estimate - data[i].target);
    hits += preds[i].decoded.class_index == data[i].class_index ? 1 : 0;
  }
  report.final_train_mae = abs_err / static_cast<double>(data.size());
  report.final_train_accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  return report;
}

std::vector<Prediction> predict(const PoeModel& model, const Dataset& data) {
  std::vector<Prediction> out;
  if (data.empty()) return out;
  out.reserve(data.size());
  constexpr std::size_t kChunk = 1024;
  const BinLayout bins = model.config.bins();
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> rows(std::min(kChunk, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    const Batch batch = make_batch(data, rows);
    Tape tape;
    ModelGraph graph(tape, model, false);
    const ForwardResult fr = graph.forward(batch.x, false);
    const Tensor& mu = fr.embedding.mu.value();
    const Tensor& sigma = fr.embedding.sigma.value();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      DiagonalGaussian g = row_gaussian(mu, sigma, i);
      const Decoded d = decode(model.head, g.mu(), bins, model.config.decode);
      out.push_back({std::move(g), d});
    }
  }
  return out;
}

DiagonalGaussian forward(const PoeModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(x.size()) + " features, model expects " +
                     std::to_string(model.input_dim));
  }
  Tape tape;
  ModelGraph graph(tape, model, false);
  const ForwardResult fr = graph.forward(Tensor(1, x.size(), std::vector<double>(x.begin(), x.end())), false);
  return row_gaussian(fr.embedding.mu.value(), fr.embedding.sigma.value(), 0);
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr char kMagic[4] = {'P', 'O', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ModelFileError("model file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string serialize_model(const PoeModel& model) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string cfg = to_config_text(model.config);
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint64_t>(out, model.input_dim);
  const std::vector<const Tensor*> state = model.state();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.size()));
  for (const Tensor* t : state) {
    put<std::uint64_t>(out, t->rows);
    put<std::uint64_t>(out, t->cols);
    out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

PoeModel deserialize_model(const std::string& bytes) {
  constexpr std::size_t kMinSize = sizeof kMagic + 4 + 8 + 8 + 4 + 4;
  if (bytes.size() < kMinSize) throw ModelFileError("model file truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw ModelFileError("not a model file (bad magic)");
  Reader r(bytes);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw ModelFileError("unsupported model file version " + std::to_string(version) + " (expected " +
                         std::to_string(kVersion) + ")");
  }
  const std::string_view body(bytes.data(), bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(body) != stored) throw ModelFileError("model file checksum mismatch");

  Reader b(body);
  b.take(sizeof kMagic + 4);
  const auto cfg_len = b.get<std::uint64_t>();
  const std::string cfg_text(b.take(cfg_len));
  PoeModel m;
  m.config = train_config_from(FlatConfig::parse(cfg_text));
  m.input_dim = b.get<std::uint64_t>();
  m.backbone.resize(m.config.hidden.size());
  m.head.kind = m.config.head;
  m.head.dim = m.config.embed_dim;
  m.head.classes = m.config.classes;
  std::vector<Tensor*> state = m.state();
  const auto count = b.get<std::uint32_t>();
  if (count != state.size()) {
    throw ShapeError("model file holds " + std::to_string(count) + " arrays, config implies " +
                     std::to_string(state.size()));
  }
  for (Tensor* t : state) {
    const auto rows = b.get<std::uint64_t>();
    const auto cols = b.get<std::uint64_t>();
    if (cols != 0 && rows > (std::size_t{1} << 40) / cols) throw ModelFileError("model file array too large");
    const std::string_view raw = b.take(rows * cols * sizeof(double));
    t->rows = rows;
    t->cols = cols;
    t->data.resize(rows * cols);
    std::memcpy(t->data.data(), raw.data(), raw.size());
  }
  if (!b.done()) throw ModelFileError("model file has trailing bytes");
  m.validate_shapes();
  return m;
}

void save_model(const PoeModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

PoeModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

std::uint32_t parameter_checksum(const PoeModel& model) {
  std::string bytes;
  for (const Tensor* t : model.state())
    bytes.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(double));
  return crc32_of(bytes);
}

}  // namespace poe
