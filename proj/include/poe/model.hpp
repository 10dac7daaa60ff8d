#pragma once

// The probabilistic ordinal embedding model and its training loop.
//
//   x -> backbone (FC-ReLU stack) -> h
//   h -> FC                 -> mu(x)
//   h -> FC -> BN -> exp    -> sigma(x)
//   z = mu + sigma * eps  (training only)  -> regression head
//
// Objective per batch: mean head loss + alpha * ordinal hinge + beta * mean VIB.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "poe/autodiff.hpp"
#include "poe/bins.hpp"
#include "poe/data.hpp"
#include "poe/gaussian.hpp"
#include "poe/heads.hpp"
#include "poe/ordinal.hpp"

namespace poe {

enum class Mode { deterministic_baseline, p_emb, p_emb_ord, p_emb_vib, full_poe };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct TrainConfig {
  Mode mode = Mode::full_poe;
  HeadKind head = HeadKind::classification;
  Metric metric = Metric::skl;
  double margin = 5.0;
  double alpha = 1e-4;
  double beta = 1e-5;
  std::size_t samples = 50;  // Monte-Carlo sample count T
  std::size_t embed_dim = 16;
  std::vector<std::size_t> hidden{64, 32};
  int classes = 5;
  double y_min = 0.0;
  double y_max = 10.0;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  ClassDecode decode = ClassDecode::argmax;

  BinLayout bins() const { return {y_min, y_max, classes}; }
  bool sampling() const { return mode != Mode::deterministic_baseline; }
  double effective_alpha() const { return mode == Mode::p_emb_ord || mode == Mode::full_poe ? alpha : 0.0; }
  double effective_beta() const { return mode == Mode::p_emb_vib || mode == Mode::full_poe ? beta : 0.0; }
  OrdinalConfig ordinal() const { return {metric, margin}; }
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

struct BatchNorm {
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

struct PoeModel {
  TrainConfig config;
  std::size_t input_dim = 0;
  std::vector<Linear> backbone;
  Linear mu_head;
  Linear sigma_head;
  BatchNorm sigma_bn;
  HeadParams head;

  // Fresh model with seeded initialization (stream "init").
  static PoeModel create(const TrainConfig& cfg, std::size_t input_dim);

  // Trainable arrays in serialization order (running statistics excluded).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  // Every array written to a model file, trainable ones first.
  std::vector<const Tensor*> state() const;
  std::vector<Tensor*> state();
  // Throws ShapeError if any array disagrees with config / input_dim.
  void validate_shapes() const;
};

// Batch-normalization statistics of one training forward pass.
struct BatchStats {
  Tensor mean;
  Tensor var;
};

struct ForwardResult {
  GaussianBatch embedding;
  BatchStats stats;  // empty unless training with a sigma head
};

// A model's parameters bound as leaves of one tape.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const PoeModel& model, bool requires_grad);
  // Leaves bound to explicit parameter values (same order as parameters()).
  ModelGraph(Tape& tape, const PoeModel& model, std::span<const Node> params);

  // x is B x input_dim. Training uses batch statistics, inference running
  // statistics. In deterministic-baseline mode sigma is a constant 1.
  ForwardResult forward(const Tensor& x, bool training) const;

  Tape& tape() const { return *tape_; }
  const PoeModel& model() const { return *model_; }
  const std::vector<Node>& params() const { return params_; }
  HeadBinding head() const;

 private:
  Tape* tape_;
  const PoeModel* model_;
  std::vector<Node> params_;
};

struct Batch {
  Tensor x;
  std::vector<double> targets;
  std::vector<int> classes;
  std::size_t size() const { return targets.size(); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows);
Batch make_batch(const Dataset& data);

struct LossTerms {
  Node total;
  double head = 0.0;
  double ordinal = 0.0;
  double vib = 0.0;
  BatchStats stats;
};

// Builds the batch objective on the graph's tape. `epsilon` holds the frozen
// standard-normal draws, (B * T) x D; it is ignored in deterministic mode.
LossTerms total_loss(const ModelGraph& graph, const Batch& batch, const TrainConfig& cfg, const Tensor& epsilon);

// Exponential moving update of the BN running statistics (momentum 0.1,
// unbiased batch variance).
void update_running_stats(PoeModel& model, const BatchStats& stats, std::size_t batch_size);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct EpochStats {
  double loss = 0.0;
  double head = 0.0;
  double ordinal = 0.0;
  double vib = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t steps = 0;
  double final_train_mae = 0.0;
  double final_train_accuracy = 0.0;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay) over shuffled
// minibatches. Batches smaller than 3 contribute no ordinal term.
TrainReport train(PoeModel& model, const Dataset& data, const TrainConfig& cfg);

struct Prediction {
  DiagonalGaussian embedding;
  Decoded decoded;
};

// Inference: no sampling, decode consumes mu(x).
std::vector<Prediction> predict(const PoeModel& model, const Dataset& data);
DiagonalGaussian forward(const PoeModel& model, std::span<const double> x);

class ModelFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian: "POE1", u32 version, u64-length config text, u64 input dim,
// u32 array count, arrays as (u64 rows, u64 cols, f64 data...), CRC32 trailer.
void save_model(const PoeModel& model, const std::filesystem::path& path);
PoeModel load_model(const std::filesystem::path& path);
std::string serialize_model(const PoeModel& model);
PoeModel deserialize_model(const std::string& bytes);

std::uint32_t crc32_of(std::string_view bytes);
std::uint32_t parameter_checksum(const PoeModel& model);

}  // namespace poe
