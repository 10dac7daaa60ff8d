#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "poe/data.hpp"
#include "poe/gaussian.hpp"
#include "poe/model.hpp"

namespace poe {

double mae(std::span<const double> predictions, std::span<const double> targets);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

// Tie-corrected tau-b. NaN when either sequence is constant.
double kendall_tau(std::span<const double> a, std::span<const double> b);

struct BinRow {
  std::size_t count = 0;
  double mean_uncertainty = 0.0;
  double mae = 0.0;
  double accuracy = 0.0;
};

struct CorruptionUncertainty {
  double level = 0.0;
  double mean_uncertainty = 0.0;
};

enum class TauLevel { bins, examples };

struct EvalReport {
  std::size_t examples = 0;
  double mae = 0.0;
  double accuracy = 0.0;
  double violation_rate = 0.0;
  std::vector<BinRow> bin_table;
  TauLevel tau_level = TauLevel::bins;
  double kendall_tau_mae = 0.0;  // NaN when undefined
  double kendall_tau_acc = 0.0;
  std::vector<CorruptionUncertainty> per_corruption_uncertainty;
};

struct EvalOptions {
  std::vector<double> corruption_levels{0.0};
  std::uint64_t seed = 0;
  std::size_t bins = 10;
  std::size_t triplet_budget = 100000;
  Metric violation_metric = Metric::skl;
  TauLevel tau_level = TauLevel::bins;
};

// Splits `count` sorted items into `bins` consecutive groups of count / bins,
// the last group taking the remainder. Returns the start offsets plus count.
std::vector<std::size_t> bin_boundaries(std::size_t count, std::size_t bins);

// Scores the pooled corrupted copies of `data`, sorts them by uncertainty and
// reports per-bin error alongside the tau between bin uncertainty and bin
// MAE / accuracy. Throws std::invalid_argument for fewer than `bins` examples.
EvalReport uncertainty_analysis(const PoeModel& model, const Dataset& data, const EvalOptions& opts);

std::string to_json(const EvalReport& report);
std::string bin_table_csv(const EvalReport& report);
std::string corruption_csv(const EvalReport& report);

}  // namespace poe
