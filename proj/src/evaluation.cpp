#include "poe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "poe/config.hpp"
#include "poe/ordinal.hpp"
#include "poe/rng.hpp"

namespace poe {

double mae(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("mae: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("mae: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) acc += std::abs(predictions[i] - targets[i]);
  return acc / static_cast<double>(predictions.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("kendall_tau: need at least 2 observations");
  const std::size_t n = a.size();
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0.0) ties_a += 1.0;
      if (db == 0.0) ties_b += 1.0;
      if (da == 0.0 || db == 0.0) continue;
      if ((da > 0.0) == (db > 0.0)) concordant += 1.0;
      else discordant += 1.0;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = (pairs - ties_a) * (pairs - ties_b);
  if (denom <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (concordant - discordant) / std::sqrt(denom);
}

std::vector<std::size_t> bin_boundaries(std::size_t count, std::size_t bins) {
  if (bins == 0 || count < bins) throw std::invalid_argument("bin_boundaries: fewer items than bins");
  const std::size_t size = count / bins;
  std::vector<std::size_t> edges;
  for (std::size_t k = 0; k < bins; ++k) edges.push_back(k * size);
  edges.push_back(count);
  return edges;
}

EvalReport uncertainty_analysis(const PoeModel& model, const Dataset& data, const EvalOptions& opts) {
  if (opts.corruption_levels.empty()) throw std::invalid_argument("uncertainty_analysis: no corruption levels");
  if (data.size() < opts.bins) {
    throw std::invalid_argument("uncertainty_analysis: " + std::to_string(data.size()) + " examples, need at least " +
                                std::to_string(opts.bins));
  }

  struct Scored {
    double score;
    double abs_error;
    bool hit;
  };
  std::vector<Scored> pool;
  std::vector<DiagonalGaussian> embeddings;
  std::vector<double> labels;
  std::vector<double> estimates, targets;
  std::vector<int> predicted, truth;
  EvalReport report;
  report.tau_level = opts.tau_level;

  for (std::size_t li = 0; li < opts.corruption_levels.size(); ++li) {
    const double level = opts.corruption_levels[li];
    const Dataset corrupted = corrupt(data, level, derive_seed(opts.seed, "eval/" + std::to_string(li)));
    std::vector<Prediction> preds = predict(model, corrupted);
    double level_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double score = uncertainty_score(preds[i].embedding);
      level_sum += score;
      const Decoded& d = preds[i].decoded;
      pool.push_back({score, std::abs(d.estimate - corrupted[i].target), d.class_index == corrupted[i].class_index});
      estimates.push_back(d.estimate);
      targets.push_back(corrupted[i].target);
      predicted.push_back(d.class_index);
      truth.push_back(corrupted[i].class_index);
      labels.push_back(corrupted[i].target);
      embeddings.push_back(std::move(preds[i].embedding));
    }
    report.per_corruption_uncertainty.push_back({level, level_sum / static_cast<double>(preds.size())});
  }

  report.examples = pool.size();
  report.mae = mae(estimates, targets);
  report.accuracy = accuracy(predicted, truth);
  report.violation_rate = violation_rate(embeddings, labels, opts.violation_metric, opts.triplet_budget,
                                         derive_seed(opts.seed, "eval/violation"));

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return pool[x].score < pool[y].score; });
  const std::vector<std::size_t> edges = bin_boundaries(pool.size(), opts.bins);
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    BinRow row;
    row.count = edges[k + 1] - edges[k];
    for (std::size_t i = edges[k]; i < edges[k + 1]; ++i) {
      const Scored& s = pool[order[i]];
      row.mean_uncertainty += s.score;
      row.mae += s.abs_error;
      row.accuracy += s.hit ? 1.0 : 0.0;
    }
    const double inv = 1.0 / static_cast<double>(row.count);
    row.mean_uncertainty *= inv;
    row.mae *= inv;
    row.accuracy *= inv;
    report.bin_table.push_back(row);
  }

  std::vector<double> u, e, a;
  if (opts.tau_level == TauLevel::bins) {
    for (const BinRow& r : report.bin_table) {
      u.push_back(r.mean_uncertainty);
      e.push_back(r.mae);
      a.push_back(r.accuracy);
    }
  } else {
    for (const Scored& s : pool) {
      u.push_back(s.score);
      e.push_back(s.abs_error);
      a.push_back(s.hit ? 1.0 : 0.0);
    }
  }
  report.kendall_tau_mae = kendall_tau(u, e);
  report.kendall_tau_acc = kendall_tau(u, a);
  return report;
}

namespace {

nlohmann::ordered_json real_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["examples"] = r.examples;
  j["mae"] = r.mae;
  j["accuracy"] = r.accuracy;
  j["violation_rate"] = r.violation_rate;
  j["tau_level"] = r.tau_level == TauLevel::bins ? "bins" : "examples";
  j["kendall_tau_mae"] = real_or_null(r.kendall_tau_mae);
  j["kendall_tau_acc"] = real_or_null(r.kendall_tau_acc);
  j["bin_table"] = nlohmann::ordered_json::array();
  for (const BinRow& b : r.bin_table) {
    nlohmann::ordered_json row;
    row["count"] = b.count;
    row["mean_uncertainty"] = b.mean_uncertainty;
    row["mae"] = b.mae;
    row["accuracy"] = b.accuracy;
    j["bin_table"].push_back(row);
  }
  j["per_corruption_uncertainty"] = nlohmann::ordered_json::array();
  for (const CorruptionUncertainty& c : r.per_corruption_uncertainty) {
    nlohmann::ordered_json row;
    row["level"] = c.level;
    row["mean_uncertainty"] = c.mean_uncertainty;
    j["per_corruption_uncertainty"].push_back(row);
  }
  return j.dump(2) + "\n";
}

std::string bin_table_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "bin,count,mean_uncertainty,mae,accuracy\n";
  for (std::size_t k = 0; k < r.bin_table.size(); ++k) {
    const BinRow& b = r.bin_table[k];
    out << k << ',' << b.count << ',' << format_real(b.mean_uncertainty) << ',' << format_real(b.mae) << ','
        << format_real(b.accuracy) << '\n';
  }
  return out.str();
}

std::string corruption_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "level,mean_uncertainty\n";
  for (const CorruptionUncertainty& c : r.per_corruption_uncertainty)
    out << format_real(c.level) << ',' << format_real(c.mean_uncertainty) << '\n';
  return out.str();
}

}  // namespace poe
