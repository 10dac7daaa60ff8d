#pragma once

// The four reproducible run commands behind the `poe` executable. Each one
// writes a JSON manifest next to its primary output before starting
// (status "running") and rewrites it when done (status "complete").

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "poe/config.hpp"
#include "poe/evaluation.hpp"
#include "poe/model.hpp"

namespace poe {

inline constexpr const char* kCodeVersion = "0.1.0";

struct RunRequest {
  std::string command_line;
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path model;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> head;
  std::optional<std::string> metric;
  std::vector<double> corruption{0.0};
  std::string axis;
  std::vector<std::string> values;
  bool example_level_tau = false;
};

// Config file (if any) with the command-line overrides applied.
FlatConfig resolve_config(const RunRequest& req);

// `<out without extension><suffix>`, e.g. sibling("run/data.csv", ".test.csv").
std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix);

struct GenerateResult {
  std::filesystem::path train_path;
  std::filesystem::path test_path;  // empty when test_fraction is 0
  std::uint32_t checksum = 0;       // CRC32 of the written training CSV
};

GenerateResult cmd_generate(const RunRequest& req);
TrainReport cmd_train(const RunRequest& req);
EvalReport cmd_eval(const RunRequest& req);

struct SweepRow {
  std::string value;
  double test_mae = 0.0;
  double test_accuracy = 0.0;
  double train_seconds = 0.0;
};

// axis is one of margin, alpha, beta, T, metric.
std::vector<SweepRow> cmd_sweep(const RunRequest& req);
std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows);

std::string train_report_json(const TrainReport& report, const TrainConfig& cfg);

}  // namespace poe
