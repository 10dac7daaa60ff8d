#include "poe/cli.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "poe/data.hpp"

namespace poe {

namespace {

using Clock = std::chrono::steady_clock;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, const RunRequest& req, std::string resolved, std::uint64_t seed)
      : path_(sibling(req.out, ".manifest.json")), start_(Clock::now()) {
    j_["command"] = std::move(command);
    j_["command_line"] = req.command_line;
    j_["code_version"] = kCodeVersion;
    j_["seed"] = seed;
    j_["resolved_config"] = std::move(resolved);
    j_["dataset_checksum"] = nullptr;
    j_["outputs"] = nlohmann::ordered_json::array();
    j_["status"] = "running";
    j_["wall_clock_seconds"] = nullptr;
    flush();
  }

  void dataset(std::uint32_t crc) { j_["dataset_checksum"] = hex32(crc); }
  void output(const std::filesystem::path& p) { j_["outputs"].push_back(p.string()); }

  void finish() {
    j_["status"] = "complete";
    j_["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start_).count();
    flush();
  }

 private:
  void flush() const { write_file(path_, j_.dump(2) + "\n"); }

  std::filesystem::path path_;
  Clock::time_point start_;
  nlohmann::ordered_json j_;
};

void require_out(const RunRequest& req, const char* command) {
  if (req.out.empty()) throw std::invalid_argument(std::string(command) + ": --out is required");
}

Dataset load_dataset(const std::filesystem::path& path, std::uint32_t& crc) {
  const std::string text = read_file(path);
  crc = crc32_of(text);
  return parse_csv(text);
}

}  // namespace

std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix) {
  std::filesystem::path p = out;
  p.replace_extension();
  return std::filesystem::path(p.string() + suffix);
}

FlatConfig resolve_config(const RunRequest& req) {
  FlatConfig cfg = req.config.empty() ? FlatConfig{} : FlatConfig::load(req.config);
  if (req.seed) cfg.set("seed", std::to_string(*req.seed));
  if (req.mode) cfg.set("mode", *req.mode);
  if (req.head) cfg.set("head", *req.head);
  if (req.metric) cfg.set("metric", *req.metric);
  cfg.reject_unknown_keys();
  return cfg;
}

GenerateResult cmd_generate(const RunRequest& req) {
  require_out(req, "generate");
  const FlatConfig cfg = resolve_config(req);
  const DatasetSpec spec = dataset_spec_from(cfg);
  const double test_fraction = test_fraction_from(cfg);
  Manifest manifest("generate", req, to_config_text(spec) + "test_fraction = " + format_real(test_fraction) + "\n",
                    spec.seed);

  const auto [train_set, test_set] = split(generate(spec), test_fraction);
  GenerateResult result;
  result.train_path = req.out;
  const std::string train_csv = to_csv(train_set);
  result.checksum = crc32_of(train_csv);
  write_file(result.train_path, train_csv);
  manifest.output(result.train_path);
  if (!test_set.empty()) {
    result.test_path = sibling(req.out, ".test.csv");
    write_file(result.test_path, to_csv(test_set));
    manifest.output(result.test_path);
  }
  manifest.dataset(result.checksum);
  manifest.finish();
  return result;
}

std::string train_report_json(const TrainReport& report, const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(cfg.mode));
  j["head"] = std::string(to_string(cfg.head));
  j["metric"] = std::string(to_string(cfg.metric));
  j["steps"] = report.steps;
  j["final_train_mae"] = report.final_train_mae;
  j["final_train_accuracy"] = report.final_train_accuracy;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const EpochStats& e : report.epochs) {
    nlohmann::ordered_json row;
    row["loss"] = e.loss;
    row["head"] = e.head;
    row["ordinal"] = e.ordinal;
    row["vib"] = e.vib;
    j["epochs"].push_back(row);
  }
  return j.dump(2) + "\n";
}

TrainReport cmd_train(const RunRequest& req) {
  require_out(req, "train");
  if (req.data.empty()) throw std::invalid_argument("train: --data is required");
  const FlatConfig flat = resolve_config(req);
  const TrainConfig cfg = train_config_from(flat);
  Manifest manifest("train", req, to_config_text(cfg), cfg.seed);

  std::uint32_t crc = 0;
  const Dataset data = load_dataset(req.data, crc);
  manifest.dataset(crc);
  for (const SampleRecord& r : data)
    if (r.class_index > cfg.classes)
      throw ShapeError("train: dataset class " + std::to_string(r.class_index) + " exceeds configured classes " +
                       std::to_string(cfg.classes));

  PoeModel model = PoeModel::create(cfg, feature_count(data));
  const TrainReport report = train(model, data, cfg);
  save_model(model, req.out);
  manifest.output(req.out);
  const auto report_path = sibling(req.out, ".report.json");
  write_file(report_path, train_report_json(report, cfg));
  manifest.output(report_path);
  manifest.finish();
  return report;
}

EvalReport cmd_eval(const RunRequest& req) {
  require_out(req, "eval");
  if (req.model.empty() || req.data.empty()) throw std::invalid_argument("eval: --model and --data are required");
  if (!std::filesystem::exists(req.model)) throw std::runtime_error("eval: model file not found: " + req.model.string());
  const PoeModel model = load_model(req.model);
  std::uint32_t crc = 0;
  const Dataset data = load_dataset(req.data, crc);
  if (feature_count(data) != model.input_dim) {
    throw ShapeError("eval: dataset has " + std::to_string(feature_count(data)) + " features, model expects " +
                     std::to_string(model.input_dim));
  }

  EvalOptions opts;
  opts.corruption_levels = req.corruption;
  opts.seed = req.seed.value_or(model.config.seed);
  opts.tau_level = req.example_level_tau ? TauLevel::examples : TauLevel::bins;
  std::ostringstream resolved;
  resolved << "corruption = [";
  for (std::size_t i = 0; i < opts.corruption_levels.size(); ++i)
    resolved << (i ? ", " : "") << format_real(opts.corruption_levels[i]);
  resolved << "]\ntau_level = \"" << (req.example_level_tau ? "examples" : "bins") << "\"\n";
  Manifest manifest("eval", req, resolved.str(), opts.seed);
  manifest.dataset(crc);

  const EvalReport report = uncertainty_analysis(model, data, opts);
  write_file(req.out, to_json(report));
  manifest.output(req.out);
  const auto bins_path = sibling(req.out, ".bins.csv");
  write_file(bins_path, bin_table_csv(report));
  manifest.output(bins_path);
  const auto corruption_path = sibling(req.out, ".corruption.csv");
  write_file(corruption_path, corruption_csv(report));
  manifest.output(corruption_path);
  manifest.finish();
  return report;
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << axis << ",test_mae,test_accuracy,train_seconds\n";
  for (const SweepRow& r : rows)
    out << r.value << ',' << format_real(r.test_mae) << ',' << format_real(r.test_accuracy) << ','
        << format_real(r.train_seconds) << '\n';
  return out.str();
}

std::vector<SweepRow> cmd_sweep(const RunRequest& req) {
  require_out(req, "sweep");
  static const std::map<std::string, std::string> axis_key = {
      {"margin", "margin"}, {"alpha", "alpha"}, {"beta", "beta"}, {"T", "samples"}, {"metric", "metric"}};
  const auto key = axis_key.find(req.axis);
  if (key == axis_key.end()) throw std::invalid_argument("sweep: unknown axis '" + req.axis + "'");
  if (req.values.empty()) throw std::invalid_argument("sweep: empty value list");

  const FlatConfig base = resolve_config(req);
  const TrainConfig base_cfg = train_config_from(base);
  Manifest manifest("sweep", req, to_config_text(base_cfg), base_cfg.seed);

  Dataset full;
  if (req.data.empty()) {
    full = generate(dataset_spec_from(base));
    manifest.dataset(crc32_of(to_csv(full)));
  } else {
    std::uint32_t crc = 0;
    full = load_dataset(req.data, crc);
    manifest.dataset(crc);
  }
  const auto [train_set, test_set] = split(full, test_fraction_from(base));
  if (test_set.empty()) throw std::invalid_argument("sweep: test_fraction leaves no test examples");

  std::vector<SweepRow> rows;
  for (const std::string& value : req.values) {
    FlatConfig cell = base;
    cell.set(key->second, value);
    const TrainConfig cfg = train_config_from(cell);
    const auto start = Clock::now();
    PoeModel model = PoeModel::create(cfg, feature_count(train_set));
    train(model, train_set, cfg);
    SweepRow row;
    row.value = value;
    row.train_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    const std::vector<Prediction> preds = predict(model, test_set);
    std::vector<double> est, tgt;
    std::vector<int> pc, tc;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      est.push_back(preds[i].decoded.estimate);
      tgt.push_back(test_set[i].target);
      pc.push_back(preds[i].decoded.class_index);
      tc.push_back(test_set[i].class_index);
    }
    row.test_mae = mae(est, tgt);
    row.test_accuracy = accuracy(pc, tc);
    rows.push_back(row);
  }
  write_file(req.out, sweep_csv(req.axis, rows));
  manifest.output(req.out);
  manifest.finish();
  return rows;
}

}  // namespace poe
