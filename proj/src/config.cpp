#include "poe/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace poe {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double parse_number(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("config key '" + key + "': '" + t + "' is not a number");
  return v;
}

}  // namespace

FlatConfig FlatConfig::parse(const std::string& text) {
  FlatConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) {
          return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        }))
      throw ConfigError("config line " + std::to_string(lineno) + ": invalid key '" + key + "'");
    if (value.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' has no value");
    if (cfg.values_.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

FlatConfig FlatConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string FlatConfig::get_string(const std::string& key) const {
  const std::string& v = values_.at(key);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

double FlatConfig::get_real(const std::string& key) const { return parse_number(key, values_.at(key)); }

std::uint64_t FlatConfig::get_unsigned(const std::string& key) const {
  const std::string t = trim(values_.at(key));
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("config key '" + key + "': '" + t + "' is not a non-negative integer");
  return v;
}

std::vector<double> FlatConfig::get_reals(const std::string& key) const {
  std::string v = trim(values_.at(key));
  if (v.empty() || v.front() != '[') return {parse_number(key, v)};
  if (v.back() != ']') throw ConfigError("config key '" + key + "': unterminated list");
  v = trim(std::string_view(v).substr(1, v.size() - 2));
  std::vector<double> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(parse_number(key, std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos
                                                                                                 : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      // dataset
      "n_samples", "features", "classes", "y_min", "y_max", "base_noise", "noise_levels", "noise_probs",
      "test_fraction",
      // training
      "mode", "head", "metric", "margin", "alpha", "beta", "samples", "embed_dim", "hidden", "learning_rate",
      "batch_size", "epochs", "decode",
      // shared
      "seed"};
  return keys;
}

void FlatConfig::reject_unknown_keys() const {
  const auto& known = known_config_keys();
  for (const auto& [key, value] : values_)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "'");
}

DatasetSpec dataset_spec_from(const FlatConfig& cfg) {
  cfg.reject_unknown_keys();
  DatasetSpec s;
  if (cfg.has("n_samples")) s.n_samples = cfg.get_unsigned("n_samples");
  if (cfg.has("features")) s.features = cfg.get_unsigned("features");
  if (cfg.has("classes")) s.classes = static_cast<int>(cfg.get_unsigned("classes"));
  if (cfg.has("y_min")) s.y_min = cfg.get_real("y_min");
  if (cfg.has("y_max")) s.y_max = cfg.get_real("y_max");
  if (cfg.has("base_noise")) s.base_noise = cfg.get_real("base_noise");
  if (cfg.has("noise_levels") || cfg.has("noise_probs")) {
    if (!cfg.has("noise_levels") || !cfg.has("noise_probs"))
      throw ConfigError("noise_levels and noise_probs must be given together");
    const auto levels = cfg.get_reals("noise_levels");
    const auto probs = cfg.get_reals("noise_probs");
    if (levels.size() != probs.size()) throw ConfigError("noise_levels and noise_probs differ in length");
    s.noise_mixture.clear();
    for (std::size_t i = 0; i < levels.size(); ++i) s.noise_mixture.push_back({levels[i], probs[i]});
  }
  if (cfg.has("seed")) s.seed = cfg.get_unsigned("seed");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

double test_fraction_from(const FlatConfig& cfg) {
  const double f = cfg.has("test_fraction") ? cfg.get_real("test_fraction") : 0.2;
  if (!(f >= 0.0 && f < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  return f;
}

TrainConfig train_config_from(const FlatConfig& cfg) {
  cfg.reject_unknown_keys();
  TrainConfig c;
  try {
    if (cfg.has("mode")) c.mode = parse_mode(cfg.get_string("mode"));
    if (cfg.has("head")) c.head = parse_head_kind(cfg.get_string("head"));
    if (cfg.has("metric")) c.metric = parse_metric(cfg.get_string("metric"));
    c.margin = cfg.has("margin") ? cfg.get_real("margin") : default_margin(c.metric);
    if (cfg.has("alpha")) c.alpha = cfg.get_real("alpha");
    if (cfg.has("beta")) c.beta = cfg.get_real("beta");
    if (cfg.has("samples")) c.samples = cfg.get_unsigned("samples");
    if (cfg.has("embed_dim")) c.embed_dim = cfg.get_unsigned("embed_dim");
    if (cfg.has("hidden")) {
      c.hidden.clear();
      for (double h : cfg.get_reals("hidden")) {
        if (h < 1 || h != static_cast<double>(static_cast<std::size_t>(h)))
          throw ConfigError("hidden: layer sizes must be positive integers");
        c.hidden.push_back(static_cast<std::size_t>(h));
      }
    }
    if (cfg.has("classes")) c.classes = static_cast<int>(cfg.get_unsigned("classes"));
    if (cfg.has("y_min")) c.y_min = cfg.get_real("y_min");
    if (cfg.has("y_max")) c.y_max = cfg.get_real("y_max");
    if (cfg.has("learning_rate")) c.learning_rate = cfg.get_real("learning_rate");
    if (cfg.has("batch_size")) c.batch_size = cfg.get_unsigned("batch_size");
    if (cfg.has("epochs")) c.epochs = cfg.get_unsigned("epochs");
    if (cfg.has("seed")) c.seed = cfg.get_unsigned("seed");
    if (cfg.has("decode")) {
      const std::string d = cfg.get_string("decode");
      if (d == "argmax") c.decode = ClassDecode::argmax;
      else if (d == "expectation") c.decode = ClassDecode::expectation;
      else throw ConfigError("decode: expected argmax or expectation, got '" + d + "'");
    }
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "mode = \"" << to_string(c.mode) << "\"\n";
  out << "head = \"" << to_string(c.head) << "\"\n";
  out << "metric = \"" << to_string(c.metric) << "\"\n";
  out << "margin = " << format_real(c.margin) << "\n";
  out << "alpha = " << format_real(c.alpha) << "\n";
  out << "beta = " << format_real(c.beta) << "\n";
  out << "samples = " << c.samples << "\n";
  out << "embed_dim = " << c.embed_dim << "\n";
  out << "hidden = [";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) out << (i ? ", " : "") << c.hidden[i];
  out << "]\n";
  out << "classes = " << c.classes << "\n";
  out << "y_min = " << format_real(c.y_min) << "\n";
  out << "y_max = " << format_real(c.y_max) << "\n";
  out << "learning_rate = " << format_real(c.learning_rate) << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "seed = " << c.seed << "\n";
  out << "decode = \"" << (c.decode == ClassDecode::argmax ? "argmax" : "expectation") << "\"\n";
  return out.str();
}

std::string to_config_text(const DatasetSpec& s) {
  std::ostringstream out;
  out << "n_samples = " << s.n_samples << "\n";
  out << "features = " << s.features << "\n";
  out << "classes = " << s.classes << "\n";
  out << "y_min = " << format_real(s.y_min) << "\n";
  out << "y_max = " << format_real(s.y_max) << "\n";
  out << "base_noise = " << format_real(s.base_noise) << "\n";
  out << "noise_levels = [";
  for (std::size_t i = 0; i < s.noise_mixture.size(); ++i) out << (i ? ", " : "") << format_real(s.noise_mixture[i].level);
  out << "]\nnoise_probs = [";
  for (std::size_t i = 0; i < s.noise_mixture.size(); ++i)
    out << (i ? ", " : "") << format_real(s.noise_mixture[i].probability);
  out << "]\n";
  out << "seed = " << s.seed << "\n";
  return out.str();
}

}  // namespace poe
