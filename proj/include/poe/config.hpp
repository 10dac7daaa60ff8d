#pragma once

// Flat TOML-style configuration: one `key = value` per line, `#` comments,
// values are numbers, bare or quoted strings, or `[a, b, ...]` lists.
// Unknown keys are rejected so that sweep grids stay auditable.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/data.hpp"
#include "poe/model.hpp"

namespace poe {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text);
  static FlatConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::uint64_t get_unsigned(const std::string& key) const;
  std::vector<double> get_reals(const std::string& key) const;

  // Throws ConfigError naming the first key outside the known set.
  void reject_unknown_keys() const;

 private:
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_config_keys();

// Fields absent from the config keep their defaults.
DatasetSpec dataset_spec_from(const FlatConfig& cfg);
TrainConfig train_config_from(const FlatConfig& cfg);
double test_fraction_from(const FlatConfig& cfg);

// Canonical text form; train_config_from(parse(to_config_text(c))) == c.
std::string to_config_text(const TrainConfig& cfg);
std::string to_config_text(const DatasetSpec& spec);

std::string format_real(double v);  // shortest round-trip representation

}  // namespace poe
