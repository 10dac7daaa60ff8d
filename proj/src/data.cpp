#include "poe/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "poe/rng.hpp"

namespace poe {

namespace {

constexpr double kCurveRadius = 1.0;
constexpr double kCurveSweep = std::numbers::pi;  // radians covered by y_min..y_max
constexpr double kPolyAmplitude = 0.3;

// Legendre polynomial P_k(x) by the three-term recurrence.
double legendre(int k, double x) {
  double p0 = 1.0, p1 = x;
  if (k == 0) return p0;
  for (int n = 1; n < k; ++n) {
    const double p2 = ((2.0 * n + 1.0) * x * p1 - n * p0) / (n + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

}  // namespace

void DatasetSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("dataset spec: " + field + " " + why);
  };
  if (n_samples == 0) fail("n_samples", "must be positive");
  if (features < 2) fail("features", "must be at least 2");
  if (classes < 2) fail("classes", "must be at least 2");
  if (!(y_min < y_max)) fail("y_min/y_max", "must satisfy y_min < y_max");
  if (!(base_noise >= 0.0)) fail("base_noise", "must be non-negative");
  double total = 0.0;
  for (const NoiseComponent& c : noise_mixture) {
    if (!(c.level >= 0.0)) fail("noise_levels", "must be non-negative");
    if (!(c.probability >= 0.0)) fail("noise_probs", "must be non-negative");
    total += c.probability;
  }
  if (!noise_mixture.empty() && std::abs(total - 1.0) > 1e-9) fail("noise_probs", "must sum to 1");
}

std::vector<double> curve_point(double y, const DatasetSpec& spec) {
  const double u = (y - spec.y_min) / (spec.y_max - spec.y_min);
  std::vector<double> x(spec.features);
  x[0] = kCurveRadius * std::cos(kCurveSweep * u);
  x[1] = kCurveRadius * std::sin(kCurveSweep * u);
  for (std::size_t k = 2; k < spec.features; ++k)
    x[k] = kPolyAmplitude * legendre(static_cast<int>(k - 1), 2.0 * u - 1.0);
  return x;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, "data");
  const BinLayout bins = spec.bins();
  Dataset out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    SampleRecord r;
    r.target = rng.uniform(spec.y_min, spec.y_max);
    r.class_index = bins.bin(r.target);
    double level = 0.0;
    if (!spec.noise_mixture.empty()) {
      const double u = rng.uniform();
      double cum = 0.0;
      level = spec.noise_mixture.back().level;
      for (const NoiseComponent& c : spec.noise_mixture) {
        cum += c.probability;
        if (u < cum) {
          level = c.level;
          break;
        }
      }
    }
    r.noise_level = std::hypot(spec.base_noise, level);
    r.features = curve_point(r.target, spec);
    for (double& f : r.features) f += r.noise_level * rng.normal();
    out.push_back(std::move(r));
  }
  return out;
}

Dataset corrupt(const Dataset& data, double extra_noise, std::uint64_t seed) {
  if (!(extra_noise >= 0.0)) throw std::invalid_argument("corrupt: extra noise must be non-negative");
  Dataset out = data;
  if (extra_noise == 0.0) return out;
  Rng rng(seed, "corrupt");
  for (SampleRecord& r : out) {
    for (double& f : r.features) f += extra_noise * rng.normal();
    r.noise_level = std::hypot(r.noise_level, extra_noise);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split: test fraction must lie in [0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround((1.0 - test_fraction) * static_cast<double>(data.size())));
  Dataset train(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_train));
  Dataset test(data.begin() + static_cast<std::ptrdiff_t>(n_train), data.end());
  return {std::move(train), std::move(test)};
}

std::size_t feature_count(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  return data.front().features.size();
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void put_real(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_real(std::string_view field, std::size_t line, std::size_t column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw CsvError(line, "column " + std::to_string(column + 1) + ": non-numeric field '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::string to_csv(const Dataset& data) {
  const std::size_t F = data.empty() ? 0 : data.front().features.size();
  std::string out;
  for (std::size_t k = 0; k < F; ++k) out += "feat_" + std::to_string(k) + ",";
  out += "target,class_index,noise_level\n";
  for (const SampleRecord& r : data) {
    if (r.features.size() != F) throw std::invalid_argument("to_csv: records have differing feature counts");
    for (double f : r.features) {
      put_real(out, f);
      out += ',';
    }
    put_real(out, r.target);
    out += ',' + std::to_string(r.class_index) + ',';
    put_real(out, r.noise_level);
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string text = to_csv(data);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw CsvError(1, "empty dataset file (no header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 4) throw CsvError(1, "header has " + std::to_string(header.size()) + " columns, need at least 4");
  const std::size_t F = header.size() - 3;
  for (std::size_t k = 0; k < F; ++k)
    if (header[k] != "feat_" + std::to_string(k))
      throw CsvError(1, "column " + std::to_string(k + 1) + " should be feat_" + std::to_string(k) + ", found '" +
                            std::string(header[k]) + "'");
  if (header[F] != "target" || header[F + 1] != "class_index" || header[F + 2] != "noise_level")
    throw CsvError(1, "last three columns must be target,class_index,noise_level");

  Dataset out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw CsvError(lineno, "expected " + std::to_string(header.size()) + " columns, found " +
                                 std::to_string(fields.size()));
    SampleRecord r;
    r.features.resize(F);
    for (std::size_t k = 0; k < F; ++k) r.features[k] = parse_real(fields[k], lineno, k);
    r.target = parse_real(fields[F], lineno, F);
    const double c = parse_real(fields[F + 1], lineno, F + 1);
    if (c != std::floor(c) || c < 1) throw CsvError(lineno, "class_index must be a positive integer");
    r.class_index = static_cast<int>(c);
    r.noise_level = parse_real(fields[F + 2], lineno, F + 2);
    if (r.noise_level < 0) throw CsvError(lineno, "noise_level must be non-negative");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw CsvError(lineno, "empty dataset (header only)");
  return out;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace poe
