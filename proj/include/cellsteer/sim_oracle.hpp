#pragma once

// Synthetic stand-in for the yeast polarization simulation: a von-Mises-style
// Cdc42 bump on a 400-cell membrane, the polarization factor, parameter
// normalization, and the simulation-ready CSV format.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cellsteer/error.hpp"
#include "cellsteer/rng.hpp"

namespace cellsteer {

inline constexpr std::size_t kNumParams = 35;
inline constexpr std::size_t kNumCells = 400;
inline constexpr double kCellDegrees = 360.0 / static_cast<double>(kNumCells);

/// Index of each named parameter in ParameterSpace order.
namespace param {
inline constexpr std::size_t k_42a = 0;
inline constexpr std::size_t k_42d = 1;
inline constexpr std::size_t k_RL = 2;
inline constexpr std::size_t k_24cm0 = 3;
inline constexpr std::size_t k_24cm1 = 4;
inline constexpr std::size_t C42_t = 5;
inline constexpr std::size_t q = 6;
inline constexpr std::size_t h = 7;
inline constexpr std::size_t D_c42a = 8;
inline constexpr std::size_t D_c42 = 9;
/// First synthetic placeholder, p11.
inline constexpr std::size_t first_placeholder = 10;
} // namespace param

struct ParameterRange {
  std::string name;
  double raw_lo = 0.0;
  double raw_hi = 1.0;

  friend bool operator==(const ParameterRange &, const ParameterRange &) = default;
};

class ParameterSpace {
public:
  explicit ParameterSpace(std::vector<ParameterRange> entries) : entries_(std::move(entries)) {
    validate();
  }

  /// Named kinetic parameters first, then placeholders p11..p35 on [0, 1].
  static ParameterSpace default_space() {
    std::vector<ParameterRange> e = {
        {"k_42a", 0.1, 10.0},   {"k_42d", 0.1, 10.0}, {"k_RL", 0.01, 1.0},
        {"k_24cm0", 0.001, 0.1}, {"k_24cm1", 0.1, 10.0}, {"C42_t", 1.0, 10.0},
        {"q", 0.1, 1.0},        {"h", 1.0, 10.0},     {"D_c42a", 0.001, 0.1},
        {"D_c42", 0.01, 1.0},
    };
    for (std::size_t j = 11; j <= kNumParams; ++j)
      e.push_back({"p" + std::to_string(j), 0.0, 1.0});
    return ParameterSpace(std::move(e));
  }

  const std::vector<ParameterRange> &entries() const noexcept { return entries_; }
  const ParameterRange &operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto &e : entries_)
      out.push_back(e.name);
    return out;
  }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name)
        return i;
    return std::nullopt;
  }

  friend bool operator==(const ParameterSpace &, const ParameterSpace &) = default;

private:
  void validate() const {
    if (entries_.size() != kNumParams)
      fail(ErrorKind::shape_mismatch,
           "parameter space needs " + std::to_string(kNumParams) + " entries, got " +
               std::to_string(entries_.size()),
           "space");
    std::set<std::string> seen;
    for (const auto &e : entries_) {
      if (!seen.insert(e.name).second)
        fail(ErrorKind::invalid_argument, "duplicate parameter name " + e.name, "space");
      if (!(e.raw_lo < e.raw_hi))
        fail(ErrorKind::invalid_argument, "empty raw range for " + e.name, "space");
    }
    for (const char *required : {"k_42a", "k_42d", "k_RL", "k_24cm0", "k_24cm1", "C42_t", "q",
                                 "h", "D_c42a", "D_c42"})
      if (!seen.count(required))
        fail(ErrorKind::invalid_argument, std::string("missing parameter ") + required, "space");
  }

  std::vector<ParameterRange> entries_;
};

/// 35 normalized parameters. Steering keeps them in [-1, 1].
using ParameterConfig = std::array<double, kNumParams>;

/// Cdc42 concentration at theta_i = 0.9 * i degrees.
using ConcentrationProfile = std::array<double, kNumCells>;

inline bool in_unit_box(const ParameterConfig &config) {
  return std::all_of(config.begin(), config.end(),
                     [](double v) { return v >= -1.0 && v <= 1.0; });
}

inline ParameterConfig to_config(std::span<const double> values, const char *field = "config") {
  if (values.size() != kNumParams)
    fail(ErrorKind::shape_mismatch,
         "config needs " + std::to_string(kNumParams) + " values, got " +
             std::to_string(values.size()),
         field);
  ParameterConfig c{};
  std::copy(values.begin(), values.end(), c.begin());
  return c;
}

struct PFParams {
  /// Experiment constant scaling the maximum concentration.
  double a = 0.01;
  /// Membrane surface measure.
  double surface_area = 1.0;

  void validate() const {
    if (!(a > 0.0) || !(surface_area > 0.0))
      fail(ErrorKind::invalid_argument, "PF constants must be positive", "pf");
  }
};

/// Constants of the synthetic response surface.
struct OracleShape {
  double front_center_deg = 180.0;
  double front_shift_deg = 36.0;
  double amplitude_scale = 200.0;
  double baseline_scale = 20.0;
  double width_scale = 5.0;
  double width_min = 0.5;
  double width_max = 50.0;
  double noise_sigma = 2.0;
};

inline ConcentrationProfile simulate(const ParameterConfig &x,
                                     std::optional<std::uint64_t> noise_seed = std::nullopt,
                                     const OracleShape &shape = {}) {
  using namespace param;
  constexpr double deg = std::numbers::pi / 180.0;
  const double mu = shape.front_center_deg + shape.front_shift_deg * (x[k_24cm0] - x[k_24cm1]);
  const double amp =
      shape.amplitude_scale * (1.0 + std::tanh(2.0 * (x[k_42a] - x[k_42d]) + 0.5 * x[C42_t]));
  const double kappa =
      std::clamp(shape.width_scale * std::exp(x[q] * x[h] - 0.3 * (x[D_c42a] + x[D_c42])),
                 shape.width_min, shape.width_max);
  double wiggle = 0.0;
  for (std::size_t j = 11; j <= kNumParams; ++j)
    wiggle += std::sin(static_cast<double>(j) + x[j - 1]);
  const double base =
      std::max(0.0, shape.baseline_scale * (1.0 + 0.5 * x[k_RL]) + 2.0 * wiggle / 25.0);

  ConcentrationProfile c{};
  for (std::size_t i = 0; i < kNumCells; ++i) {
    const double theta = kCellDegrees * static_cast<double>(i);
    c[i] = base + (amp - base) * std::exp(kappa * (std::cos((theta - mu) * deg) - 1.0));
  }
  if (noise_seed) {
    Rng rng(*noise_seed);
    for (auto &v : c)
      v = std::max(0.0, v + shape.noise_sigma * rng.normal());
  }
  return c;
}

/// Result of the half-mass window search; cells are counted in window length.
struct HalfMassWindow {
  std::size_t argmax = 0;
  std::size_t first = 0; ///< first cell, window runs circularly to first + length - 1
  std::size_t length = 0;
  std::size_t last_added = 0;
};

/// Grows a contiguous circular window from the argmax, always adding the
/// larger neighbour (ties go to the next-index neighbour), until the window
/// holds at least half of the total mass.
inline HalfMassWindow half_mass_window(std::span<const double> profile) {
  const std::size_t n = profile.size();
  double total = 0.0;
  for (double v : profile)
    total += v;
  if (!(total > 0.0))
    fail(ErrorKind::invalid_argument, "profile has no mass", "profile");
  const std::size_t peak =
      static_cast<std::size_t>(std::max_element(profile.begin(), profile.end()) - profile.begin());

  HalfMassWindow w{peak, peak, 1, peak};
  double mass = profile[peak];
  std::size_t lo = peak, hi = peak;
  // Running sums drift by a few ulps; without slack a uniform profile can need
  // one cell past the exact half.
  const double half = 0.5 * total * (1.0 - 1e-12);
  while (mass < half && w.length < n) {
    const std::size_t next = (hi + 1) % n;
    const std::size_t prev = (lo + n - 1) % n;
    if (profile[next] >= profile[prev]) {
      mass += profile[next];
      hi = w.last_added = next;
    } else {
      mass += profile[prev];
      lo = w.last_added = prev;
    }
    ++w.length;
  }
  w.first = lo;
  return w;
}

/// Sp: membrane measure of the half-mass window.
inline double sp_half_mass(const ConcentrationProfile &profile, const PFParams &pf = {}) {
  pf.validate();
  const auto w = half_mass_window(profile);
  return pf.surface_area / static_cast<double>(kNumCells) * static_cast<double>(w.length);
}

/// PF = (1 - 2 Sp/SA) * (a x)^5 / (1 + (a x)^5), x the peak concentration.
/// An all-zero profile has PF 0.
inline double polarization_factor(const ConcentrationProfile &profile, const PFParams &pf = {}) {
  pf.validate();
  for (double v : profile)
    if (!std::isfinite(v) || v < 0.0)
      fail(ErrorKind::invalid_argument, "profile values must be finite and >= 0", "profile");
  if (std::all_of(profile.begin(), profile.end(), [](double v) { return v == 0.0; }))
    return 0.0;
  const auto w = half_mass_window(profile);
  // Sp/SA = length / 400, independent of SA.
  const double spread = 1.0 - 2.0 * static_cast<double>(w.length) / static_cast<double>(kNumCells);
  const double ax5 = std::pow(pf.a * profile[w.argmax], 5);
  return spread * ax5 / (1.0 + ax5);
}

/// Affine map of each raw range onto [-1, 1].
inline ParameterConfig normalize(std::span<const double> raw, const ParameterSpace &space) {
  const ParameterConfig r = to_config(raw, "raw");
  ParameterConfig out{};
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const auto &e = space[i];
    out[i] = 2.0 * (r[i] - e.raw_lo) / (e.raw_hi - e.raw_lo) - 1.0;
  }
  return out;
}

inline std::array<double, kNumParams> denormalize(const ParameterConfig &config,
                                                  const ParameterSpace &space) {
  std::array<double, kNumParams> out{};
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const auto &e = space[i];
    out[i] = e.raw_lo + (config[i] + 1.0) * 0.5 * (e.raw_hi - e.raw_lo);
  }
  return out;
}

struct Dataset {
  std::vector<ParameterConfig> configs;
  std::vector<ConcentrationProfile> profiles;
  std::vector<double> pf;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return configs.size(); }
  bool empty() const noexcept { return configs.empty(); }

  void validate() const {
    if (configs.size() != profiles.size() || configs.size() != pf.size())
      fail(ErrorKind::shape_mismatch, "dataset lists differ in length", "dataset");
  }

  /// Rows [first, first + count).
  Dataset slice(std::size_t first, std::size_t count) const {
    Dataset d;
    d.seed = seed;
    for (std::size_t i = first; i < first + count && i < size(); ++i) {
      d.configs.push_back(configs[i]);
      d.profiles.push_back(profiles[i]);
      d.pf.push_back(pf[i]);
    }
    return d;
  }
};

inline Dataset dataset_from_configs(std::vector<ParameterConfig> configs,
                                    std::vector<ConcentrationProfile> profiles,
                                    const PFParams &pf = {}) {
  Dataset d;
  d.configs = std::move(configs);
  d.profiles = std::move(profiles);
  if (d.configs.size() != d.profiles.size())
    fail(ErrorKind::shape_mismatch, "configs and profiles differ in count", "dataset");
  d.pf.reserve(d.size());
  for (const auto &p : d.profiles)
    d.pf.push_back(polarization_factor(p, pf));
  return d;
}

/// n configs drawn uniformly from [-1, 1]^35; sample i uses its own derived
/// stream so the result does not depend on generation order.
inline Dataset generate_dataset(long long n, std::uint64_t seed, const PFParams &pf = {},
                                const OracleShape &shape = {}) {
  if (n <= 0)
    fail(ErrorKind::invalid_argument, "dataset size must be >= 1", "n");
  std::vector<ParameterConfig> configs(static_cast<std::size_t>(n));
  std::vector<ConcentrationProfile> profiles(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    for (auto &v : configs[i])
      v = rng.uniform(-1.0, 1.0);
    profiles[i] = simulate(configs[i], std::nullopt, shape);
  }
  Dataset d = dataset_from_configs(std::move(configs), std::move(profiles), pf);
  d.seed = seed;
  return d;
}

// ---- text formats -----------------------------------------------------------

namespace csv {

inline std::string format_number(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<double> parse_numbers(std::string_view line, const std::string &where,
                                         ErrorKind kind = ErrorKind::corrupt_file) {
  std::vector<double> out;
  for (auto field : split(line)) {
    field = trim(field);
    double v = 0.0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
      fail(kind, "bad number '" + std::string(field) + "' in " + where, where);
    out.push_back(v);
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::io, "cannot open " + path.string(), "path");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (!line.empty())
      lines.push_back(line);
  }
  return lines;
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    fail(ErrorKind::io, "cannot write " + path.string(), "path");
  out << text;
  if (!out)
    fail(ErrorKind::io, "write failed for " + path.string(), "path");
}

} // namespace csv

/// Simulation-ready text: a header of parameter names, then one row of raw
/// (denormalized) values per config. LF line endings, 17 significant digits.
inline std::string format_configs(std::span<const ParameterConfig> configs,
                                  const ParameterSpace &space) {
  if (configs.empty())
    fail(ErrorKind::invalid_argument, "nothing to export", "configs");
  std::string text;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (i)
      text += ',';
    text += space[i].name;
  }
  text += '\n';
  for (const auto &c : configs) {
    const auto raw = denormalize(c, space);
    for (std::size_t i = 0; i < kNumParams; ++i) {
      if (i)
        text += ',';
      text += csv::format_number(raw[i]);
    }
    text += '\n';
  }
  return text;
}

inline std::vector<ParameterConfig> parse_configs(const std::vector<std::string> &lines,
                                                  const ParameterSpace &space,
                                                  const std::string &where) {
  if (lines.empty())
    fail(ErrorKind::corrupt_file, "missing header in " + where);
  const auto header = csv::split(lines.front());
  if (header.size() != kNumParams)
    fail(ErrorKind::shape_mismatch, "header needs 35 names in " + where);
  // Columns may appear in any order; map them back to space order.
  std::array<std::size_t, kNumParams> column_of{};
  for (std::size_t c = 0; c < kNumParams; ++c) {
    const auto idx = space.index_of(csv::trim(header[c]));
    if (!idx)
      fail(ErrorKind::corrupt_file, "unknown parameter '" + std::string(header[c]) + "' in " + where);
    column_of[*idx] = c;
  }
  std::vector<ParameterConfig> out;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto values = csv::parse_numbers(lines[r], where + " line " + std::to_string(r + 1));
    if (values.size() != kNumParams)
      fail(ErrorKind::shape_mismatch, "row " + std::to_string(r + 1) + " of " + where +
                                          " has " + std::to_string(values.size()) + " values");
    std::array<double, kNumParams> raw{};
    for (std::size_t i = 0; i < kNumParams; ++i)
      raw[i] = values[column_of[i]];
    out.push_back(normalize(raw, space));
  }
  return out;
}

inline void export_configs(std::span<const ParameterConfig> configs, const ParameterSpace &space,
                           const std::filesystem::path &destination) {
  csv::write_text(destination, format_configs(configs, space));
}

inline std::vector<ParameterConfig> import_configs(const std::filesystem::path &source,
                                                   const ParameterSpace &space) {
  return parse_configs(csv::read_lines(source), space, source.string());
}

/// Companion file holding one 400-value profile per config row.
inline std::filesystem::path profile_path_for(const std::filesystem::path &configs_path) {
  auto p = configs_path;
  p.replace_extension(".profiles.csv");
  return p;
}

inline void save_dataset(const Dataset &d, const ParameterSpace &space,
                         const std::filesystem::path &configs_path) {
  d.validate();
  export_configs(d.configs, space, configs_path);
  std::string text;
  for (const auto &p : d.profiles) {
    for (std::size_t i = 0; i < kNumCells; ++i) {
      if (i)
        text += ',';
      text += csv::format_number(p[i]);
    }
    text += '\n';
  }
  csv::write_text(profile_path_for(configs_path), text);
}

inline Dataset load_dataset(const std::filesystem::path &configs_path, const ParameterSpace &space,
                            const PFParams &pf = {}) {
  auto configs = import_configs(configs_path, space);
  const auto ppath = profile_path_for(configs_path);
  const auto lines = csv::read_lines(ppath);
  if (lines.size() != configs.size())
    fail(ErrorKind::shape_mismatch, ppath.string() + " has " + std::to_string(lines.size()) +
                                        " profiles for " + std::to_string(configs.size()) +
                                        " configs");
  std::vector<ConcentrationProfile> profiles;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto values = csv::parse_numbers(lines[r], ppath.string());
    if (values.size() != kNumCells)
      fail(ErrorKind::shape_mismatch,
           "profile row " + std::to_string(r + 1) + " needs 400 values");
    ConcentrationProfile p{};
    std::copy(values.begin(), values.end(), p.begin());
    profiles.push_back(p);
  }
  return dataset_from_configs(std::move(configs), std::move(profiles), pf);
}

/// Parameter space file: one "name,raw_lo,raw_hi" line per parameter.
inline ParameterSpace load_parameter_space(const std::filesystem::path &path) {
  std::vector<ParameterRange> entries;
  for (const auto &line : csv::read_lines(path)) {
    if (line.starts_with('#'))
      continue;
    const auto fields = csv::split(line);
    if (fields.size() != 3)
      fail(ErrorKind::corrupt_file, "expected name,raw_lo,raw_hi in " + path.string());
    const auto lo = csv::parse_numbers(fields[1], path.string());
    const auto hi = csv::parse_numbers(fields[2], path.string());
    entries.push_back({std::string(csv::trim(fields[0])), lo[0], hi[0]});
  }
  return ParameterSpace(std::move(entries));
}

} // namespace cellsteer
