#pragma once

#include <charconv>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mcpinn/abc.hpp"
#include "mcpinn/train.hpp"

// Run configuration: a flat sectioned key-value file ([section] headers,
// key = value lines, full-line # or ; comments) plus the bindings that turn
// sections into typed module configs. Malformed input raises ConfigError
// with the file name and line, which the CLI maps to the usage exit code.

namespace mcpinn {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace detail

class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static ConfigFile parse(std::string text, std::string name = "config") {
    ConfigFile cfg;
    cfg.raw_ = std::move(text);
    cfg.name_ = std::move(name);

    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= cfg.raw_.size()) {
      const std::size_t nl = cfg.raw_.find('\n', pos);
      const std::size_t end = nl == std::string::npos ? cfg.raw_.size() : nl;
      std::string_view line(cfg.raw_.data() + pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (nl == std::string::npos && line.empty()) break;

      line = detail::trim(line);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;

      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) {
          throw ConfigError(cfg.where(line_no) + "malformed section header");
        }
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ConfigError(cfg.where(line_no) + "empty section name");
        cfg.sections_[section];  // a section may legitimately stay empty
        continue;
      }

      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(cfg.where(line_no) + "expected 'key = value'");
      }
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string value(detail::trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(cfg.where(line_no) + "empty key");
      if (section.empty()) {
        throw ConfigError(cfg.where(line_no) + "key '" + key + "' outside any [section]");
      }
      auto [it, inserted] = cfg.sections_[section].emplace(key, Entry{value, line_no});
      if (!inserted) {
        throw ConfigError(cfg.where(line_no) + "duplicate key '" + key + "' in [" + section +
                          "] (first on line " + std::to_string(it->second.line) + ")");
      }
    }
    return cfg;
  }

  const std::string& raw() const { return raw_; }
  const std::string& name() const { return name_; }

  bool has_section(const std::string& section) const { return sections_.count(section) > 0; }
  bool has(const std::string& section, const std::string& key) const {
    const auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
  }

  const Entry& entry(const std::string& section, const std::string& key) const {
    const auto it = sections_.find(section);
    if (it == sections_.end()) {
      throw ConfigError(name_ + ": missing required section [" + section + "]");
    }
    const auto kit = it->second.find(key);
    if (kit == it->second.end()) {
      throw ConfigError(name_ + ": missing required key '" + key + "' in [" + section + "]");
    }
    return kit->second;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    return entry(section, key).value;
  }
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    return has(section, key) ? entry(section, key).value : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    const Entry& e = entry(section, key);
    double v = 0.0;
    const auto res = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (res.ec != std::errc() || res.ptr != e.value.data() + e.value.size()) {
      throw ConfigError(where(e.line) + "'" + key + "' must be a real number, got '" + e.value +
                        "'");
    }
    return v;
  }
  double get_double(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
  }

  std::int64_t get_int(const std::string& section, const std::string& key) const {
    const Entry& e = entry(section, key);
    std::int64_t v = 0;
    const auto res = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (res.ec != std::errc() || res.ptr != e.value.data() + e.value.size()) {
      throw ConfigError(where(e.line) + "'" + key + "' must be an integer, got '" + e.value +
                        "'");
    }
    return v;
  }
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const Entry& e = entry(section, key);
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ConfigError(where(e.line) + "'" + key + "' must be a boolean, got '" + e.value + "'");
  }

  // Whitespace-separated list of reals.
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const {
    const Entry& e = entry(section, key);
    std::vector<double> out;
    std::string_view rest(e.value);
    while (true) {
      rest = detail::trim(rest);
      if (rest.empty()) break;
      double v = 0.0;
      const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), v);
      if (res.ec != std::errc()) {
        throw ConfigError(where(e.line) + "'" + key + "' must list reals, got '" + e.value +
                          "'");
      }
      out.push_back(v);
      rest.remove_prefix(static_cast<std::size_t>(res.ptr - rest.data()));
    }
    return out;
  }

  std::vector<int> get_ints(const std::string& section, const std::string& key) const {
    const Entry& e = entry(section, key);
    std::vector<int> out;
    std::string_view rest(e.value);
    while (true) {
      rest = detail::trim(rest);
      if (rest.empty()) break;
      int v = 0;
      const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), v);
      if (res.ec != std::errc()) {
        throw ConfigError(where(e.line) + "'" + key + "' must list integers, got '" + e.value +
                          "'");
      }
      out.push_back(v);
      rest.remove_prefix(static_cast<std::size_t>(res.ptr - rest.data()));
    }
    return out;
  }

  // Semicolon-separated rows of whitespace-separated reals; used for point
  // and sensor lists. Row indices in diagnostics are 1-based.
  std::vector<std::vector<double>> get_point_rows(const std::string& section,
                                                  const std::string& key) const {
    const Entry& e = entry(section, key);
    std::vector<std::vector<double>> rows;
    std::string_view rest(e.value);
    int row_index = 0;
    while (!rest.empty()) {
      const std::size_t semi = rest.find(';');
      std::string_view piece = rest.substr(0, semi);
      rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
      ++row_index;

      std::vector<double> row;
      std::string_view p = detail::trim(piece);
      while (!p.empty()) {
        double v = 0.0;
        const auto res = std::from_chars(p.data(), p.data() + p.size(), v);
        if (res.ec != std::errc()) {
          throw ConfigError(where(e.line) + "'" + key + "' row " + std::to_string(row_index) +
                            ": unparseable value in '" + std::string(piece) + "'");
        }
        row.push_back(v);
        p = detail::trim(p.substr(static_cast<std::size_t>(res.ptr - p.data())));
      }
      if (row.empty()) {
        throw ConfigError(where(e.line) + "'" + key + "' row " + std::to_string(row_index) +
                          " is empty");
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }

  // Typo guard: every present key in the section must be on the list.
  void require_known(const std::string& section, const std::set<std::string>& allowed) const {
    const auto it = sections_.find(section);
    if (it == sections_.end()) return;
    for (const auto& [key, e] : it->second) {
      if (!allowed.count(key)) {
        throw ConfigError(where(e.line) + "unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  std::string where(int line) const { return name_ + ":" + std::to_string(line) + ": "; }

 private:
  std::string raw_;
  std::string name_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

// ---------------------------------------------------------------------------
// Section bindings.
// ---------------------------------------------------------------------------

inline ProblemSpec problem_from_config(const ConfigFile& cfg) {
  cfg.require_known("problem",
                    {"family", "d", "alpha", "gamma", "c", "v", "t_final", "n_sensors", "n_init",
                     "alpha_ref", "alpha_lo", "alpha_hi", "mu_lo", "mu_hi", "hidden"});

  ProblemSpec prob;
  const std::string family = cfg.get_string("problem", "family");
  if (family == "forward_laplacian") {
    prob.family = Family::kForwardLaplacian;
  } else if (family == "forward_ade") {
    prob.family = Family::kForwardAde;
  } else if (family == "inverse_ade") {
    prob.family = Family::kInverseAde;
  } else if (family == "parametric") {
    prob.family = Family::kParametricDiffusion;
  } else {
    throw ConfigError(cfg.name() + ": [problem] family must be one of forward_laplacian, " +
                      "forward_ade, inverse_ade, parametric; got '" + family + "'");
  }

  prob.d = static_cast<int>(cfg.get_int("problem", "d", prob.d));
  prob.alpha = cfg.get_double("problem", "alpha", prob.alpha);
  prob.gamma_ord = cfg.get_double("problem", "gamma", prob.gamma_ord);
  prob.c = cfg.get_double("problem", "c", prob.c);
  if (cfg.has("problem", "v")) {
    prob.v = cfg.get_doubles("problem", "v");
  } else if (prob.time_dependent()) {
    prob.v.assign(static_cast<std::size_t>(prob.d), 0.0);
  }
  prob.t_final = cfg.get_double("problem", "t_final", prob.t_final);
  prob.n_sensors = static_cast<int>(
      cfg.get_int("problem", "n_sensors", default_sensor_count(prob.d)));
  prob.n_init = static_cast<int>(cfg.get_int("problem", "n_init", prob.n_init));
  prob.alpha_ref = cfg.get_double("problem", "alpha_ref", prob.alpha_ref);
  prob.alpha_lo = cfg.get_double("problem", "alpha_lo", prob.alpha_lo);
  prob.alpha_hi = cfg.get_double("problem", "alpha_hi", prob.alpha_hi);
  prob.mu_lo = cfg.get_double("problem", "mu_lo", prob.mu_lo);
  prob.mu_hi = cfg.get_double("problem", "mu_hi", prob.mu_hi);
  if (cfg.has("problem", "hidden")) prob.hidden = cfg.get_ints("problem", "hidden");

  try {
    prob.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(cfg.name() + ": [problem] " + err.what());
  }
  return prob;
}

inline TrainConfig train_from_config(const ConfigFile& cfg, const ProblemSpec& prob) {
  cfg.require_known("train", {"epochs", "batch_size", "lr", "m", "r0", "eps", "eps_t", "mode",
                              "w_equ", "w_g", "w_u", "loss_stride", "n_test"});

  TrainConfig tc = TrainConfig::defaults_for(prob);
  tc.epochs = static_cast<int>(cfg.get_int("train", "epochs", tc.epochs));
  tc.batch_size = static_cast<int>(cfg.get_int("train", "batch_size", tc.batch_size));
  tc.lr = cfg.get_double("train", "lr", tc.lr);
  tc.estimator.m = static_cast<int>(cfg.get_int("train", "m", tc.estimator.m));
  tc.estimator.r0 = cfg.get_double("train", "r0", tc.estimator.r0);
  tc.estimator.eps = cfg.get_double("train", "eps", tc.estimator.eps);
  tc.estimator.eps_t = cfg.get_double("train", "eps_t", tc.estimator.eps_t);
  if (cfg.has("train", "mode")) {
    const std::string mode = cfg.get_string("train", "mode");
    if (mode == "paired") {
      tc.mode = LossMode::kPaired;
    } else if (mode == "group_mean") {
      tc.mode = LossMode::kGroupMean;
    } else {
      throw ConfigError(cfg.name() + ": [train] mode must be paired or group_mean, got '" +
                        mode + "'");
    }
  }
  tc.weights.w_equ = cfg.get_double("train", "w_equ", tc.weights.w_equ);
  tc.weights.w_g = cfg.get_double("train", "w_g", tc.weights.w_g);
  tc.weights.w_u = cfg.get_double("train", "w_u", tc.weights.w_u);
  tc.loss_stride = static_cast<int>(cfg.get_int("train", "loss_stride", tc.loss_stride));
  tc.n_test = static_cast<int>(cfg.get_int("train", "n_test", tc.n_test));

  try {
    tc.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(cfg.name() + ": [train] " + err.what());
  }
  return tc;
}

inline AbcConfig abc_from_config(const ConfigFile& cfg, const ProblemSpec& prob) {
  cfg.require_known("abc", {"n_draws", "tolerance", "alpha_lo", "alpha_hi", "mu_lo", "mu_hi",
                            "sensor_positions"});

  AbcConfig abc;
  abc.n_draws = cfg.get_int("abc", "n_draws", abc.n_draws);
  abc.tolerance = cfg.get_double("abc", "tolerance", abc.tolerance);
  abc.alpha_lo = cfg.get_double("abc", "alpha_lo", prob.alpha_lo);
  abc.alpha_hi = cfg.get_double("abc", "alpha_hi", prob.alpha_hi);
  abc.mu_lo = cfg.get_double("abc", "mu_lo", prob.mu_lo);
  abc.mu_hi = cfg.get_double("abc", "mu_hi", prob.mu_hi);

  std::vector<std::vector<double>> positions;
  if (cfg.has("abc", "sensor_positions")) {
    positions = cfg.get_point_rows("abc", "sensor_positions");
  } else {
    positions = default_abc_sensor_positions();
  }
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (positions[k].size() != static_cast<std::size_t>(prob.d)) {
      throw ConfigError(cfg.name() + ": [abc] sensor_positions row " + std::to_string(k + 1) +
                        " has " + std::to_string(positions[k].size()) + " coordinates, problem " +
                        "dimension is " + std::to_string(prob.d));
    }
    TaggedPoint pt;
    pt.coords = positions[k];
    pt.value = exact_solution_laplacian(pt.coords, prob.alpha_ref);
    abc.sensors.push_back(std::move(pt));
  }

  try {
    abc.validate();
    abc.require_within(prob);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(cfg.name() + ": [abc] " + err.what());
  }
  return abc;
}

// Estimator diagnostic sweep over (m, r0) cells on an analytic field.
struct EstimateConfig {
  int d = 1;
  double alpha = 1.5;
  std::vector<double> x;  // evaluation point, defaults to the origin
  std::vector<int> m_list = {5, 10, 20, 40};
  std::vector<double> r0_list = {0.2};
  int n_groups = 4000;
  std::string field = "manufactured";  // or "constant"
  EstimatorConfig estimator;

  void validate() const {
    if (d < 1) throw std::invalid_argument("estimate: d >= 1 required");
    if (!(alpha > 0.0) || !(alpha < 2.0)) {
      throw std::invalid_argument("estimate: alpha in (0, 2) required");
    }
    if (x.size() != static_cast<std::size_t>(d)) {
      throw std::invalid_argument("estimate: point has wrong dimension");
    }
    if (m_list.empty() || r0_list.empty()) {
      throw std::invalid_argument("estimate: m_list and r0_list must be non-empty");
    }
    for (int m : m_list) {
      if (m < 1) throw std::invalid_argument("estimate: every m must be >= 1");
    }
    for (double r0 : r0_list) {
      if (!(r0 > 0.0)) throw std::invalid_argument("estimate: every r0 must be positive");
    }
    if (n_groups < 2) throw std::invalid_argument("estimate: n_groups >= 2 required");
    if (field != "manufactured" && field != "constant") {
      throw std::invalid_argument("estimate: field must be manufactured or constant");
    }
    double n2 = 0.0;
    for (double c : x) n2 += c * c;
    if (!(n2 < 1.0)) throw std::invalid_argument("estimate: point must lie inside the unit ball");
  }
};

inline EstimateConfig estimate_from_config(const ConfigFile& cfg) {
  cfg.require_known("estimate",
                    {"d", "alpha", "x", "m_list", "r0_list", "n_groups", "field", "eps"});

  EstimateConfig est;
  est.d = static_cast<int>(cfg.get_int("estimate", "d", est.d));
  est.alpha = cfg.get_double("estimate", "alpha", est.alpha);
  est.x = cfg.has("estimate", "x") ? cfg.get_doubles("estimate", "x")
                                   : std::vector<double>(static_cast<std::size_t>(est.d), 0.0);
  if (cfg.has("estimate", "m_list")) est.m_list = cfg.get_ints("estimate", "m_list");
  if (cfg.has("estimate", "r0_list")) est.r0_list = cfg.get_doubles("estimate", "r0_list");
  est.n_groups = static_cast<int>(cfg.get_int("estimate", "n_groups", est.n_groups));
  est.field = cfg.get_string("estimate", "field", est.field);
  est.estimator.eps = cfg.get_double("estimate", "eps", est.estimator.eps);

  try {
    est.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(cfg.name() + ": [estimate] " + err.what());
  }
  return est;
}

// Reference-value evaluation at explicit points.
struct OracleConfig {
  std::string op = "laplacian";  // laplacian | caputo | forcing
  int d = 1;
  double alpha = 1.5;
  double gamma_ord = 0.5;
  double abs_tol = 1e-9;
  std::vector<std::vector<double>> points;

  void validate() const {
    if (op != "laplacian" && op != "caputo" && op != "forcing") {
      throw std::invalid_argument("oracle: op must be laplacian, caputo, or forcing");
    }
    if (op != "caputo" && (d < 1 || d > 3)) {
      throw std::invalid_argument("oracle: spatial quadrature covers d in {1, 2, 3}");
    }
    if (!(alpha > 0.0) || !(alpha < 2.0)) {
      throw std::invalid_argument("oracle: alpha in (0, 2) required");
    }
    if (!(gamma_ord > 0.0) || !(gamma_ord < 1.0)) {
      throw std::invalid_argument("oracle: gamma in (0, 1) required");
    }
    if (!(abs_tol > 0.0)) throw std::invalid_argument("oracle: abs_tol > 0 required");
    const std::size_t want = op == "caputo" ? 1 : static_cast<std::size_t>(d);
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (points[k].size() != want) {
        throw std::invalid_argument("oracle: points row " + std::to_string(k + 1) + " has " +
                                    std::to_string(points[k].size()) + " values, expected " +
                                    std::to_string(want));
      }
    }
  }
};

inline OracleConfig oracle_from_config(const ConfigFile& cfg) {
  cfg.require_known("oracle", {"op", "d", "alpha", "gamma", "abs_tol", "points"});

  OracleConfig oc;
  oc.op = cfg.get_string("oracle", "op", oc.op);
  oc.d = static_cast<int>(cfg.get_int("oracle", "d", oc.d));
  oc.alpha = cfg.get_double("oracle", "alpha", oc.alpha);
  oc.gamma_ord = cfg.get_double("oracle", "gamma", oc.gamma_ord);
  oc.abs_tol = cfg.get_double("oracle", "abs_tol", oc.abs_tol);
  if (cfg.has("oracle", "points")) oc.points = cfg.get_point_rows("oracle", "points");

  try {
    oc.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(cfg.name() + ": [oracle] " + err.what());
  }
  return oc;
}

}  // namespace mcpinn
