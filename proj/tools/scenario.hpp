#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "podex/flow.hpp"
#include "podex/hamsys.hpp"
#include "podex/homopode.hpp"

namespace podex::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

/// Key-value config with [section] tables, one scenario per file.
/// Lines: `key = value`, `[section]`, comments start with '#'.
struct Scenario {
  std::string path;
  std::map<std::string, std::map<std::string, std::string>> sections;

  static Scenario load(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open scenario file: " + file);
    Scenario sc;
    sc.path = file;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(file + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(file + ":" + std::to_string(lineno) + ": expected `key = value`");
      std::string key = trim(line.substr(0, eq));
      std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(file + ":" + std::to_string(lineno) + ": empty key");
      sc.sections[section][key] = val;
    }
    return sc;
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
  }

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  std::string require(const std::string& section, const std::string& key) const {
    if (!has(section, key))
      throw ConfigError(path + ": missing required key `" + key + "` in section [" + section + "]");
    return sections.at(section).at(key);
  }

  double num(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    return parse_num(section, key, sections.at(section).at(key));
  }

  long integer(const std::string& section, const std::string& key, long fallback) const {
    double v = num(section, key, double(fallback));
    long r = long(v);
    if (double(r) != v)
      throw ConfigError(path + ": key `" + key + "` in [" + section + "] must be an integer");
    return r;
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    std::string v = sections.at(section).at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(path + ": key `" + key + "` in [" + section + "] must be a boolean");
  }

  std::vector<double> vec(const std::string& section, const std::string& key,
                          std::vector<double> fallback = {}) const {
    if (!has(section, key)) return fallback;
    std::vector<double> out;
    std::stringstream ss(sections.at(section).at(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_num(section, key, trim(item)));
    return out;
  }

  std::vector<double> require_vec(const std::string& section, const std::string& key,
                                  std::size_t size) const {
    require(section, key);
    std::vector<double> v = vec(section, key);
    if (v.size() != size)
      throw ConfigError(path + ": key `" + key + "` in [" + section + "] must have " +
                        std::to_string(size) + " comma-separated entries");
    return v;
  }

 private:
  double parse_num(const std::string& section, const std::string& key, const std::string& v) const {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty())
      throw ConfigError(path + ": key `" + key + "` in [" + section + "] is not a number: `" + v +
                        "`");
    return x;
  }
};

/// Module tolerance/config overrides shared by every task.
struct ResolvedCommon {
  std::string name;
  std::string task;
  std::size_t n = 0;
  std::string hamiltonian;
  std::uint64_t seed = 0;
  Tolerances tol;
  FlowConfig flow;
  HomopodeConfig hom;
};

inline ResolvedCommon resolve_common(const Scenario& sc) {
  ResolvedCommon c;
  c.task = sc.require("", "task");
  c.name = sc.str("", "name", c.task);
  c.n = std::size_t(sc.integer("", "n", 2));
  if (c.n < 1) throw ConfigError(sc.path + ": n must be >= 1");
  c.hamiltonian = sc.str("", "hamiltonian", "");
  c.seed = std::uint64_t(sc.integer("", "seed", 0));

  c.tol.level_tol = sc.num("tolerances", "level_tol", c.tol.level_tol);
  c.tol.submersion_tol = sc.num("tolerances", "submersion_tol", c.tol.submersion_tol);
  c.tol.capture_radius = sc.num("tolerances", "capture_radius", c.tol.capture_radius);
  c.tol.k_max_derivative = int(sc.integer("tolerances", "k_max_derivative", c.tol.k_max_derivative));

  c.flow.taylor_order = int(sc.integer("flow", "taylor_order", c.flow.taylor_order));
  c.flow.local_tol = sc.num("flow", "local_tol", c.flow.local_tol);
  c.flow.drift_tol = sc.num("flow", "drift_tol", c.flow.drift_tol);
  c.flow.chord_tol = sc.num("flow", "chord_tol", c.flow.chord_tol);
  c.flow.max_step = sc.num("flow", "max_step", c.flow.max_step);

  c.hom.solve_tol = sc.num("homopode", "solve_tol", c.hom.solve_tol);
  c.hom.diag_margin = sc.num("homopode", "diag_margin", c.hom.diag_margin);
  c.hom.rank_tol = sc.num("homopode", "rank_tol", c.hom.rank_tol);
  c.hom.dedup_eps = sc.num("homopode", "dedup_eps", c.hom.dedup_eps);
  c.hom.gn_max_iter = int(sc.integer("homopode", "gn_max_iter", c.hom.gn_max_iter));
  c.hom.max_jacobian_refresh =
      int(sc.integer("homopode", "max_jacobian_refresh", c.hom.max_jacobian_refresh));
  c.hom.stagnation_limit = int(sc.integer("homopode", "stagnation_limit", c.hom.stagnation_limit));
  c.hom.jet.axis_margin_frac = sc.num("jets", "axis_margin_frac", c.hom.jet.axis_margin_frac);
  c.hom.jet.jet_tol = sc.num("jets", "jet_tol", c.hom.jet.jet_tol);
  c.hom.jet.k_max = int(sc.integer("jets", "k_max", c.hom.jet.k_max));
  return c;
}

}  // namespace podex::cli
