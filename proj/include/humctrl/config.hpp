#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "humctrl/hum.hpp"

namespace humctrl {

// Raised for every schema problem; the message always carries the JSON
// pointer of the offending key.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TensorSpec {
  std::array<double, 2> k{1.0, 1.0};
};

struct ModeTerm {
  std::array<int, 2> mode{1, 1};
  double amp = 0.0;
};

struct ReactionSpec {
  std::string type = "none";  // none | lipschitz | cubic
  double L = 1.0;
  double c3 = 1.0;
  double c1 = 0.0;
};

struct RunConfig {
  int dim = 1;
  std::array<double, 2> extents{1.0, 0.0};
  std::array<int, 2> cells{32, 0};
  double T = 1.0;
  int steps = 64;
  double c_m = 1.0;
  double mu = 1.0;
  double epsilon = 0.0;
  double potential = 0.0;
  TensorSpec M_i, M_e;
  std::array<double, 2> win_lo{0.25, 0.0};
  std::array<double, 2> win_hi{0.75, 0.0};
  std::vector<ModeTerm> v_modes;
  std::vector<ModeTerm> ue_modes;
  ReactionSpec reaction;
  HumConfig hum;
  WeightParams weights;
  std::vector<double> sweep_eps;
  std::string out = "out";
  std::uint64_t seed = 0;
};

namespace detail {

using cfg_json = nlohmann::json;

inline void reject_unknown(const cfg_json& obj, const std::string& ptr,
                           std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key " + ptr + "/" + item.key());
  }
}

inline const cfg_json& need_object(const cfg_json& parent, const std::string& ptr,
                                   const char* key) {
  if (!parent.contains(key))
    throw ConfigError("config: missing required key " + ptr + "/" + key);
  const cfg_json& v = parent.at(key);
  if (!v.is_object())
    throw ConfigError("config: " + ptr + "/" + key + " must be an object");
  return v;
}

inline double need_number(const cfg_json& obj, const std::string& ptr,
                          const char* key) {
  if (!obj.contains(key))
    throw ConfigError("config: missing required key " + ptr + "/" + key);
  const cfg_json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError("config: " + ptr + "/" + key + " must be a number");
  return v.get<double>();
}

inline double opt_number(const cfg_json& obj, const std::string& ptr,
                         const char* key, double fallback) {
  return obj.contains(key) ? need_number(obj, ptr, key) : fallback;
}

inline long long need_integer(const cfg_json& obj, const std::string& ptr,
                              const char* key) {
  if (!obj.contains(key))
    throw ConfigError("config: missing required key " + ptr + "/" + key);
  const cfg_json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError("config: " + ptr + "/" + key + " must be an integer");
  return v.get<long long>();
}

inline std::string need_string(const cfg_json& obj, const std::string& ptr,
                               const char* key) {
  if (!obj.contains(key))
    throw ConfigError("config: missing required key " + ptr + "/" + key);
  const cfg_json& v = obj.at(key);
  if (!v.is_string())
    throw ConfigError("config: " + ptr + "/" + key + " must be a string");
  return v.get<std::string>();
}

// scalar-or-array-of-dim convenience used by tensors, windows, and centers
inline std::array<double, 2> axis_values(const cfg_json& obj, const std::string& ptr,
                                         const char* key, int dim,
                                         bool scalar_allowed) {
  if (!obj.contains(key))
    throw ConfigError("config: missing required key " + ptr + "/" + key);
  const cfg_json& v = obj.at(key);
  std::array<double, 2> out{0.0, 0.0};
  if (v.is_number() && scalar_allowed) {
    out[0] = v.get<double>();
    if (dim == 2) out[1] = out[0];
    return out;
  }
  if (!v.is_array() || static_cast<int>(v.size()) != dim)
    throw ConfigError("config: " + ptr + "/" + key + " must be an array of " +
                      std::to_string(dim) + " numbers");
  for (int a = 0; a < dim; ++a) {
    if (!v[a].is_number())
      throw ConfigError("config: " + ptr + "/" + key + " must be an array of " +
                        std::to_string(dim) + " numbers");
    out[a] = v[a].get<double>();
  }
  return out;
}

inline nlohmann::ordered_json axis_json(const std::array<double, 2>& v, int dim) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (int a = 0; a < dim; ++a) arr.push_back(v[a]);
  return arr;
}

inline std::vector<ModeTerm> parse_modes(const cfg_json& obj, const std::string& ptr,
                                         const char* key, int dim) {
  std::vector<ModeTerm> out;
  if (!obj.contains(key)) return out;
  const cfg_json& arr = obj.at(key);
  if (!arr.is_array())
    throw ConfigError("config: " + ptr + "/" + key + " must be an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string eptr = ptr + "/" + key + "/" + std::to_string(i);
    const cfg_json& e = arr[i];
    if (!e.is_object())
      throw ConfigError("config: " + eptr + " must be an object");
    reject_unknown(e, eptr, {"mode", "amp"});
    ModeTerm t;
    if (!e.contains("mode"))
      throw ConfigError("config: missing required key " + eptr + "/mode");
    const cfg_json& m = e.at("mode");
    if (m.is_number_integer()) {
      t.mode[0] = m.get<int>();
      if (dim == 2) t.mode[1] = t.mode[0];
    } else if (m.is_array() && static_cast<int>(m.size()) == dim) {
      for (int a = 0; a < dim; ++a) {
        if (!m[a].is_number_integer())
          throw ConfigError("config: " + eptr + "/mode must hold integers");
        t.mode[a] = m[a].get<int>();
      }
    } else {
      throw ConfigError("config: " + eptr + "/mode must be an integer or an array of " +
                        std::to_string(dim) + " integers");
    }
    for (int a = 0; a < dim; ++a)
      if (t.mode[a] < 1)
        throw ConfigError("config: " + eptr + "/mode must be >= 1");
    t.amp = need_number(e, eptr, "amp");
    out.push_back(t);
  }
  return out;
}

inline nlohmann::ordered_json modes_json(const std::vector<ModeTerm>& modes, int dim) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ModeTerm& t : modes) {
    nlohmann::ordered_json e;
    nlohmann::ordered_json m = nlohmann::ordered_json::array();
    for (int a = 0; a < dim; ++a) m.push_back(t.mode[a]);
    e["mode"] = m;
    e["amp"] = t.amp;
    arr.push_back(e);
  }
  return arr;
}

}  // namespace detail

inline RunConfig parse_config_json(const nlohmann::json& root) {
  using detail::cfg_json;
  if (!root.is_object()) throw ConfigError("config: document root must be an object");
  detail::reject_unknown(root, "", {"domain", "time", "physics", "window", "initial",
                                    "reaction", "hum", "weights", "sweep", "out",
                                    "seed"});
  RunConfig c;

  const cfg_json& dom = detail::need_object(root, "", "domain");
  detail::reject_unknown(dom, "/domain", {"dim", "extents", "cells"});
  const long long dim = detail::need_integer(dom, "/domain", "dim");
  if (dim != 1 && dim != 2) throw ConfigError("config: /domain/dim must be 1 or 2");
  c.dim = static_cast<int>(dim);
  c.extents = detail::axis_values(dom, "/domain", "extents", c.dim, false);
  for (int a = 0; a < c.dim; ++a)
    if (!(c.extents[a] > 0.0))
      throw ConfigError("config: /domain/extents must be > 0");
  {
    if (!dom.contains("cells"))
      throw ConfigError("config: missing required key /domain/cells");
    const cfg_json& cells = dom.at("cells");
    if (!cells.is_array() || static_cast<int>(cells.size()) != c.dim)
      throw ConfigError("config: /domain/cells must be an array of " +
                        std::to_string(c.dim) + " integers");
    for (int a = 0; a < c.dim; ++a) {
      if (!cells[a].is_number_integer() || cells[a].get<long long>() < 3)
        throw ConfigError("config: /domain/cells must hold integers >= 3");
      c.cells[a] = cells[a].get<int>();
    }
    if (c.dim == 1) {
      c.cells[1] = 0;
      c.extents[1] = 0.0;
    }
  }

  const cfg_json& time = detail::need_object(root, "", "time");
  detail::reject_unknown(time, "/time", {"T", "steps"});
  c.T = detail::need_number(time, "/time", "T");
  if (!(c.T > 0.0)) throw ConfigError("config: /time/T must be > 0");
  const long long steps = detail::need_integer(time, "/time", "steps");
  if (steps < 2) throw ConfigError("config: /time/steps must be >= 2");
  c.steps = static_cast<int>(steps);

  const cfg_json& phy = detail::need_object(root, "", "physics");
  detail::reject_unknown(phy, "/physics",
                         {"c_m", "mu", "epsilon", "M_i", "M_e", "potential"});
  c.c_m = detail::need_number(phy, "/physics", "c_m");
  if (!(c.c_m > 0.0)) throw ConfigError("config: /physics/c_m must be > 0");
  c.mu = detail::need_number(phy, "/physics", "mu");
  if (!(c.mu > 0.0)) throw ConfigError("config: /physics/mu must be > 0");
  c.epsilon = detail::need_number(phy, "/physics", "epsilon");
  if (!(c.epsilon >= 0.0)) throw ConfigError("config: /physics/epsilon must be >= 0");
  c.potential = detail::opt_number(phy, "/physics", "potential", 0.0);
  auto tensor = [&](const char* key) {
    TensorSpec t;
    if (phy.contains(key)) {
      t.k = detail::axis_values(phy, "/physics", key, c.dim, true);
      for (int a = 0; a < c.dim; ++a)
        if (!(t.k[a] > 0.0))
          throw ConfigError(std::string("config: /physics/") + key + " must be > 0");
    } else {
      t.k = {1.0, 1.0};
    }
    if (c.dim == 1) t.k[1] = t.k[0];
    return t;
  };
  c.M_i = tensor("M_i");
  c.M_e = tensor("M_e");

  if (root.contains("window")) {
    const cfg_json& win = detail::need_object(root, "", "window");
    detail::reject_unknown(win, "/window", {"lo", "hi"});
    c.win_lo = detail::axis_values(win, "/window", "lo", c.dim, false);
    c.win_hi = detail::axis_values(win, "/window", "hi", c.dim, false);
  } else {
    for (int a = 0; a < c.dim; ++a) {
      c.win_lo[a] = 0.25 * c.extents[a];
      c.win_hi[a] = 0.75 * c.extents[a];
    }
  }
  for (int a = 0; a < c.dim; ++a)
    if (!(c.win_lo[a] >= 0.0) || !(c.win_hi[a] <= c.extents[a]) ||
        !(c.win_lo[a] < c.win_hi[a]))
      throw ConfigError(
          "config: /window must satisfy 0 <= lo < hi <= domain extent");
  if (c.dim == 1) {
    c.win_lo[1] = 0.0;
    c.win_hi[1] = 0.0;
  }

  if (root.contains("initial")) {
    const cfg_json& init = detail::need_object(root, "", "initial");
    detail::reject_unknown(init, "/initial", {"v", "ue"});
    c.v_modes = detail::parse_modes(init, "/initial", "v", c.dim);
    c.ue_modes = detail::parse_modes(init, "/initial", "ue", c.dim);
  } else {
    ModeTerm t;
    t.mode = {1, 1};
    t.amp = 1.0;
    c.v_modes = {t};
  }

  if (root.contains("reaction")) {
    const cfg_json& rx = detail::need_object(root, "", "reaction");
    c.reaction.type = detail::need_string(rx, "/reaction", "type");
    if (c.reaction.type == "none") {
      detail::reject_unknown(rx, "/reaction", {"type"});
    } else if (c.reaction.type == "lipschitz") {
      detail::reject_unknown(rx, "/reaction", {"type", "L"});
      c.reaction.L = detail::opt_number(rx, "/reaction", "L", 1.0);
      if (!(c.reaction.L >= 0.0))
        throw ConfigError("config: /reaction/L must be >= 0");
    } else if (c.reaction.type == "cubic") {
      detail::reject_unknown(rx, "/reaction", {"type", "c3", "c1"});
      c.reaction.c3 = detail::opt_number(rx, "/reaction", "c3", 1.0);
      c.reaction.c1 = detail::opt_number(rx, "/reaction", "c1", 0.0);
      if (!(c.reaction.c3 > 0.0))
        throw ConfigError("config: /reaction/c3 must be > 0");
      if (!(c.reaction.c1 >= 0.0))
        throw ConfigError("config: /reaction/c1 must be >= 0");
    } else {
      throw ConfigError(
          "config: /reaction/type must be one of none, lipschitz, cubic");
    }
    if (c.reaction.type != "none" && c.potential != 0.0)
      throw ConfigError(
          "config: /physics/potential must be 0 when /reaction is configured");
  }

  if (root.contains("hum")) {
    const cfg_json& hum = detail::need_object(root, "", "hum");
    detail::reject_unknown(hum, "/hum",
                           {"delta", "mode", "q", "max_iters", "stop_tol"});
    c.hum.delta = detail::opt_number(hum, "/hum", "delta", 1e-3);
    if (!(c.hum.delta > 0.0)) throw ConfigError("config: /hum/delta must be > 0");
    if (hum.contains("mode")) {
      const std::string mode = detail::need_string(hum, "/hum", "mode");
      if (mode == "plain")
        c.hum.mode = HumMode::plain;
      else if (mode == "weighted")
        c.hum.mode = HumMode::weighted;
      else
        throw ConfigError("config: /hum/mode must be plain or weighted");
    }
    c.hum.q = detail::opt_number(hum, "/hum", "q", 4.0);
    if (!(c.hum.q > 0.0)) throw ConfigError("config: /hum/q must be > 0");
    if (hum.contains("max_iters")) {
      const long long mi = detail::need_integer(hum, "/hum", "max_iters");
      if (mi < 1) throw ConfigError("config: /hum/max_iters must be >= 1");
      c.hum.max_iters = static_cast<int>(mi);
    }
    c.hum.stop_tol = detail::opt_number(hum, "/hum", "stop_tol", 1e-9);
    if (!(c.hum.stop_tol > 0.0))
      throw ConfigError("config: /hum/stop_tol must be > 0");
  }

  for (int a = 0; a < 2; ++a)
    c.weights.center[a] = 0.5 * c.extents[a];
  if (root.contains("weights")) {
    const cfg_json& w = detail::need_object(root, "", "weights");
    detail::reject_unknown(w, "/weights", {"center", "m", "s0"});
    if (w.contains("center")) {
      const std::array<double, 2> ctr =
          detail::axis_values(w, "/weights", "center", c.dim, false);
      for (int a = 0; a < c.dim; ++a) {
        if (!(ctr[a] > 0.0) || !(ctr[a] < c.extents[a]))
          throw ConfigError(
              "config: /weights/center must lie strictly inside the domain");
        c.weights.center[a] = ctr[a];
      }
    }
    c.weights.m = detail::opt_number(w, "/weights", "m", 2.0);
    if (!(c.weights.m > 1.0))
      throw ConfigError("config: /weights/m must satisfy m > 1");
    c.weights.s0 = detail::opt_number(w, "/weights", "s0", 1.0);
    if (!(c.weights.s0 > 0.0)) throw ConfigError("config: /weights/s0 must be > 0");
  }

  if (root.contains("sweep")) {
    const cfg_json& sw = detail::need_object(root, "", "sweep");
    detail::reject_unknown(sw, "/sweep", {"epsilons"});
    if (!sw.contains("epsilons"))
      throw ConfigError("config: missing required key /sweep/epsilons");
    const cfg_json& eps = sw.at("epsilons");
    if (!eps.is_array() || eps.empty())
      throw ConfigError("config: /sweep/epsilons must be a nonempty array");
    for (std::size_t i = 0; i < eps.size(); ++i) {
      if (!eps[i].is_number())
        throw ConfigError("config: /sweep/epsilons must hold numbers");
      const double e = eps[i].get<double>();
      if (!(e >= 0.0))
        throw ConfigError("config: /sweep/epsilons must be >= 0");
      if (i > 0 && !(e < c.sweep_eps.back()))
        throw ConfigError("config: /sweep/epsilons must be strictly decreasing");
      c.sweep_eps.push_back(e);
    }
  } else {
    c.sweep_eps = {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0};
  }

  if (root.contains("out")) {
    c.out = detail::need_string(root, "", "out");
    if (c.out.empty()) throw ConfigError("config: /out must be a nonempty path");
  }
  if (root.contains("seed")) {
    const cfg_json& s = root.at("seed");
    if (!s.is_number_unsigned())
      throw ConfigError("config: /seed must be an unsigned integer");
    c.seed = s.get<std::uint64_t>();
  }
  c.hum.seed = c.seed;
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config_json(root);
}

// Canonical form: every field explicit, arrays sized to dim. Feeding the
// result back through parse_config_json reproduces the config exactly.
inline nlohmann::ordered_json serialize_config(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["domain"]["dim"] = c.dim;
  j["domain"]["extents"] = detail::axis_json(c.extents, c.dim);
  {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (int a = 0; a < c.dim; ++a) cells.push_back(c.cells[a]);
    j["domain"]["cells"] = cells;
  }
  j["time"]["T"] = c.T;
  j["time"]["steps"] = c.steps;
  j["physics"]["c_m"] = c.c_m;
  j["physics"]["mu"] = c.mu;
  j["physics"]["epsilon"] = c.epsilon;
  j["physics"]["M_i"] = detail::axis_json(c.M_i.k, c.dim);
  j["physics"]["M_e"] = detail::axis_json(c.M_e.k, c.dim);
  j["physics"]["potential"] = c.potential;
  j["window"]["lo"] = detail::axis_json(c.win_lo, c.dim);
  j["window"]["hi"] = detail::axis_json(c.win_hi, c.dim);
  j["initial"]["v"] = detail::modes_json(c.v_modes, c.dim);
  j["initial"]["ue"] = detail::modes_json(c.ue_modes, c.dim);
  j["reaction"]["type"] = c.reaction.type;
  if (c.reaction.type == "lipschitz") j["reaction"]["L"] = c.reaction.L;
  if (c.reaction.type == "cubic") {
    j["reaction"]["c3"] = c.reaction.c3;
    j["reaction"]["c1"] = c.reaction.c1;
  }
  j["hum"]["delta"] = c.hum.delta;
  j["hum"]["mode"] = mode_name(c.hum.mode);
  j["hum"]["q"] = c.hum.q;
  j["hum"]["max_iters"] = c.hum.max_iters;
  j["hum"]["stop_tol"] = c.hum.stop_tol;
  {
    std::array<double, 2> ctr = c.weights.center;
    j["weights"]["center"] = detail::axis_json(ctr, c.dim);
  }
  j["weights"]["m"] = c.weights.m;
  j["weights"]["s0"] = c.weights.s0;
  j["sweep"]["epsilons"] = c.sweep_eps;
  j["out"] = c.out;
  j["seed"] = c.seed;
  return j;
}

inline ProblemSpec make_problem(const RunConfig& c) {
  ProblemSpec ps;
  ps.grid = build_grid(c.dim, c.extents, c.cells);
  ps.c_m = c.c_m;
  ps.mu = c.mu;
  ps.epsilon = c.epsilon;
  ps.M_i = c.dim == 2 && c.M_i.k[0] != c.M_i.k[1]
               ? Tensor::diagonal([kx = c.M_i.k[0]](double, double) { return kx; },
                                  [ky = c.M_i.k[1]](double, double) { return ky; })
               : Tensor::constant(c.M_i.k[0]);
  ps.M_e = c.dim == 2 && c.M_e.k[0] != c.M_e.k[1]
               ? Tensor::diagonal([kx = c.M_e.k[0]](double, double) { return kx; },
                                  [ky = c.M_e.k[1]](double, double) { return ky; })
               : Tensor::constant(c.M_e.k[0]);
  ps.omega = Window{c.win_lo, c.win_hi};
  ps.T = c.T;
  ps.n_steps = c.steps;
  const int n = ps.grid.size();
  auto field_of = [&](const std::vector<ModeTerm>& modes) {
    ScalarField f = ScalarField::Zero(n);
    for (const ModeTerm& t : modes)
      for (int i = 0; i < n; ++i) {
        const auto x = ps.grid.coord(i);
        double value = t.amp;
        for (int a = 0; a < c.dim; ++a)
          value *= std::sin(t.mode[a] * M_PI * x[a] / c.extents[a]);
        f[i] += value;
      }
    return f;
  };
  ps.v0 = field_of(c.v_modes);
  ps.ue0 = field_of(c.ue_modes);
  validate(ps);
  return ps;
}

inline PotentialField make_potential(const RunConfig& c, const ProblemSpec& ps) {
  return PotentialField::constant(ps, c.potential);
}

inline Reaction make_reaction(const RunConfig& c) {
  if (c.reaction.type == "lipschitz") return Reaction::lipschitz(c.reaction.L);
  if (c.reaction.type == "cubic") return Reaction::cubic(c.reaction.c3, c.reaction.c1);
  return Reaction::none();
}

}  // namespace humctrl
