#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "humctrl/dynamics.hpp"
#include "humctrl/grid.hpp"
#include "humctrl/hum.hpp"

namespace humctrl {

// %.17g: shortest text that round-trips an IEEE double exactly.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

// Long format, one sample per row: t,x[,y],field,value.
inline void write_trajectory_csv(std::ostream& os, const Grid& g, const Trajectory& tr,
                                 const std::string& v_name = "v",
                                 const std::string& ue_name = "ue") {
  os << (g.dim == 2 ? "t,x,y,field,value\n" : "t,x,field,value\n");
  const int N = static_cast<int>(tr.v.size()) - 1;
  for (int k = 0; k <= N; ++k) {
    const double t = k * tr.dt;
    auto dump = [&](const std::string& name, const ScalarField& field) {
      for (int i = 0; i < g.size(); ++i) {
        const auto c = g.coord(i);
        os << fmt_g17(t) << ',' << fmt_g17(c[0]);
        if (g.dim == 2) os << ',' << fmt_g17(c[1]);
        os << ',' << name << ',' << fmt_g17(field[i]) << '\n';
      }
    };
    dump(v_name, tr.v[k]);
    dump(ue_name, tr.ue[k]);
    if (!tr.ui.empty()) dump("ui", tr.ui[k]);
  }
}

// Control rows stamped with the time level they drive: row j acts on step
// j+1, so t = (j+1) dt.
inline void write_control_csv(std::ostream& os, const Grid& g, const ControlFunction& f,
                              const std::string& name = "f") {
  os << (g.dim == 2 ? "t,x,y,field,value\n" : "t,x,field,value\n");
  for (std::size_t j = 0; j < f.rows.size(); ++j) {
    const double t = static_cast<double>(j + 1) * f.dt;
    for (int i = 0; i < g.size(); ++i) {
      const auto c = g.coord(i);
      os << fmt_g17(t) << ',' << fmt_g17(c[0]);
      if (g.dim == 2) os << ',' << fmt_g17(c[1]);
      os << ',' << name << ',' << fmt_g17(f.rows[j][i]) << '\n';
    }
  }
}

struct CsvTable {
  std::vector<std::string> header;
  // per field, values in file order; chunks of grid.size() are time slices
  std::map<std::string, std::vector<double>> values;
  std::map<std::string, std::vector<double>> times;
};

inline CsvTable read_long_csv(std::istream& is) {
  CsvTable out;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty stream");
  {
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) out.header.push_back(tok);
  }
  if (out.header.size() < 4 || out.header.front() != "t" ||
      out.header.back() != "value")
    throw std::runtime_error("csv: unexpected header '" + line + "'");
  const std::size_t ncols = out.header.size();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ls, tok, ',')) cols.push_back(tok);
    if (cols.size() != ncols) throw std::runtime_error("csv: ragged row '" + line + "'");
    const std::string& field = cols[ncols - 2];
    out.values[field].push_back(std::stod(cols[ncols - 1]));
    out.times[field].push_back(std::stod(cols[0]));
  }
  return out;
}

inline std::vector<ScalarField> csv_field_slices(const CsvTable& table,
                                                 const std::string& field, int n) {
  const auto it = table.values.find(field);
  if (it == table.values.end())
    throw std::runtime_error("csv: missing field '" + field + "'");
  const auto& vals = it->second;
  if (vals.size() % static_cast<std::size_t>(n) != 0)
    throw std::runtime_error("csv: field '" + field + "' not a whole number of slices");
  std::vector<ScalarField> out(vals.size() / n, ScalarField(n));
  for (std::size_t j = 0; j < vals.size(); ++j)
    out[j / n][static_cast<int>(j % n)] = vals[j];
  return out;
}

inline nlohmann::ordered_json control_result_json(const ControlResult& r) {
  nlohmann::ordered_json j;
  j["epsilon"] = r.epsilon;
  j["delta"] = r.delta;
  j["mode"] = mode_name(r.mode);
  j["control_norm_l2"] = r.control_norm_l2;
  j["control_norm_lq"] = r.control_norm_lq;
  j["q"] = r.q;
  j["terminal_v_norm"] = r.terminal_v_norm;
  j["terminal_ue_norm"] = r.terminal_ue_norm;
  j["bound_ratio"] = r.bound_ratio;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  return j;
}

}  // namespace humctrl
