#pragma once

// Tables (CSV and a JSON mirror) and JSON forms of kernels and solutions.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "onsager/bifurcation.hpp"
#include "onsager/dynamics.hpp"
#include "onsager/errors.hpp"
#include "onsager/kernel.hpp"
#include "onsager/solver.hpp"

namespace onsager {

using json = nlohmann::ordered_json;

/// Empty cells are written as an empty CSV field and as null in JSON.
using Cell = std::variant<std::monostate, long long, double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  /// Extra summary values; only the JSON form carries them.
  json meta = json::object();
};

enum class Format { csv, json };

inline Format format_from_string(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw Error(ErrorKind::validation, "unknown format '" + s + "'");
}

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::string csv_field(const Cell& c) {
  if (std::holds_alternative<long long>(c)) return std::to_string(std::get<long long>(c));
  if (std::holds_alternative<double>(c)) return format_double(std::get<double>(c));
  if (std::holds_alternative<std::string>(c)) {
    const std::string& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  }
  return "";
}

inline json json_value(const Cell& c) {
  if (std::holds_alternative<long long>(c)) return std::get<long long>(c);
  if (std::holds_alternative<double>(c)) {
    const double x = std::get<double>(c);
    if (std::isfinite(x)) return x;
    return format_double(x);
  }
  if (std::holds_alternative<std::string>(c)) return std::get<std::string>(c);
  return nullptr;
}

}  // namespace detail

inline void check_table(const Table& t) {
  if (t.columns.empty()) throw Error(ErrorKind::validation, "table has no columns");
  if (t.rows.empty()) throw Error(ErrorKind::validation, "empty record list");
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size()) {
      throw Error(ErrorKind::validation, "row width does not match the header");
    }
  }
}

inline std::string to_csv(const Table& t) {
  check_table(t);
  std::string out;
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    if (j) out += ',';
    out += t.columns[j];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += detail::csv_field(row[j]);
    }
    out += '\n';
  }
  return out;
}

inline json to_json(const Table& t) {
  check_table(t);
  json rows = json::array();
  for (const auto& row : t.rows) {
    json r = json::object();
    for (std::size_t j = 0; j < row.size(); ++j) r[t.columns[j]] = detail::json_value(row[j]);
    rows.push_back(std::move(r));
  }
  json out = json::object();
  out["columns"] = t.columns;
  out["rows"] = std::move(rows);
  if (!t.meta.empty()) out["meta"] = t.meta;
  return out;
}

/// JSON text as written to files: two-space indent, trailing LF.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string render(const Table& t, Format format) {
  return format == Format::csv ? to_csv(t) : dump(to_json(t));
}

/// "-" writes to standard output.
inline void write_text(const std::string& text, const std::string& path) {
  if (path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fflush(stdout);
    return;
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path + "' for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.close();
  if (!os) throw Error(ErrorKind::io, "write to '" + path + "' failed");
}

inline void emit_table(const Table& t, const std::string& path, Format format) {
  const std::string text = render(t, format);
  write_text(text, path);
}

/// Parses a CSV written by to_csv back to numbers; empty or non-numeric fields become NaN.
inline std::vector<std::vector<double>> parse_csv_numbers(const std::string& text,
                                                          std::vector<std::string>* header = nullptr) {
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    std::vector<std::string> fields;
    std::string f;
    std::istringstream ls(line);
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (first) {
      if (header) *header = fields;
      first = false;
      continue;
    }
    std::vector<double> row;
    for (const auto& s : fields) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        row.push_back(used == s.size() ? v : std::nan(""));
      } catch (const std::exception&) {
        row.push_back(std::nan(""));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- kernel

inline json kernel_to_json(const KernelSpec& spec) {
  json j = json::object();
  j["dim"] = spec.dim;
  j["n_max"] = spec.n_max;
  j["source"] = to_string(spec.source);
  j["k0"] = spec.k0;
  j["coeffs"] = spec.coeffs;
  j["sup_norm_khat"] = spec.sup_norm_khat;
  return j;
}

inline KernelSpec kernel_from_json(const json& j) {
  try {
    KernelSpec spec;
    spec.dim = j.at("dim").get<int>();
    spec.n_max = j.at("n_max").get<int>();
    spec.source = kernel_source_from_string(j.at("source").get<std::string>());
    spec.k0 = j.at("k0").get<double>();
    spec.coeffs = j.at("coeffs").get<std::vector<double>>();
    spec.sup_norm_khat = j.at("sup_norm_khat").get<double>();
    if (spec.dim < 3 || spec.n_max < 1 || static_cast<int>(spec.coeffs.size()) != spec.n_max) {
      throw Error(ErrorKind::validation, "kernel document is inconsistent");
    }
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("bad kernel document: ") + e.what());
  }
}

inline void save_kernel(const KernelSpec& spec, const std::string& path) {
  write_text(dump(kernel_to_json(spec)), path);
}

inline KernelSpec load_kernel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("bad kernel document: ") + e.what());
  }
  return kernel_from_json(j);
}

// ---- solutions

inline json solution_to_json(const SolutionReport& r) {
  json j = json::object();
  j["lambda"] = r.lambda;
  j["dim"] = r.state.dim();
  j["modes"] = std::vector<double>(r.state.coeffs().data(), r.state.coeffs().data() + r.state.modes());
  j["residual_norm"] = r.residual_norm;
  j["iterations"] = r.iterations;
  j["method"] = to_string(r.method);
  j["converged"] = r.converged;
  j["index"] = r.index ? json(*r.index) : json(nullptr);
  j["sup_norm_u"] = r.sup_norm_u;
  return j;
}

inline SolutionReport solution_from_json(const json& j) {
  try {
    SolutionReport r;
    const auto modes = j.at("modes").get<std::vector<double>>();
    r.state = AxisymState(j.at("dim").get<int>(),
                          Eigen::Map<const Eigen::VectorXd>(modes.data(), static_cast<Eigen::Index>(modes.size())));
    r.lambda = j.at("lambda").get<double>();
    r.residual_norm = j.at("residual_norm").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.method = method_from_string(j.at("method").get<std::string>());
    r.converged = j.at("converged").get<bool>();
    if (!j.at("index").is_null()) r.index = j.at("index").get<int>();
    r.sup_norm_u = j.at("sup_norm_u").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::validation, std::string("bad solution document: ") + e.what());
  }
}

/// Columns: lambda, branch, u_1..u_modes, residual, index, stable.
inline std::vector<std::string> solution_columns(int modes) {
  std::vector<std::string> cols{"lambda", "branch"};
  for (int n = 1; n <= modes; ++n) cols.push_back("u_" + std::to_string(n));
  cols.insert(cols.end(), {"residual", "index", "stable"});
  return cols;
}

/// Coefficients beyond the state's truncation are left empty.
inline std::vector<Cell> solution_row(const SolutionReport& r, long long branch, int modes,
                                      const std::optional<Stability>& stability = {}) {
  std::vector<Cell> row{r.lambda, branch};
  for (int n = 1; n <= modes; ++n) {
    if (n <= r.state.modes()) {
      row.emplace_back(r.state.coeff(n));
    } else {
      row.emplace_back(std::monostate{});
    }
  }
  row.emplace_back(r.residual_norm);
  row.emplace_back(r.index ? Cell(static_cast<long long>(*r.index)) : Cell(std::monostate{}));
  row.emplace_back(stability ? Cell(std::string(to_string(*stability))) : Cell(std::monostate{}));
  return row;
}

/// One row per branch point; branch id = position in `branches`.
inline Table branch_table(const std::vector<Branch>& branches, int modes) {
  Table t;
  t.columns = solution_columns(modes);
  json info = json::array();
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const Branch& br = branches[b];
    for (const auto& p : br.points) {
      t.rows.push_back(solution_row(p.report, static_cast<long long>(b), modes, p.stability));
    }
    json e = json::object();
    e["branch"] = b;
    e["mode"] = br.mode;
    e["origin"] = br.origin;
    e["seed_sign"] = br.seed_sign;
    e["side"] = br.side;
    e["ladder_eps"] = br.ladder_eps;
    info.push_back(std::move(e));
  }
  t.meta["branches"] = std::move(info);
  return t;
}

inline Table degree_table(const DegreeReport& r) {
  int modes = 0;
  for (const auto& s : r.solutions) modes = std::max(modes, s.state.modes());
  Table t;
  t.columns = solution_columns(modes);
  for (std::size_t i = 0; i < r.solutions.size(); ++i) {
    t.rows.push_back(solution_row(r.solutions[i], static_cast<long long>(i), modes));
  }
  t.meta["lambda"] = r.lambda;
  t.meta["degree_sum"] = r.degree_sum;
  t.meta["truncations"] = r.truncations_checked;
  t.meta["degree_sums"] = r.degree_sums;
  t.meta["solution_counts"] = r.solution_counts;
  t.meta["stable_across_truncations"] = r.stable_across_truncations;
  t.meta["equals_one"] = r.equals_one;
  return t;
}

// ---- dynamics

/// Columns: t, E, a_1..a_4.
inline Table trajectory_table(const Trajectory& tr) {
  Table t;
  t.columns = {"t", "E", "a_1", "a_2", "a_3", "a_4"};
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    std::vector<Cell> row{tr.times[i], tr.energies[i]};
    for (std::size_t n = 0; n < 4; ++n) {
      if (n < tr.moments[i].size()) {
        row.emplace_back(tr.moments[i][n]);
      } else {
        row.emplace_back(std::monostate{});
      }
    }
    t.rows.push_back(std::move(row));
  }
  t.meta["steps"] = tr.steps;
  t.meta["final_time"] = tr.final_time;
  t.meta["stopped_early"] = tr.stopped_early;
  t.meta["max_energy_rise"] = tr.max_energy_rise;
  t.meta["max_mass_drift"] = tr.max_mass_drift;
  return t;
}

/// Columns: t, theta, f. One block per stored snapshot.
inline Table snapshot_table(const Trajectory& tr, const ThetaGrid& grid) {
  Table t;
  t.columns = {"t", "theta", "f"};
  for (std::size_t s = 0; s < tr.densities.size(); ++s) {
    for (Eigen::Index i = 0; i < tr.densities[s].size(); ++i) {
      t.rows.push_back({tr.snapshot_times[s], grid.theta[static_cast<std::size_t>(i)], tr.densities[s][i]});
    }
  }
  return t;
}

}  // namespace onsager
