#pragma once

// Command-line front end. All work happens in run(); tools/onsager.cpp only forwards argv.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "onsager/bifurcation.hpp"
#include "onsager/dynamics.hpp"
#include "onsager/errors.hpp"
#include "onsager/io.hpp"
#include "onsager/kernel.hpp"
#include "onsager/polybasis.hpp"
#include "onsager/solver.hpp"

namespace onsager::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_validation = 2;
inline constexpr int exit_numerical = 3;
inline constexpr int exit_usage = 64;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"coeffs", "thresholds", "solve",
                                              "sweep",  "audit-degree", "evolve"};
  return names;
}

struct RunConfig {
  std::string command;
  int dim = 3;
  std::optional<int> nmax;
  std::string kernel_method = "both";
  std::string solve_method = "newton";
  std::optional<double> lambda;
  std::optional<double> lambda_min;
  std::optional<double> lambda_max;
  int steps = 20;
  int modes = 16;
  int quad_order = default_quadrature_order;
  double tol = 1e-10;
  int max_iter = 200;
  std::uint64_t seed = 0;
  int starts = 50;
  std::string truncations = "8,12,16";
  int grid = 128;
  std::optional<double> dt;
  double t_max = 1.0;
  int sample_every = 100;
  double stop_rate = 1e-10;
  int init_mode = 1;
  std::optional<double> init_amp;
  bool classify = false;
  std::string kernel_path;
  std::string save_kernel;
  std::string snapshots;
  std::string output = "-";
  std::optional<std::string> format;
  std::string config;
};

/// Numerical failure after some output was produced; the table is written before exiting.
class PartialFailure : public Error {
 public:
  PartialFailure(const Error& cause, Table partial)
      : Error(cause.kind(), cause.what()), partial_(std::move(partial)) {}
  const Table& partial() const noexcept { return partial_; }

 private:
  Table partial_;
};

namespace detail {

inline void fail(const std::string& what) { throw Error(ErrorKind::validation, what); }

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) fail("bad integer '" + item + "' in list");
      out.push_back(v);
    } catch (const std::logic_error&) {
      fail("bad integer '" + item + "' in list");
    }
  }
  if (out.empty()) fail("empty list");
  return out;
}

/// Applies `--config` keys to options not given on the command line.
inline void apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "config") fail("config files cannot nest");
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) fail("config key '" + key + "' is not a flag of '" + sub.get_name() + "'");
    if (opt->count() > 0) continue;
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_number_integer() || value.is_number_unsigned()) {
      text = value.dump();
    } else if (value.is_number_float()) {
      text = format_double(value.get<double>());
    } else if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) text += ',';
        text += value[i].is_string() ? value[i].get<std::string>() : value[i].dump();
      }
    } else {
      fail("config key '" + key + "' has an unsupported value");
    }
    try {
      opt->add_result(text);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      fail("config key '" + key + "': " + e.what());
    }
  }
}

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be a positive number");
}

inline void require_positive(long long v, const char* name) {
  if (v <= 0) fail(std::string(name) + " must be positive");
}

inline Format output_format(const RunConfig& c, Format fallback) {
  return c.format ? format_from_string(*c.format) : fallback;
}

inline int kernel_size(const RunConfig& c, int needed) {
  return std::max(c.nmax.value_or(needed), needed);
}

inline KernelSpec make_kernel(const RunConfig& c, int n_max) {
  if (!c.kernel_path.empty()) {
    KernelSpec spec = load_kernel(c.kernel_path);
    if (spec.dim != c.dim) fail("cached kernel has dimension " + std::to_string(spec.dim));
    if (spec.n_max < n_max) fail("cached kernel has only " + std::to_string(spec.n_max) + " coefficients");
    return spec;
  }
  return build_kernel_spec(c.dim, n_max, KernelSource::onsager_quadrature);
}

inline SolveOptions solve_options(const RunConfig& c) {
  SolveOptions o;
  o.method = method_from_string(c.solve_method);
  o.tol = c.tol;
  o.max_iter = c.max_iter;
  o.quadrature_order = c.quad_order;
  return o;
}

/// Everything that can be checked without numerical work.
inline void validate(const RunConfig& c) {
  if (c.dim < 3) fail("dim must be >= 3");
  if (c.nmax) require_positive(static_cast<long long>(*c.nmax), "nmax");
  require_positive(static_cast<long long>(c.modes), "modes");
  require_positive(static_cast<long long>(c.steps), "steps");
  require_positive(static_cast<long long>(c.quad_order), "quad-order");
  require_positive(c.tol, "tol");
  require_positive(static_cast<long long>(c.max_iter), "max-iter");
  require_positive(static_cast<long long>(c.starts), "starts");
  require_positive(static_cast<long long>(c.grid), "grid");
  require_positive(static_cast<long long>(c.sample_every), "sample-every");
  require_positive(c.stop_rate, "stop-rate");
  if (!(c.t_max >= 0.0) || !std::isfinite(c.t_max)) fail("t-max must be >= 0");
  if (c.dt) require_positive(*c.dt, "dt");
  if (c.lambda && (!(*c.lambda >= 0.0) || !std::isfinite(*c.lambda))) fail("lambda must be >= 0");
  if (c.format) format_from_string(*c.format);
  if (c.output.empty()) fail("output path is empty");

  if (c.command == "coeffs") {
    if (c.kernel_method != "quadrature" && c.kernel_method != "recurrence" && c.kernel_method != "both") {
      fail("coeffs --method must be quadrature, recurrence or both");
    }
  }
  if (c.command == "solve" || c.command == "sweep" || c.command == "audit-degree") {
    method_from_string(c.solve_method);
  }
  if (c.command == "solve" || c.command == "audit-degree" || c.command == "evolve") {
    if (!c.lambda) fail(c.command + " needs --lambda");
  }
  if (c.command == "solve" || c.command == "evolve") {
    if (c.init_mode < 1 || c.init_mode > c.modes) fail("init-mode must lie in 1..modes");
    if (c.init_amp && !std::isfinite(*c.init_amp)) fail("init-amp must be finite");
  }
  if (c.command == "sweep") {
    if (!c.lambda_min || !c.lambda_max) fail("sweep needs --lambda-min and --lambda-max");
    if (!(*c.lambda_min > 0.0) || !std::isfinite(*c.lambda_max) || !(*c.lambda_max > *c.lambda_min)) {
      fail("lambda range must satisfy 0 < lambda-min < lambda-max");
    }
  }
  if (c.command == "audit-degree") {
    for (int n : parse_int_list(c.truncations)) require_positive(static_cast<long long>(n), "truncation");
  }
  if (c.command == "evolve") {
    if (c.grid < min_grid_points) fail("grid must have at least " + std::to_string(min_grid_points) + " points");
    if (4 * c.modes > c.grid) fail("grid of " + std::to_string(c.grid) + " points cannot resolve " +
                                   std::to_string(c.modes) + " modes");
    const ThetaGrid g = make_grid(c.dim, c.grid);
    if (c.dt && *c.dt > g.max_dt()) {
      fail("dt exceeds the stable step " + format_double(g.max_dt()) + " for this grid");
    }
  }
  if (!c.kernel_path.empty()) {
    std::ifstream is(c.kernel_path);
    if (!is) fail("cannot read kernel '" + c.kernel_path + "'");
  }
}

// ---- commands

inline void cmd_coeffs(const RunConfig& c) {
  const int n_max = c.nmax.value_or(12);
  const bool want_q = c.kernel_method != "recurrence";
  const bool want_r = c.kernel_method != "quadrature";
  std::vector<double> kq(static_cast<std::size_t>(n_max));
  for (int n = 1; n <= n_max; ++n) kq[n - 1] = coeff_by_quadrature(c.dim, n);
  std::vector<double> kr;
  if (want_r) kr = coeff_by_recurrence(c.dim, kq[0], n_max);

  Table t;
  t.columns = {"n"};
  if (want_q) t.columns.push_back("k_quadrature");
  if (want_r) t.columns.push_back("k_recurrence");
  if (want_q && want_r) t.columns.push_back("rel_diff");
  for (int n = 1; n <= n_max; ++n) {
    std::vector<Cell> row{static_cast<long long>(n)};
    const double q = kq[n - 1];
    if (want_q) row.emplace_back(q);
    if (want_r) row.emplace_back(kr[n - 1]);
    if (want_q && want_r) row.emplace_back(std::abs(q - kr[n - 1]) / std::abs(q));
    t.rows.push_back(std::move(row));
  }
  t.meta["dim"] = c.dim;
  emit_table(t, c.output, output_format(c, Format::csv));
  if (!c.save_kernel.empty()) {
    save_kernel(build_kernel_spec(c.dim, n_max, KernelSource::onsager_quadrature), c.save_kernel);
  }
}

inline void cmd_thresholds(const RunConfig& c) {
  const KernelSpec spec = make_kernel(c, kernel_size(c, 64));
  const ThresholdReport r = uniqueness_thresholds(spec);
  const std::vector<std::pair<std::string, double>> scalars{
      {"lambda_tilde0", r.lambda_tilde0},
      {"lambda_0_lower", r.lambda_0_lower},
      {"lambda_0_upper", r.lambda_0_upper},
      {"partial_sum", r.partial_sum},
      {"tail_bound", r.tail_bound},
      {"lambda_contraction", r.lambda_contraction},
      {"k0", spec.k0},
      {"sup_norm_khat", spec.sup_norm_khat},
      {"lambda_1", r.lambda_crit.at(0)},
  };
  const Format format = output_format(c, Format::json);
  if (format == Format::json) {
    json j = json::object();
    j["dim"] = spec.dim;
    j["n_max"] = spec.n_max;
    for (const auto& [k, v] : scalars) j[k] = v;
    j["lambda_crit"] = r.lambda_crit;
    write_text(dump(j), c.output);
  } else {
    Table t;
    t.columns = {"dim", "n_max"};
    std::vector<Cell> row{static_cast<long long>(spec.dim), static_cast<long long>(spec.n_max)};
    for (const auto& [k, v] : scalars) {
      t.columns.push_back(k);
      row.emplace_back(v);
    }
    t.rows.push_back(std::move(row));
    emit_table(t, c.output, Format::csv);
  }
  if (!c.save_kernel.empty()) save_kernel(spec, c.save_kernel);
}

inline void cmd_solve(const RunConfig& c) {
  const KernelSpec spec = make_kernel(c, kernel_size(c, c.modes));
  const AxisymState init = AxisymState::single_mode(c.dim, c.modes, c.init_mode, c.init_amp.value_or(0.0));
  const SolutionReport r = solve(spec, *c.lambda, init, solve_options(c));
  const Format format = output_format(c, Format::json);
  if (format == Format::json) {
    write_text(dump(solution_to_json(r)), c.output);
  } else {
    Table t;
    t.columns = solution_columns(c.modes);
    t.rows.push_back(solution_row(r, 0, c.modes));
    emit_table(t, c.output, Format::csv);
  }
  if (!r.converged) {
    throw AccuracyError("solver stopped at residual " + format_double(r.residual_norm) + " after " +
                            std::to_string(r.iterations) + " iterations",
                        r.residual_norm);
  }
}

/// Rows at lambda_min + i (lambda_max - lambda_min) / steps, i = 0..steps. Branch 0 is
/// u = 0; branches 1, 2, ... are the traced branches from each lambda_n <= 2 lambda_max
/// (ordered by n, then seed sign +, -). A branch crossing one lambda twice (past a fold)
/// gives two rows with the same id.
inline void cmd_sweep(const RunConfig& c) {
  const KernelSpec spec = make_kernel(c, kernel_size(c, c.modes));
  const SolveOptions so = solve_options(c);
  const ZonalOperator op(spec, c.modes, so.quadrature_order);
  const double lo = *c.lambda_min;
  const double hi = *c.lambda_max;
  std::vector<double> grid;
  for (int i = 0; i <= c.steps; ++i) grid.push_back(lo + (hi - lo) * i / c.steps);

  struct Row {
    double lambda;
    long long branch;
    SolutionReport report;
    std::optional<Stability> stability;
  };
  std::vector<Row> rows;
  auto classify = [&](const SolutionReport& r) -> std::optional<Stability> {
    if (!c.classify) return std::nullopt;
    try {
      StabilityOptions opts;
      opts.grid_points = std::max(c.grid, 4 * c.modes);
      return classify_stability(r, spec, opts).label;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  auto to_table = [&]() {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.lambda != b.lambda) return a.lambda < b.lambda;
      if (a.branch != b.branch) return a.branch < b.branch;
      return onsager::detail::lexicographic_less(a.report.state.coeffs(), b.report.state.coeffs());
    });
    Table t;
    t.columns = solution_columns(c.modes);
    for (const Row& r : rows) t.rows.push_back(solution_row(r.report, r.branch, c.modes, r.stability));
    return t;
  };

  try {
    for (double lambda : grid) {
      SolutionReport r = solve(op, lambda, AxisymState::zero(c.dim, c.modes), so);
      const auto st = classify(r);
      rows.push_back({lambda, 0, std::move(r), st});
    }

    TraceOptions to;
    to.modes = c.modes;
    to.solve = so;
    to.sample_at = grid;
    long long next_id = 1;
    for (int n = 1; n <= c.modes; ++n) {
      const double origin = static_cast<double>(harmonic_count(c.dim, 2 * n)) / spec.k(n);
      // a branch leaving lambda_n downwards can fold back below lambda_n
      if (origin > 2.0 * hi) break;
      for (const Branch& br : trace_branch(spec, n, std::max(hi, 1.25 * origin), c.steps, to)) {
        const long long id = next_id++;
        for (const BranchPoint& p : br.samples) {
          bool seen = false;
          for (const Row& r : rows) {
            if (r.lambda == p.lambda && l2_distance(r.report.state, p.report.state) < 1e-6) seen = true;
          }
          if (!seen) rows.push_back({p.lambda, id, p.report, classify(p.report)});
        }
      }
    }
  } catch (const Error& e) {
    if (rows.empty() || is_input_error(e.kind())) throw;
    throw PartialFailure(e, to_table());
  }
  emit_table(to_table(), c.output, output_format(c, Format::csv));
}

inline void cmd_audit(const RunConfig& c) {
  const std::vector<int> truncs = parse_int_list(c.truncations);
  const int need = *std::max_element(truncs.begin(), truncs.end());
  const KernelSpec spec = make_kernel(c, kernel_size(c, need));
  const DegreeReport r = degree_audit(spec, *c.lambda, c.starts, c.seed, truncs, solve_options(c));
  emit_table(degree_table(r), c.output, output_format(c, Format::csv));
}

inline void cmd_evolve(const RunConfig& c) {
  const KernelSpec spec = make_kernel(c, kernel_size(c, c.modes));
  const DoiFlow flow(spec, *c.lambda, make_grid(c.dim, c.grid), c.modes);
  const double dt = c.dt.value_or(flow.grid().max_dt());
  const AxisymState u0 = AxisymState::single_mode(c.dim, c.modes, c.init_mode, c.init_amp.value_or(1e-2));
  EvolveOptions eo;
  eo.sample_every = c.sample_every;
  eo.stop_rate = c.stop_rate;
  const Trajectory tr = evolve(flow.density_of(u0), flow, dt, c.t_max, eo);
  emit_table(trajectory_table(tr), c.output, output_format(c, Format::csv));
  if (!c.snapshots.empty()) emit_table(snapshot_table(tr, flow.grid()), c.snapshots, Format::csv);
}

inline json error_record(const Error& e, const std::string& command) {
  json j = json::object();
  j["error"] = to_string(e.kind());
  j["message"] = e.what();
  j["command"] = command;
  if (const auto* ie = dynamic_cast<const IndexedError*>(&e)) j["index"] = ie->index();
  if (const auto* ae = dynamic_cast<const AccuracyError*>(&e)) j["achieved"] = ae->achieved();
  if (const auto* de = dynamic_cast<const DivergenceError*>(&e)) j["last_valid_time"] = de->last_valid_time();
  if (const auto* ia = dynamic_cast<const InconclusiveAuditError*>(&e)) j["truncation"] = ia->truncation();
  return j;
}

}  // namespace detail

inline std::string usage() {
  std::string s = "usage: onsager <command> [flags]\ncommands:";
  for (const auto& name : commands()) s += " " + name;
  return s + "\nrun 'onsager <command> --help' for the flags of a command\n";
}

inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  if (argc < 2) {
    err << usage();
    return exit_usage;
  }
  const std::string first = argv[1];
  if (first == "-h" || first == "--help") {
    std::cout << usage();
    return exit_ok;
  }
  if (std::find(commands().begin(), commands().end(), first) == commands().end()) {
    err << "unknown command '" << first << "'\n" << usage();
    return exit_usage;
  }

  RunConfig c;
  c.command = first;
  if (const char* env = std::getenv("ONSAGER_QUAD_ORDER")) {
    try {
      std::size_t used = 0;
      c.quad_order = std::stoi(env, &used);
      if (used != std::string(env).size() || c.quad_order < 1) throw std::invalid_argument(env);
    } catch (const std::logic_error&) {
      err << "ONSAGER_QUAD_ORDER must be a positive integer\n";
      return exit_validation;
    }
  }

  CLI::App app{"Axisymmetric Onsager equilibria, bifurcations and Doi dynamics", "onsager"};
  CLI::App* sub = app.add_subcommand(first, "");
  sub->add_option("--config", c.config, "JSON file whose keys mirror flag names; flags win");
  sub->add_option("--dim", c.dim, "sphere S^{D-1} dimension D");
  sub->add_option("--output", c.output, "output path, - for stdout");
  sub->add_option("--format", c.format, "csv or json");
  sub->add_option("--kernel", c.kernel_path, "load kernel coefficients from a JSON cache");
  sub->add_option("--save-kernel", c.save_kernel, "write the kernel used to a JSON cache");
  sub->add_option("--nmax", c.nmax, "kernel coefficients to compute");
  if (first == "coeffs") {
    sub->add_option("--method", c.kernel_method, "quadrature, recurrence or both");
  }
  if (first == "solve" || first == "sweep" || first == "audit-degree" || first == "evolve") {
    sub->add_option("--lambda", c.lambda, "concentration");
    sub->add_option("--modes", c.modes, "zonal modes kept");
    sub->add_option("--quad-order", c.quad_order, "solver quadrature order");
    sub->add_option("--tol", c.tol, "residual tolerance");
    sub->add_option("--max-iter", c.max_iter, "iteration cap");
    sub->add_option("--method", c.solve_method, "newton or picard");
    sub->add_option("--seed", c.seed, "random seed");
  }
  if (first == "solve" || first == "evolve") {
    sub->add_option("--init-mode", c.init_mode, "initial state is amp * P_{2n}");
    sub->add_option("--init-amp", c.init_amp, "initial amplitude");
  }
  if (first == "sweep") {
    sub->add_option("--lambda-min", c.lambda_min, "");
    sub->add_option("--lambda-max", c.lambda_max, "");
    sub->add_option("--steps", c.steps, "lambda intervals");
    sub->add_option("--grid", c.grid, "grid points for --classify");
    sub->add_flag("--classify", c.classify, "label each row stable/unstable under the Doi flow");
  }
  if (first == "audit-degree") {
    sub->add_option("--starts", c.starts, "multistart initial states");
    sub->add_option("--truncations", c.truncations, "comma-separated mode truncations");
  }
  if (first == "evolve") {
    sub->add_option("--grid", c.grid, "theta grid points");
    sub->add_option("--dt", c.dt, "time step (default: largest stable)");
    sub->add_option("--t-max", c.t_max, "final time");
    sub->add_option("--sample-every", c.sample_every, "steps between table rows");
    sub->add_option("--stop-rate", c.stop_rate, "stop when ||df/dt|| falls below this");
    sub->add_option("--snapshots", c.snapshots, "also write density snapshots (t, theta, f) here");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << sub->help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return exit_validation;
  }

  try {
    if (!c.config.empty()) detail::apply_config(*sub, c.config);
    detail::validate(c);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_validation;
  }

  try {
    if (first == "coeffs") detail::cmd_coeffs(c);
    if (first == "thresholds") detail::cmd_thresholds(c);
    if (first == "solve") detail::cmd_solve(c);
    if (first == "sweep") detail::cmd_sweep(c);
    if (first == "audit-degree") detail::cmd_audit(c);
    if (first == "evolve") detail::cmd_evolve(c);
  } catch (const Error& e) {
    if (is_input_error(e.kind())) {
      err << e.what() << "\n";
      return exit_validation;
    }
    const json record = detail::error_record(e, first);
    err << record.dump() << "\n";
    try {
      if (const auto* pf = dynamic_cast<const PartialFailure*>(&e)) {
        emit_table(pf->partial(), c.output, detail::output_format(c, Format::csv));
      }
      if (c.output != "-") write_text(dump(record), c.output + ".error.json");
    } catch (const Error& io) {
      err << io.what() << "\n";
    }
    return exit_numerical;
  }
  return exit_ok;
}

}  // namespace onsager::cli
