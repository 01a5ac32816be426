#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "onsager/cli.hpp"
#include "onsager/io.hpp"

using namespace onsager;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "onsager_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "onsager");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  return cli::run(static_cast<int>(argv.size()), argv.data(), err);
}

Table sample_table() {
  Table t;
  t.columns = {"n", "x", "label", "missing"};
  t.rows.push_back({1LL, 0.1, std::string("a"), std::monostate{}});
  t.rows.push_back({2LL, 1.0 / 3.0, std::string("b,c"), std::monostate{}});
  t.rows.push_back({3LL, -2.5e-300, std::string("d"), 7.0});
  return t;
}

}  // namespace

TEST(Table, EmptyRecordListIsValidationError) {
  Table t;
  t.columns = {"a"};
  try {
    render(t, Format::csv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(Table, CsvIs17DigitsAndLfOnly) {
  const std::string csv = to_csv(sample_table());
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_NE(csv.find("0.33333333333333331"), std::string::npos);
  EXPECT_NE(csv.find("\"b,c\""), std::string::npos);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,x,label,missing");
}

TEST(Table, SameRecordsTwiceAreByteIdentical) {
  const auto a = scratch("twice_a.csv");
  const auto b = scratch("twice_b.csv");
  emit_table(sample_table(), a.string(), Format::csv);
  emit_table(sample_table(), b.string(), Format::csv);
  EXPECT_EQ(slurp(a), slurp(b));
  emit_table(sample_table(), a.string(), Format::json);
  emit_table(sample_table(), b.string(), Format::json);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Table, CsvAndJsonCarryTheSameValues) {
  Table t;
  t.columns = {"lambda", "u_1", "u_2"};
  for (int i = 0; i < 5; ++i) t.rows.push_back({0.1 * i + 1e-17 * i, std::sin(i + 0.3), std::exp(-7.0 * i)});
  std::vector<std::string> header;
  const auto parsed = parse_csv_numbers(to_csv(t), &header);
  const json j = to_json(t);
  ASSERT_EQ(header, t.columns);
  ASSERT_EQ(parsed.size(), t.rows.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      const double v = std::get<double>(t.rows[i][c]);
      EXPECT_EQ(parsed[i][c], v);
      EXPECT_EQ(j["rows"][i][header[c]].get<double>(), v);
    }
  }
}

TEST(Table, UnwritablePathIsIoError) {
  try {
    emit_table(sample_table(), "/nonexistent-dir/x.csv", Format::csv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(KernelJson, RoundTripIsBitExact) {
  const KernelSpec spec = build_kernel_spec(4, 20, KernelSource::onsager_quadrature);
  const auto path = scratch("kernel.json");
  save_kernel(spec, path.string());
  const KernelSpec back = load_kernel(path.string());
  EXPECT_EQ(back.dim, spec.dim);
  EXPECT_EQ(back.n_max, spec.n_max);
  EXPECT_EQ(back.source, spec.source);
  EXPECT_EQ(back.k0, spec.k0);
  EXPECT_EQ(back.sup_norm_khat, spec.sup_norm_khat);
  EXPECT_EQ(back.coeffs, spec.coeffs);
  const auto again = scratch("kernel2.json");
  save_kernel(back, again.string());
  EXPECT_EQ(slurp(path), slurp(again));
}

TEST(KernelJson, InconsistentDocumentRejected) {
  json j = kernel_to_json(build_kernel_spec(3, 4, KernelSource::onsager_recurrence));
  j["n_max"] = 5;
  EXPECT_THROW(kernel_from_json(j), Error);
}

TEST(SolutionJson, RoundTrip) {
  const KernelSpec spec = build_kernel_spec(3, 8, KernelSource::onsager_recurrence);
  const auto r = solve(spec, 11.0, AxisymState::single_mode(3, 8, 1, 0.5));
  const SolutionReport back = solution_from_json(solution_to_json(r));
  EXPECT_EQ(back.lambda, r.lambda);
  EXPECT_EQ(back.state.coeffs(), r.state.coeffs());
  EXPECT_EQ(back.index, r.index);
  EXPECT_EQ(back.converged, r.converged);
  EXPECT_EQ(back.method, r.method);
}

TEST(Cli, UnknownCommandIsUsageError) {
  EXPECT_EQ(run({"frobnicate"}), cli::exit_usage);
  EXPECT_EQ(run({}), cli::exit_usage);
}

TEST(Cli, CoeffsBothAgree) {
  const auto out = scratch("coeffs.csv");
  ASSERT_EQ(run({"coeffs", "--dim", "3", "--nmax", "12", "--method", "both", "--output", out.string()}), 0);
  std::vector<std::string> header;
  const auto rows = parse_csv_numbers(slurp(out), &header);
  EXPECT_EQ(header, (std::vector<std::string>{"n", "k_quadrature", "k_recurrence", "rel_diff"}));
  ASSERT_EQ(rows.size(), 12u);
  for (const auto& r : rows) EXPECT_LE(r[3], 1e-9);
}

TEST(Cli, ThresholdsJson) {
  const auto out = scratch("thresholds.json");
  ASSERT_EQ(run({"thresholds", "--dim", "3", "--nmax", "64", "--output", out.string()}), 0);
  const json j = json::parse(slurp(out));
  EXPECT_NEAR(j["lambda_tilde0"].get<double>(), 0.2546, 1e-4);
  EXPECT_NEAR(j["lambda_1"].get<double>(), 10.1859, 1e-4);
}

TEST(Cli, SweepCensus) {
  const auto out = scratch("sweep.csv");
  ASSERT_EQ(run({"sweep", "--dim", "3", "--lambda-min", "9", "--lambda-max", "13", "--steps", "40",
                 "--modes", "16", "--output", out.string()}),
            0);
  std::vector<std::string> header;
  const auto rows = parse_csv_numbers(slurp(out), &header);
  ASSERT_EQ(header.front(), "lambda");
  ASSERT_EQ(header.back(), "stable");
  std::map<double, int> count;
  for (const auto& r : rows) ++count[r[0]];
  EXPECT_EQ(count.size(), 41u);
  for (const auto& [lambda, n] : count) {
    if (lambda > 10.186) EXPECT_EQ(n, 3) << lambda;
  }
  // transcritical: u = 0 and the two prolate solutions below lambda_1 back to the fold
  EXPECT_EQ(count.begin()->second, 3);
}

TEST(Cli, ValidationFailureWritesNothing) {
  const auto out = scratch("never.csv");
  fs::remove(out);
  EXPECT_EQ(run({"sweep", "--lambda-min", "5", "--lambda-max", "4", "--output", out.string()}),
            cli::exit_validation);
  EXPECT_EQ(run({"evolve", "--lambda", "1", "--dt", "1", "--output", out.string()}), cli::exit_validation);
  EXPECT_EQ(run({"solve", "--output", out.string()}), cli::exit_validation);
  EXPECT_EQ(run({"solve", "--lambda", "1", "--no-such-flag", "--output", out.string()}), cli::exit_validation);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, UnwritableOutputIsNumericalExit) {
  EXPECT_EQ(run({"coeffs", "--output", "/nonexistent-dir/c.csv"}), cli::exit_numerical);
}

TEST(Cli, ConfigKeysMirrorFlagsAndFlagsWin) {
  const auto cfg = scratch("cfg.json");
  std::ofstream(cfg) << R"({"lambda": 11, "modes": 8, "init-amp": 0.5, "format": "csv"})";
  const auto a = scratch("cfg_a.csv");
  const auto b = scratch("cfg_b.csv");
  ASSERT_EQ(run({"solve", "--config", cfg.string(), "--modes", "6", "--output", a.string()}), 0);
  ASSERT_EQ(run({"solve", "--lambda", "11", "--modes", "6", "--init-amp", "0.5", "--format", "csv",
                 "--output", b.string()}),
            0);
  EXPECT_EQ(slurp(a), slurp(b));
  std::vector<std::string> header;
  parse_csv_numbers(slurp(a), &header);
  EXPECT_EQ(header.size(), 2u + 6u + 3u);

  std::ofstream(cfg) << R"({"lambda": 11, "nonsense": 1})";
  EXPECT_EQ(run({"solve", "--config", cfg.string(), "--output", a.string()}), cli::exit_validation);
}

TEST(Cli, NonConvergedSolveIsNumericalFailureWithRecord) {
  const auto out = scratch("slow.json");
  fs::remove(scratch("slow.json.error.json"));
  EXPECT_EQ(run({"solve", "--lambda", "11", "--init-amp", "0.5", "--max-iter", "1", "--output", out.string()}),
            cli::exit_numerical);
  const json rec = json::parse(slurp(scratch("slow.json.error.json")));
  EXPECT_EQ(rec["error"], "accuracy");
  EXPECT_FALSE(json::parse(slurp(out))["converged"].get<bool>());
}

TEST(Cli, QuadOrderEnvironmentOverride) {
  setenv("ONSAGER_QUAD_ORDER", "zero", 1);
  EXPECT_EQ(run({"solve", "--lambda", "1", "--output", scratch("q.json").string()}), cli::exit_validation);
  setenv("ONSAGER_QUAD_ORDER", "96", 1);
  EXPECT_EQ(run({"solve", "--lambda", "1", "--output", scratch("q.json").string()}), 0);
  unsetenv("ONSAGER_QUAD_ORDER");
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const std::vector<std::vector<std::string>> cases{
      {"audit-degree", "--lambda", "15.279", "--seed", "7"},
      {"evolve", "--lambda", "11.2", "--t-max", "0.2", "--sample-every", "100"},
      {"sweep", "--lambda-min", "9", "--lambda-max", "11", "--steps", "10", "--format", "json"},
  };
  int k = 0;
  for (auto args : cases) {
    const auto a = scratch("det_a" + std::to_string(k));
    const auto b = scratch("det_b" + std::to_string(k++));
    auto a_args = args;
    a_args.insert(a_args.end(), {"--output", a.string()});
    args.insert(args.end(), {"--output", b.string()});
    ASSERT_EQ(run(a_args), 0);
    ASSERT_EQ(run(args), 0);
    EXPECT_EQ(slurp(a), slurp(b));
  }
}
