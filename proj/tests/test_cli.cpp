#include "augspec/config.hpp"
#include "augspec/experiments.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace augspec;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("config parsing: sections, scalars, lists, comments") {
  const auto cfg = ConfigFile::parse_string(R"(
# top comment
[operator]
d = 11
sigma1 = 0.08   # inline comment
name = "misaligned benchmark"

[sweep]
deltas = [0, 0.5, 1.0]
seeds = [1, 2, 3]
svg = false
)");
  CHECK(cfg.get_int("operator.d", -1) == 11);
  CHECK(cfg.get_double("operator.sigma1", 0.0) == doctest::Approx(0.08));
  CHECK(cfg.get_string("operator.name", "") == "misaligned benchmark");
  CHECK(cfg.get_bool("sweep.svg", true) == false);
  const auto deltas = cfg.get_double_list("sweep.deltas", {});
  REQUIRE(deltas.size() == 3);
  CHECK(deltas[1] == doctest::Approx(0.5));
  const auto seeds = cfg.get_int_list("sweep.seeds", {});
  CHECK(seeds == std::vector<long>{1, 2, 3});

  // fallbacks and missing keys
  CHECK(cfg.get_double("sweep.ridge", 1e-8) == doctest::Approx(1e-8));
  CHECK(!cfg.has("sweep.ridge"));
  CHECK_THROWS_AS(cfg.require_double("sweep.ridge"), ConfigError);

  CHECK_THROWS_AS(ConfigFile::parse_string("key_without_value\n"), ConfigError);
  CHECK_THROWS_AS(ConfigFile::parse_string("[unterminated\n"), ConfigError);
  CHECK_THROWS_AS(
      [] {
        const auto bad = ConfigFile::parse_string("x = abc\n");
        return bad.get_double("x", 0.0);
      }(),
      ConfigError);
}

TEST_CASE("resolved config writes grouped sections") {
  ResolvedConfig resolved;
  resolved.set("operator.d", 11L);
  resolved.set("operator.sigma1", 0.08);
  resolved.set("sweep.deltas", std::vector<double>{0.0, 0.5});
  const auto path =
      std::filesystem::temp_directory_path() / "augspec_resolved.toml";
  resolved.write(path);
  const std::string text = slurp(path);
  CHECK(text.find("[operator]") != std::string::npos);
  CHECK(text.find("d = 11") != std::string::npos);
  CHECK(text.find("deltas = [0, 0.5]") != std::string::npos);

  // the resolved copy must itself parse
  const auto cfg = ConfigFile::parse_file(path);
  CHECK(cfg.get_int("operator.d", -1) == 11);
  std::filesystem::remove(path);
}

TEST_CASE("sweep csv is deterministic and normalization is exact") {
  SweepRunConfig run;
  run.base_spec.d = 4;
  run.base_spec.sigma1 = 0.15;
  run.base_spec.noise_std = 0.1;
  run.base_spec.confound_strength = 0.3;
  run.n = 600;
  run.train.d = 3;
  run.train.steps = 60;
  run.train.batch_size = 64;
  run.train.hidden = {12};
  run.train.log_interval = 30;
  run.mse_eval_n = 2000;
  run.alignment_eval_n = 2000;

  std::vector<SweepCell> cells;
  for (double delta : {0.0, 0.5}) {
    for (std::uint64_t seed : {1ULL, 2ULL}) {
      cells.push_back({delta, 1.0, 0.5, seed});
    }
  }
  const auto rows_a = run_sweep(cells, run, 2);
  const auto rows_b = run_sweep(cells, run, 1);  // jobs must not matter

  const auto dir = std::filesystem::temp_directory_path();
  save_sweep_csv(dir / "sweep_a.csv", rows_a);
  save_sweep_csv(dir / "sweep_b.csv", rows_b);
  CHECK(slurp(dir / "sweep_a.csv") == slurp(dir / "sweep_b.csv"));

  // mean normalized mse over delta = 0 rows equals exactly 1
  double sum0 = 0.0;
  int count0 = 0;
  for (const auto& row : rows_a) {
    REQUIRE(row.error.empty());
    if (row.cell.delta == 0.0) {
      sum0 += row.mse_normalized;
      ++count0;
    }
  }
  CHECK(sum0 / count0 == doctest::Approx(1.0).epsilon(1e-12));

  save_sweep_svg(dir / "sweep.svg", rows_a);
  const std::string svg = slurp(dir / "sweep.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("c_alpha=1") != std::string::npos);
  for (const char* name : {"sweep_a.csv", "sweep_b.csv", "sweep.svg"}) {
    std::filesystem::remove(dir / name);
  }
}

TEST_CASE("failing sweep cells are tagged, not fatal") {
  SweepRunConfig run;
  run.base_spec.d = 4;
  run.base_spec.sigma1 = 0.15;
  run.n = 400;
  run.train.d = 3;
  run.train.steps = 20;
  run.train.batch_size = 32;
  run.train.hidden = {8};
  run.mse_eval_n = 1000;
  run.alignment_eval_n = 1000;

  // sigma1 is copied from base_spec, but a crazy c_sigma fails validation
  std::vector<SweepCell> cells = {{0.0, 1.0, 0.5, 1},
                                  {0.0, 1.0, 7.0, 1}};  // c_sigma > 1 invalid
  const auto rows = run_sweep(cells, run, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].error.empty());
  CHECK(!rows[1].error.empty());

  const auto dir = std::filesystem::temp_directory_path();
  save_sweep_csv(dir / "sweep_err.csv", rows);
  const std::string text = slurp(dir / "sweep_err.csv");
  CHECK(text.find("c_sigma") != std::string::npos);  // error message survives
  std::filesystem::remove(dir / "sweep_err.csv");
}

TEST_CASE("ope summary csv round trips an end-to-end run") {
  OpeRunConfig run;
  run.mdp_name = "chain";
  run.gamma = 0.5;
  run.n = 4000;
  run.ope.max_iters = 40;
  run.ope.tol = 1e-6;

  const auto a = run_ope_once(run, "speciv", 0.0, 5);
  const auto b = run_ope_once(run, "speciv", 0.0, 5);
  REQUIRE(a.error.empty());
  CHECK(a.rho_hat == b.rho_hat);  // determinism
  CHECK(a.converged);
  CHECK(std::abs(a.rho_hat - a.rho_exact) < 0.15 * std::abs(a.rho_exact));

  const auto dir = std::filesystem::temp_directory_path();
  save_ope_summary_csv(dir / "ope_summary.csv", {a});
  save_ope_trace_csv(dir / "ope_trace.csv", {a});
  const std::string summary = slurp(dir / "ope_summary.csv");
  CHECK(summary.find("speciv") != std::string::npos);
  CHECK(slurp(dir / "ope_trace.csv").find("supnorm_change") != std::string::npos);
  std::filesystem::remove(dir / "ope_summary.csv");
  std::filesystem::remove(dir / "ope_trace.csv");
}

TEST_CASE("alignment rows serialize with per-component singular values") {
  std::vector<AlignmentRow> rows(1);
  rows[0].delta = 0.5;
  rows[0].sigma_hat = Vector::LinSpaced(3, 1.0, 0.5);
  rows[0].align_plugin = 0.8;
  rows[0].align_true = 0.75;
  rows[0].l0_final = -1.2;
  rows[0].r_delta_final = -0.1;
  const auto dir = std::filesystem::temp_directory_path();
  save_alignment_csv(dir / "align.csv", rows);
  const std::string text = slurp(dir / "align.csv");
  CHECK(text.find("sigma_hat_3") != std::string::npos);
  CHECK(text.find("alignment_plugin") != std::string::npos);
  save_alignment_svg(dir / "align.svg", rows);
  CHECK(slurp(dir / "align.svg").find("<svg") != std::string::npos);
  std::filesystem::remove(dir / "align.csv");
  std::filesystem::remove(dir / "align.svg");
}
