#include "augspec/config.hpp"
#include "augspec/experiments.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace augspec;
namespace fs = std::filesystem;

SyntheticOperatorSpec operator_spec_from(const ConfigFile& cfg) {
  SyntheticOperatorSpec spec;
  spec.d = cfg.get_int("operator.d", 11);
  spec.sigma1 = cfg.get_double("operator.sigma1", 0.08);
  spec.c_sigma = cfg.get_double("operator.c_sigma", 0.2);
  spec.c_alpha = cfg.get_double("operator.c_alpha", 0.2);
  spec.noise_std = cfg.get_double("operator.noise_std", 0.1);
  spec.confound_strength = cfg.get_double("operator.confound_strength", 0.5);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("operator.seed", 0));
  return spec;
}

TrainConfig train_config_from(const ConfigFile& cfg) {
  TrainConfig train;
  train.d = cfg.get_int("train.d", 10);
  train.batch_size = cfg.get_int("train.batch_size", 512);
  train.steps = cfg.get_int("train.steps", 6000);
  train.adam.lr = cfg.get_double("train.lr", 1e-3);
  train.cov_eps = cfg.get_double("train.cov_eps", 1e-6);
  train.orthonormal_reg_weight = cfg.get_double("train.orthonormal_reg", 1.0);
  train.log_interval = cfg.get_int("train.log_interval", 100);
  const auto hidden = cfg.get_int_list("train.hidden", {50, 50});
  train.hidden.assign(hidden.begin(), hidden.end());
  return train;
}

void emit_operator_spec(ResolvedConfig& out, const SyntheticOperatorSpec& spec) {
  out.set("operator.d", static_cast<long>(spec.d));
  out.set("operator.sigma1", spec.sigma1);
  out.set("operator.c_sigma", spec.c_sigma);
  out.set("operator.c_alpha", spec.c_alpha);
  out.set("operator.noise_std", spec.noise_std);
  out.set("operator.confound_strength", spec.confound_strength);
  out.set("operator.seed", static_cast<long>(spec.seed));
}

void emit_train_config(ResolvedConfig& out, const TrainConfig& train) {
  out.set("train.d", static_cast<long>(train.d));
  out.set("train.batch_size", static_cast<long>(train.batch_size));
  out.set("train.steps", static_cast<long>(train.steps));
  out.set("train.lr", train.adam.lr);
  out.set("train.cov_eps", train.cov_eps);
  out.set("train.orthonormal_reg", train.orthonormal_reg_weight);
  out.set("train.log_interval", static_cast<long>(train.log_interval));
  std::vector<double> hidden(train.hidden.begin(), train.hidden.end());
  out.set("train.hidden", hidden);
}

int cmd_synth(const ConfigFile& cfg, const fs::path& out_dir) {
  const SyntheticOperatorSpec spec = operator_spec_from(cfg);
  const Index n = cfg.get_int("synth.n", 50000);
  const double split = cfg.get_double("synth.split_fraction", 0.5);
  const std::uint64_t seed =
      static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1));

  const GroundTruthOperator op = build_operator(spec);
  const Dataset ds = sample_dataset(op, n, split, seed);
  save_dataset_csv(out_dir / "dataset.csv", ds, op);

  // quick confounding readout: corr(Y - h0(X), h0(X)) is nonzero when the
  // confounder is on
  const Vector u_resid = ds.y - eval_h0(op, ds.x);
  const Vector h0 = eval_h0(op, ds.x);
  const double corr =
      u_resid.dot(h0) / std::max(1e-12, u_resid.norm() * h0.norm());
  std::cout << "wrote " << (out_dir / "dataset.csv").string() << " (" << n
            << " rows, split_m " << ds.split_m << ")\n"
            << "confounding corr(U, h0(X)) = " << corr << "\n";

  ResolvedConfig resolved;
  emit_operator_spec(resolved, spec);
  resolved.set("synth.n", static_cast<long>(n));
  resolved.set("synth.split_fraction", split);
  resolved.set("synth.seed", static_cast<long>(seed));
  resolved.write(out_dir / "resolved_config.toml");
  return 0;
}

int cmd_sweep(const ConfigFile& cfg, const fs::path& out_dir, Index jobs) {
  SweepRunConfig run;
  run.base_spec = operator_spec_from(cfg);
  run.n = cfg.get_int("sweep.n", 20000);
  run.split_fraction = cfg.get_double("sweep.split_fraction", 0.5);
  run.train = train_config_from(cfg);
  run.ridge = cfg.get_double("sweep.ridge", 1e-8);
  run.mse_eval_n = cfg.get_int("sweep.mse_eval_n", 100000);
  run.alignment_eval_n = cfg.get_int("sweep.alignment_eval_n", 50000);

  const auto deltas =
      cfg.get_double_list("sweep.deltas", {0.0, 0.5, 1.0, 3.0, 5.0});
  const auto c_alphas = cfg.get_double_list("sweep.c_alphas", {0.2, 5.0});
  const auto c_sigmas = cfg.get_double_list("sweep.c_sigmas", {0.2, 0.8});
  const auto seeds = cfg.get_int_list("sweep.seeds", {1, 2, 3, 4, 5});

  std::vector<SweepCell> cells;
  for (double ca : c_alphas) {
    for (double cs : c_sigmas) {
      for (double delta : deltas) {
        for (long seed : seeds) {
          cells.push_back({delta, ca, cs, static_cast<std::uint64_t>(seed)});
        }
      }
    }
  }
  const auto rows = run_sweep(cells, run, jobs);
  save_sweep_csv(out_dir / "sweep.csv", rows);
  if (cfg.get_bool("sweep.svg", true)) {
    save_sweep_svg(out_dir / "sweep.svg", rows);
  }

  ResolvedConfig resolved;
  emit_operator_spec(resolved, run.base_spec);
  emit_train_config(resolved, run.train);
  resolved.set("sweep.n", static_cast<long>(run.n));
  resolved.set("sweep.split_fraction", run.split_fraction);
  resolved.set("sweep.ridge", run.ridge);
  resolved.set("sweep.mse_eval_n", static_cast<long>(run.mse_eval_n));
  resolved.set("sweep.alignment_eval_n",
               static_cast<long>(run.alignment_eval_n));
  resolved.set("sweep.deltas", deltas);
  resolved.set("sweep.c_alphas", c_alphas);
  resolved.set("sweep.c_sigmas", c_sigmas);
  std::vector<double> seed_values(seeds.begin(), seeds.end());
  resolved.set("sweep.seeds", seed_values);
  resolved.write(out_dir / "resolved_config.toml");

  int failures = 0;
  for (const auto& row : rows) {
    if (!row.error.empty()) {
      ++failures;
      std::cerr << "cell failed (delta " << row.cell.delta << ", c_alpha "
                << row.cell.c_alpha << ", c_sigma " << row.cell.c_sigma
                << ", seed " << row.cell.seed << "): " << row.error << "\n";
    }
  }
  std::cout << "wrote " << (out_dir / "sweep.csv").string() << " ("
            << rows.size() << " cells, " << failures << " failed)\n";
  return failures == 0 ? 0 : 2;
}

int cmd_align(const ConfigFile& cfg, const fs::path& out_dir, Index jobs) {
  AlignmentRunConfig run;
  run.spec = operator_spec_from(cfg);
  run.n = cfg.get_int("align.n", 20000);
  run.split_fraction = cfg.get_double("align.split_fraction", 0.5);
  run.train = train_config_from(cfg);
  run.alignment_eval_n = cfg.get_int("align.alignment_eval_n", 50000);
  run.seed = static_cast<std::uint64_t>(cfg.get_int("align.seed", 1));
  const auto deltas =
      cfg.get_double_list("align.deltas", {0.0, 0.5, 1.0, 3.0, 5.0});

  const auto rows = run_alignment_experiment(run, deltas, jobs);
  save_alignment_csv(out_dir / "alignment.csv", rows);
  save_alignment_svg(out_dir / "alignment.svg", rows);

  ResolvedConfig resolved;
  emit_operator_spec(resolved, run.spec);
  emit_train_config(resolved, run.train);
  resolved.set("align.n", static_cast<long>(run.n));
  resolved.set("align.split_fraction", run.split_fraction);
  resolved.set("align.alignment_eval_n",
               static_cast<long>(run.alignment_eval_n));
  resolved.set("align.seed", static_cast<long>(run.seed));
  resolved.set("align.deltas", deltas);
  resolved.write(out_dir / "resolved_config.toml");

  std::cout << "wrote " << (out_dir / "alignment.csv").string() << " ("
            << rows.size() << " deltas)\n";
  return 0;
}

int cmd_ope(const ConfigFile& cfg, const fs::path& out_dir, Index jobs) {
  OpeRunConfig run;
  run.mdp_name = cfg.get_string("ope.mdp", "chain");
  run.chain_states = cfg.get_int("ope.chain_states", 5);
  run.chain_slip = cfg.get_double("ope.chain_slip", 0.0);
  run.gamma = cfg.get_double("ope.gamma", 0.9);
  run.reward_std = cfg.get_double("ope.reward_std", 0.1);
  run.n = cfg.get_int("ope.n", 20000);
  run.ope.max_iters = cfg.get_int("ope.max_iters", 100);
  run.ope.tol = cfg.get_double("ope.tol", 1e-4);
  run.ope.ridge = cfg.get_double("ope.ridge", 1e-8);
  const std::string mode = cfg.get_string("ope.feature_mode", "tabular");
  run.ope.feature_mode =
      mode == "linear" ? OpeFeatureMode::kLinear : OpeFeatureMode::kTabular;
  run.ope.d = cfg.get_int("ope.d", 3);
  run.ope.train.steps = cfg.get_int("ope.train_steps", 6000);
  run.ope.train.adam.lr = cfg.get_double("ope.train_lr", 5e-3);

  std::vector<std::string> estimators;
  if (cfg.get_bool("ope.run_speciv", true)) estimators.push_back("speciv");
  if (cfg.get_bool("ope.run_augspeciv", true)) estimators.push_back("augspeciv");
  const auto deltas = cfg.get_double_list("ope.deltas", {1e-3, 1e-2, 1e-1, 1.0});
  const auto seeds = cfg.get_int_list("ope.seeds", {1, 2, 3});

  struct Task {
    std::string estimator;
    double delta;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& est : estimators) {
    for (long seed : seeds) {
      if (est == "speciv") {
        tasks.push_back({est, 0.0, static_cast<std::uint64_t>(seed)});
      } else {
        for (double delta : deltas) {
          tasks.push_back({est, delta, static_cast<std::uint64_t>(seed)});
        }
      }
    }
  }
  std::vector<OpeRunResult> results(tasks.size());
  run_parallel(static_cast<Index>(tasks.size()), jobs, [&](Index i) {
    const auto& t = tasks[static_cast<std::size_t>(i)];
    results[static_cast<std::size_t>(i)] =
        run_ope_once(run, t.estimator, t.delta, t.seed);
  });

  save_ope_trace_csv(out_dir / "ope_trace.csv", results);
  save_ope_summary_csv(out_dir / "ope_summary.csv", results);

  ResolvedConfig resolved;
  resolved.set("ope.mdp", run.mdp_name);
  resolved.set("ope.chain_states", static_cast<long>(run.chain_states));
  resolved.set("ope.chain_slip", run.chain_slip);
  resolved.set("ope.gamma", run.gamma);
  resolved.set("ope.reward_std", run.reward_std);
  resolved.set("ope.n", static_cast<long>(run.n));
  resolved.set("ope.max_iters", static_cast<long>(run.ope.max_iters));
  resolved.set("ope.tol", run.ope.tol);
  resolved.set("ope.ridge", run.ope.ridge);
  resolved.set("ope.feature_mode", mode);
  resolved.set("ope.d", static_cast<long>(run.ope.d));
  resolved.set("ope.train_steps", static_cast<long>(run.ope.train.steps));
  resolved.set("ope.train_lr", run.ope.train.adam.lr);
  resolved.set("ope.deltas", deltas);
  std::vector<double> seed_values(seeds.begin(), seeds.end());
  resolved.set("ope.seeds", seed_values);
  resolved.write(out_dir / "resolved_config.toml");

  int failures = 0;
  for (const auto& r : results) {
    if (!r.error.empty()) {
      ++failures;
      std::cerr << "ope run failed (" << r.estimator << ", delta " << r.delta
                << ", seed " << r.seed << "): " << r.error << "\n";
    }
  }
  std::cout << "wrote " << (out_dir / "ope_summary.csv").string() << " ("
            << results.size() << " runs, " << failures << " failed)\n";
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augmented spectral feature learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  Index jobs = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")
        ->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "parallel cell workers");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* sweep = app.add_subcommand("sweep", "delta x alignment x seed sweep");
  auto* ope = app.add_subcommand("ope", "off-policy evaluation runs");
  auto* align = app.add_subcommand("align", "alignment report over deltas");
  for (auto* sub : {synth, sweep, ope, align}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = augspec::ConfigFile::parse_file(config_path);
    std::filesystem::create_directories(out_dir);
    if (synth->parsed()) return cmd_synth(cfg, out_dir);
    if (sweep->parsed()) return cmd_sweep(cfg, out_dir, jobs);
    if (ope->parsed()) return cmd_ope(cfg, out_dir, jobs);
    if (align->parsed()) return cmd_align(cfg, out_dir, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
