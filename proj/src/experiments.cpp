#include "augspec/experiments.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

namespace augspec {

void run_parallel(Index n_tasks, Index jobs,
                  const std::function<void(Index)>& fn) {
  if (jobs <= 1 || n_tasks <= 1) {
    for (Index i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> workers;
  const Index n_workers = std::min(jobs, n_tasks);
  workers.reserve(static_cast<std::size_t>(n_workers));
  for (Index w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        const Index i = next.fetch_add(1);
        if (i >= n_tasks) return;
        fn(i);
      }
    });
  }
  for (auto& t : workers) t.join();
}

// ---------------------------------------------------------------------------

SweepCellResult run_sweep_cell(const SweepCell& cell, const SweepRunConfig& cfg) {
  SweepCellResult result;
  result.cell = cell;
  try {
    SyntheticOperatorSpec spec = cfg.base_spec;
    spec.c_alpha = cell.c_alpha;
    spec.c_sigma = cell.c_sigma;
    spec.seed = mix_seed(cell.seed, 0xA11);
    const GroundTruthOperator op = build_operator(spec);
    const Dataset ds =
        sample_dataset(op, cfg.n, cfg.split_fraction, mix_seed(cell.seed, 0xA12));

    TrainConfig train = cfg.train;
    train.delta = cell.delta;
    train.seed = mix_seed(cell.seed, 0xA13);
    const DataSplit dm = feature_split(ds);
    auto [learned, trace] = train_features(dm, train);

    const DataSplit dn = estimation_split(ds);
    const Matrix phi_n = phi_features(learned, dn.x);
    const Matrix psi_n = psi_features(learned, dn.z);
    StructuralEstimate est = fit_2sls(phi_n, psi_n, dn.y, cfg.ridge);
    est.featurize = featurizer_from_mlp(learned.phi_params);

    result.mse_raw = mse_l2(est, op, cfg.mse_eval_n, mix_seed(cell.seed, 0xA14));
    const EmpiricalSvd emp =
        empirical_svd_features(phi_n, psi_n, learned.omega, cfg.cov_eps);
    result.align_plugin = alignment_plugin_features(emp, psi_n, dn.y).value;
    result.align_true = alignment_true(learned, op, cfg.alignment_eval_n,
                                       mix_seed(cell.seed, 0xA15));
    result.illposedness = illposedness(phi_n, psi_n, cfg.cov_eps);
    result.l0_final = trace.final_record().l0;
    result.r_delta_final = trace.final_record().r_delta;
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

std::vector<SweepCellResult> run_sweep(const std::vector<SweepCell>& cells,
                                       const SweepRunConfig& cfg, Index jobs) {
  std::vector<SweepCellResult> rows(cells.size());
  run_parallel(static_cast<Index>(cells.size()), jobs, [&](Index i) {
    rows[static_cast<std::size_t>(i)] =
        run_sweep_cell(cells[static_cast<std::size_t>(i)], cfg);
  });
  normalize_sweep(rows);
  return rows;
}

void normalize_sweep(std::vector<SweepCellResult>& rows) {
  std::map<std::pair<double, double>, std::pair<double, Index>> base;
  for (const auto& row : rows) {
    if (!row.error.empty() || row.cell.delta != 0.0) continue;
    auto& acc = base[{row.cell.c_alpha, row.cell.c_sigma}];
    acc.first += row.mse_raw;
    acc.second += 1;
  }
  for (auto& row : rows) {
    if (!row.error.empty()) continue;
    const auto it = base.find({row.cell.c_alpha, row.cell.c_sigma});
    if (it == base.end() || it->second.second == 0) {
      row.mse_normalized = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double mean0 =
        it->second.first / static_cast<double>(it->second.second);
    row.mse_normalized = row.mse_raw / mean0;
  }
}

void save_sweep_csv(const std::filesystem::path& path,
                    const std::vector<SweepCellResult>& rows) {
  std::ofstream out(path);
  if (!out) throw LinalgError("save_sweep_csv: cannot open " + path.string());
  out << "delta,c_alpha,c_sigma,seed,mse,mse_normalized,alignment_plugin,"
         "alignment_true,illposedness,l0_final,r_delta_final,error\n";
  for (const auto& r : rows) {
    out << format_double(r.cell.delta) << ',' << format_double(r.cell.c_alpha)
        << ',' << format_double(r.cell.c_sigma) << ',' << r.cell.seed << ',';
    if (r.error.empty()) {
      out << format_double(r.mse_raw) << ',' << format_double(r.mse_normalized)
          << ',' << format_double(r.align_plugin) << ','
          << format_double(r.align_true) << ',' << format_double(r.illposedness)
          << ',' << format_double(r.l0_final) << ','
          << format_double(r.r_delta_final) << ',';
    } else {
      out << ",,,,,,,";
    }
    // commas inside error messages would break the schema
    std::string err = r.error;
    for (auto& c : err) {
      if (c == ',' || c == '\n') c = ';';
    }
    out << err << '\n';
  }
}

void save_sweep_svg(const std::filesystem::path& path,
                    const std::vector<SweepCellResult>& rows) {
  std::map<std::pair<double, double>, std::map<double, std::vector<double>>>
      groups;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    groups[{r.cell.c_alpha, r.cell.c_sigma}][r.cell.delta].push_back(
        r.mse_normalized);
  }
  std::vector<BoxPanel> panels;
  for (const auto& [key, by_delta] : groups) {
    BoxPanel panel;
    std::ostringstream title;
    title << "c_alpha=" << key.first << "  c_sigma=" << key.second;
    panel.title = title.str();
    for (const auto& [delta, values] : by_delta) {
      std::ostringstream label;
      label << "delta=" << delta;
      panel.series.push_back({label.str(), values});
    }
    panels.push_back(std::move(panel));
  }
  write_box_plot_svg(path, panels, "normalized MSE");
}

// ---------------------------------------------------------------------------

std::vector<AlignmentRow> run_alignment_experiment(const AlignmentRunConfig& cfg,
                                                   const std::vector<double>& deltas,
                                                   Index jobs) {
  if (deltas.empty()) {
    throw LinalgError("run_alignment_experiment: empty delta grid");
  }
  const GroundTruthOperator op = build_operator(cfg.spec);
  const Dataset ds =
      sample_dataset(op, cfg.n, cfg.split_fraction, mix_seed(cfg.seed, 0xB21));
  const DataSplit dm = feature_split(ds);
  const DataSplit dn = estimation_split(ds);

  std::vector<AlignmentRow> rows(deltas.size());
  run_parallel(static_cast<Index>(deltas.size()), jobs, [&](Index i) {
    const double delta = deltas[static_cast<std::size_t>(i)];
    TrainConfig train = cfg.train;
    train.delta = delta;
    train.seed = mix_seed(cfg.seed, 0xB22);
    auto [learned, trace] = train_features(dm, train);

    AlignmentRow row;
    row.delta = delta;
    const EmpiricalSvd emp = empirical_svd(learned, dn, cfg.cov_eps);
    row.sigma_hat = emp.sigma_hat;
    row.align_plugin = alignment_plugin(emp, learned, dn).value;
    row.align_true = alignment_true(learned, op, cfg.alignment_eval_n,
                                    mix_seed(cfg.seed, 0xB23));
    row.l0_final = trace.final_record().l0;
    row.r_delta_final = trace.final_record().r_delta;
    rows[static_cast<std::size_t>(i)] = std::move(row);
  });
  return rows;
}

void save_alignment_csv(const std::filesystem::path& path,
                        const std::vector<AlignmentRow>& rows) {
  std::ofstream out(path);
  if (!out) throw LinalgError("save_alignment_csv: cannot open " + path.string());
  const Index d = rows.empty() ? 0 : rows.front().sigma_hat.size();
  out << "delta";
  for (Index i = 1; i <= d; ++i) out << ",sigma_hat_" << i;
  out << ",alignment_plugin,alignment_true,l0_final,r_delta_final\n";
  for (const auto& r : rows) {
    out << format_double(r.delta);
    for (Index i = 0; i < r.sigma_hat.size(); ++i) {
      out << ',' << format_double(r.sigma_hat(i));
    }
    out << ',' << format_double(r.align_plugin) << ','
        << format_double(r.align_true) << ',' << format_double(r.l0_final)
        << ',' << format_double(r.r_delta_final) << '\n';
  }
}

void save_alignment_svg(const std::filesystem::path& path,
                        const std::vector<AlignmentRow>& rows) {
  LineSeries l0, r_delta, plugin, truth;
  l0.label = "final L0";
  r_delta.label = "final R_delta";
  plugin.label = "alignment (plug-in)";
  truth.label = "alignment (true)";
  for (const auto& r : rows) {
    l0.xs.push_back(r.delta);
    l0.ys.push_back(r.l0_final);
    r_delta.xs.push_back(r.delta);
    r_delta.ys.push_back(r.r_delta_final);
    plugin.xs.push_back(r.delta);
    plugin.ys.push_back(r.align_plugin);
    truth.xs.push_back(r.delta);
    truth.ys.push_back(r.align_true);
  }
  write_line_chart_svg(path, {l0, r_delta, plugin, truth},
                       "loss terms and alignment vs delta", "delta", "value");
}

// ---------------------------------------------------------------------------

TabularMdp make_named_mdp(const OpeRunConfig& cfg) {
  if (cfg.mdp_name == "chain") {
    return make_chain_mdp(cfg.chain_states, cfg.chain_slip, cfg.gamma,
                          cfg.reward_std);
  }
  if (cfg.mdp_name == "misaligned") {
    return make_misaligned_mdp(cfg.gamma, cfg.reward_std);
  }
  throw OpeError("unknown mdp name: " + cfg.mdp_name);
}

Policy experiment_target_policy(const std::string& mdp_name,
                                const TabularMdp& mdp) {
  // deterministic last action: the chain's "move right" and the misaligned
  // MDP's positive-reward action; keeps evaluation properly off-policy
  // against the uniform behavior policy
  (void)mdp_name;
  Policy pi;
  pi.probs = Matrix::Zero(mdp.n_states, mdp.n_actions);
  pi.probs.col(mdp.n_actions - 1).setOnes();
  return pi;
}

OpeRunResult run_ope_once(const OpeRunConfig& cfg, const std::string& estimator,
                          double delta, std::uint64_t seed) {
  OpeRunResult run;
  run.estimator = estimator;
  run.delta = estimator == "speciv" ? 0.0 : delta;
  run.seed = seed;
  try {
    const TabularMdp mdp = make_named_mdp(cfg);
    const Policy pi = experiment_target_policy(cfg.mdp_name, mdp);
    const Policy pi_b = uniform_policy(mdp.n_states, mdp.n_actions);
    const OfflineData data = collect_offline(mdp, pi_b, cfg.n, seed);

    OpeConfig ope = cfg.ope;
    ope.delta = run.delta;
    ope.seed = mix_seed(seed, 0xC31);
    const OpeResult res = iterative_npiv_ope(mdp, data, pi, ope);

    run.rho_hat = res.rho_hat;
    run.rho_exact = policy_value(mdp, exact_q(mdp, pi), pi);
    run.converged = res.converged;
    run.iterations = static_cast<Index>(res.trace.size());
    run.trace = res.trace;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

void save_ope_trace_csv(const std::filesystem::path& path,
                        const std::vector<OpeRunResult>& runs) {
  std::ofstream out(path);
  if (!out) throw OpeError("save_ope_trace_csv: cannot open " + path.string());
  out << "estimator,delta,seed,iter,supnorm_change,bellman_residual,rho_hat\n";
  for (const auto& run : runs) {
    for (const auto& rec : run.trace) {
      out << run.estimator << ',' << format_double(run.delta) << ',' << run.seed
          << ',' << rec.iter << ',' << format_double(rec.supnorm_change) << ','
          << format_double(rec.bellman_residual) << ','
          << format_double(rec.rho_hat) << '\n';
    }
  }
}

void save_ope_summary_csv(const std::filesystem::path& path,
                          const std::vector<OpeRunResult>& runs) {
  std::ofstream out(path);
  if (!out) throw OpeError("save_ope_summary_csv: cannot open " + path.string());
  out << "estimator,delta,seed,rho_hat,rho_exact,abs_error,converged,"
         "iterations,error\n";
  for (const auto& run : runs) {
    out << run.estimator << ',' << format_double(run.delta) << ',' << run.seed
        << ',';
    if (run.error.empty()) {
      out << format_double(run.rho_hat) << ',' << format_double(run.rho_exact)
          << ',' << format_double(std::abs(run.rho_hat - run.rho_exact)) << ','
          << (run.converged ? "true" : "false") << ',' << run.iterations << ',';
    } else {
      out << ",,,,,";
    }
    std::string err = run.error;
    for (auto& c : err) {
      if (c == ',' || c == '\n') c = ';';
    }
    out << err << '\n';
  }
}

}  // namespace augspec
