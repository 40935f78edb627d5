#pragma once

#include "augspec/alignment.hpp"
#include "augspec/ope.hpp"
#include "augspec/spectral_loss.hpp"
#include "augspec/svg.hpp"
#include "augspec/synthgen.hpp"
#include "augspec/twosls.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace augspec {

/// Runs tasks 0..n_tasks-1 on up to `jobs` threads. Tasks must be
/// independent; results are whatever fn writes into caller-owned slots.
void run_parallel(Index n_tasks, Index jobs,
                  const std::function<void(Index)>& fn);

// ---------------------------------------------------------------------------
// delta x (c_alpha, c_sigma) x seed sweep on the synthetic benchmark.

struct SweepRunConfig {
  SyntheticOperatorSpec base_spec;  // d, sigma1, noise, confounding
  Index n = 20000;
  double split_fraction = 0.5;
  TrainConfig train;  // delta/seed overridden per cell
  double ridge = 1e-8;
  Index mse_eval_n = 100000;
  Index alignment_eval_n = 50000;
  double cov_eps = 1e-8;
};

struct SweepCell {
  double delta = 0.0;
  double c_alpha = 0.2;
  double c_sigma = 0.2;
  std::uint64_t seed = 0;
};

struct SweepCellResult {
  SweepCell cell;
  double mse_raw = 0.0;
  double mse_normalized = 0.0;  // filled by normalize_sweep
  double align_plugin = 0.0;
  double align_true = 0.0;
  double illposedness = 0.0;
  double l0_final = 0.0;
  double r_delta_final = 0.0;
  std::string error;  // non-empty rows are failures; the sweep continues
};

SweepCellResult run_sweep_cell(const SweepCell& cell, const SweepRunConfig& cfg);

std::vector<SweepCellResult> run_sweep(const std::vector<SweepCell>& cells,
                                       const SweepRunConfig& cfg, Index jobs);

/// Per (c_alpha, c_sigma) group, divides by the mean delta = 0 MSE.
void normalize_sweep(std::vector<SweepCellResult>& rows);

void save_sweep_csv(const std::filesystem::path& path,
                    const std::vector<SweepCellResult>& rows);

void save_sweep_svg(const std::filesystem::path& path,
                    const std::vector<SweepCellResult>& rows);

// ---------------------------------------------------------------------------
// Alignment report over a delta grid on one dataset.

struct AlignmentRunConfig {
  SyntheticOperatorSpec spec;
  Index n = 20000;
  double split_fraction = 0.5;
  TrainConfig train;
  double cov_eps = 1e-8;
  Index alignment_eval_n = 50000;
  std::uint64_t seed = 0;
};

struct AlignmentRow {
  double delta = 0.0;
  Vector sigma_hat;
  double align_plugin = 0.0;
  double align_true = 0.0;
  double l0_final = 0.0;
  double r_delta_final = 0.0;
};

std::vector<AlignmentRow> run_alignment_experiment(const AlignmentRunConfig& cfg,
                                                   const std::vector<double>& deltas,
                                                   Index jobs);

void save_alignment_csv(const std::filesystem::path& path,
                        const std::vector<AlignmentRow>& rows);

void save_alignment_svg(const std::filesystem::path& path,
                        const std::vector<AlignmentRow>& rows);

// ---------------------------------------------------------------------------
// OPE runs.

struct OpeRunConfig {
  std::string mdp_name = "chain";  // chain | misaligned
  Index chain_states = 5;
  double chain_slip = 0.0;
  double gamma = 0.9;
  double reward_std = 0.1;
  Index n = 20000;
  OpeConfig ope;  // delta/seed/feature settings overridden per run
};

TabularMdp make_named_mdp(const OpeRunConfig& cfg);

/// Target policy used by the experiments: deterministic "always the last
/// action" on the chain, uniform on action-symmetric MDPs.
Policy experiment_target_policy(const std::string& mdp_name, const TabularMdp& mdp);

struct OpeRunResult {
  std::string estimator;  // speciv | augspeciv
  double delta = 0.0;
  std::uint64_t seed = 0;
  double rho_hat = 0.0;
  double rho_exact = 0.0;
  bool converged = false;
  Index iterations = 0;
  std::vector<OpeIterRecord> trace;
  std::string error;
};

OpeRunResult run_ope_once(const OpeRunConfig& cfg, const std::string& estimator,
                          double delta, std::uint64_t seed);

void save_ope_trace_csv(const std::filesystem::path& path,
                        const std::vector<OpeRunResult>& runs);
void save_ope_summary_csv(const std::filesystem::path& path,
                          const std::vector<OpeRunResult>& runs);

}  // namespace augspec
