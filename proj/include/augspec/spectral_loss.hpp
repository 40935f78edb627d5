#pragma once

#include "augspec/mlp.hpp"
#include "augspec/synthgen.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace augspec {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Trained representation of the augmented operator: two feature networks,
/// the auxiliary direction omega and the augmentation weight delta.
/// delta == 0 implies omega == 0.
struct LearnedOperator {
  MlpParams phi_params;
  MlpParams psi_params;
  Vector omega;
  double delta = 0.0;
  Index d = 0;

  /// Extra augmentation directions for rank-K (K >= 2) training; entry k
  /// pairs extra_omegas[k] with extra_deltas[k]. Empty in the rank-one case.
  std::vector<Vector> extra_omegas;
  std::vector<double> extra_deltas;
};

struct TrainConfig {
  Index d = 10;
  double delta = 0.0;
  Index batch_size = 512;
  Index steps = 6000;
  AdamConfig adam;
  double cov_eps = 1e-6;
  double orthonormal_reg_weight = 1.0;
  std::vector<double> higher_rank_deltas;  // when set, overrides delta
  std::uint64_t seed = 0;
  Index log_interval = 100;
  std::vector<Index> hidden = {50, 50};  // snake, then gelu, then linear head
};

struct TraceRecord {
  Index step = 0;
  double l0 = 0.0;
  double r_delta = 0.0;
  double ortho_pen = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  const TraceRecord& final_record() const { return records.back(); }
};

void save_trace_csv(const std::filesystem::path& path, const TrainTrace& trace);

// ---------------------------------------------------------------------------
// Empirical losses on feature batches (rows are samples).

/// Contrastive loss: off-diagonal U-statistic for the product-measure term,
/// diagonal mean for the joint term,
///   (1/(B(B-1))) sum_{i != j} (phi_i' psi_j)^2 - (2/B) sum_i phi_i' psi_i.
double loss_l0(const Matrix& phi_feats, const Matrix& psi_feats);

/// Extended augmented loss. omega enters quadratically, so training avoids
/// differentiating through an inverse covariance.
double loss_ldelta_extended(const Matrix& phi_feats, const Matrix& psi_feats,
                            const Vector& y, const Vector& omega, double delta);

struct ProfileLoss {
  double total = 0.0;
  double r_delta = 0.0;
};

/// Profile form: r_delta = -delta^2 E[y psi]' (C_psi + eps I)^{-1} E[y psi].
/// Reporting-only path.
ProfileLoss loss_ldelta_profile(const Matrix& phi_feats, const Matrix& psi_feats,
                                const Vector& y, double delta, double cov_eps);

/// Rank-K extension with moment targets f_k(y) = y^k.
double loss_higher_rank(const Matrix& phi_feats, const Matrix& psi_feats,
                        const Vector& y, const std::vector<Vector>& omegas,
                        const Vector& deltas);

/// || (1/B) F' F - I ||_F^2.
double orthonormal_penalty(const Matrix& feats);

/// Value and cotangents of the training objective
///   extended rank-K loss + ortho_weight * (penalty(phi) + penalty(psi)).
struct LossGrads {
  double value = 0.0;
  Matrix d_phi;
  Matrix d_psi;
  std::vector<Vector> d_omegas;
};

LossGrads loss_extended_grads(const Matrix& phi_feats, const Matrix& psi_feats,
                              const Vector& y,
                              const std::vector<Vector>& omegas,
                              const Vector& deltas, double ortho_weight);

// ---------------------------------------------------------------------------
// Feature training on data.

/// Minibatch Adam on the extended loss, jointly over both networks and
/// omega; logs full-split L0 / R_delta / orthonormality penalty every
/// log_interval steps. Deterministic per (config, seed).
std::pair<LearnedOperator, TrainTrace> train_features(const DataSplit& dm,
                                                      const TrainConfig& cfg);

/// Feature matrices of a learned operator on raw inputs.
Matrix phi_features(const LearnedOperator& op, const Vector& xs);
Matrix psi_features(const LearnedOperator& op, const Vector& zs);

// ---------------------------------------------------------------------------
// Linear features with exact moments.
//
// When features are linear maps of a fixed dictionary, every term of the
// population-form loss is a function of second-order moments, so training
// reduces to deterministic full-batch optimization. Used for the synthetic
// operator in its closed-form basis and for one-hot tabular problems.

struct MomentProblem {
  Matrix cov_bx;     // E[b_x(X)  b_x(X)']
  Matrix cov_bz;     // E[b_z(Z)  b_z(Z)']
  Matrix cross_zx;   // E[b_z(Z)  b_x(X)']
  Matrix y_moments;  // row k-1: E[y^k b_z(Z)'], k = 1..K
};

struct LinearFeatures {
  Matrix a_phi;  // d x dim(b_x); phi(x) = a_phi b_x(x)
  Matrix a_psi;  // d x dim(b_z)
  std::vector<Vector> omegas;
};

/// Population-form loss under the problem's moments (joint term uses the
/// plain covariance contraction, no U-statistic correction).
double moment_loss(const MomentProblem& prob, const LinearFeatures& feats,
                   const Vector& deltas);

LossGrads moment_loss_grads(const MomentProblem& prob,
                            const LinearFeatures& feats, const Vector& deltas);

struct MomentTrainConfig {
  Index steps = 20000;
  AdamConfig adam{.lr = 5e-3};
  std::uint64_t seed = 0;
};

LinearFeatures train_linear_moments(const MomentProblem& prob, Index d,
                                    const Vector& deltas,
                                    const MomentTrainConfig& cfg);

}  // namespace augspec
