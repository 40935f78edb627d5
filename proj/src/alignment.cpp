#include "augspec/alignment.hpp"

#include <cmath>
#include <numbers>

namespace augspec {

EmpiricalSvd empirical_svd_features(const Matrix& phi_feats,
                                    const Matrix& psi_feats,
                                    const Vector& omega, double cov_eps) {
  const Index d = phi_feats.cols();
  if (psi_feats.cols() != d) {
    throw LinalgError("empirical_svd: feature widths must match");
  }
  if (omega.size() != d) {
    throw LinalgError("empirical_svd: omega width mismatch");
  }
  const double n = static_cast<double>(psi_feats.rows());
  const Matrix cov_psi = psi_feats.transpose() * psi_feats / n;
  const Matrix gram_right =
      phi_feats.transpose() * phi_feats / n + omega * omega.transpose();

  const Matrix cov_psi_half = sym_sqrt(cov_psi, cov_eps);
  const Matrix cov_psi_inv_half = sym_inv_sqrt(cov_psi, cov_eps);
  const Matrix gram_half = sym_sqrt(gram_right, cov_eps);
  const Matrix gram_inv_half = sym_inv_sqrt(gram_right, cov_eps);

  const SvdResult dec = svd(cov_psi_half * gram_half);

  EmpiricalSvd out;
  out.sigma_hat = dec.s;
  out.left_coeffs = cov_psi_inv_half * dec.u;
  out.right_coeffs = gram_inv_half * dec.vt.transpose();
  out.omega_hat = out.right_coeffs.transpose() * omega;
  return out;
}

EmpiricalSvd empirical_svd(const LearnedOperator& learned,
                           const DataSplit& split, double cov_eps) {
  if (split.size() < 10 * learned.d) {
    throw LinalgError("empirical_svd: split smaller than 10 d rows");
  }
  const Matrix phi = phi_features(learned, split.x);
  const Matrix psi = psi_features(learned, split.z);
  return empirical_svd_features(phi, psi, learned.omega, cov_eps);
}

AlignmentValue alignment_plugin_features(const EmpiricalSvd& emp,
                                         const Matrix& psi_feats_heldout,
                                         const Vector& y_heldout) {
  constexpr double kSigmaFloor = 1e-8;
  const Index d = emp.sigma_hat.size();
  const double n = static_cast<double>(psi_feats_heldout.rows());
  const Matrix psi_hat = psi_feats_heldout * emp.left_coeffs;  // n x d

  std::vector<Index> kept;
  kept.reserve(d);
  for (Index i = 0; i < d; ++i) {
    if (emp.sigma_hat(i) >= kSigmaFloor) kept.push_back(i);
  }

  AlignmentValue out;
  out.dropped = d - static_cast<Index>(kept.size());

  Vector alpha(static_cast<Index>(kept.size()));
  Vector omega(static_cast<Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const Index i = kept[j];
    alpha(static_cast<Index>(j)) =
        psi_hat.col(i).dot(y_heldout) / n / emp.sigma_hat(i);
    omega(static_cast<Index>(j)) = emp.omega_hat(i);
  }

  const double omega_sq = omega.squaredNorm();
  if (omega_sq >= 1.0 - 1e-8) {
    throw LinalgError("alignment_plugin: degenerate augmentation direction "
                      "(omega_hat norm >= 1)");
  }
  const double inner = omega.dot(alpha);
  out.value = alpha.squaredNorm() + inner * inner / (1.0 - omega_sq);
  return out;
}

AlignmentValue alignment_plugin(const EmpiricalSvd& emp,
                                const LearnedOperator& learned,
                                const DataSplit& heldout) {
  const Matrix psi = psi_features(learned, heldout.z);
  return alignment_plugin_features(emp, psi, heldout.y);
}

double alignment_true_featurizer(const Featurizer& featurize,
                                 const GroundTruthOperator& op, Index n_eval,
                                 std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x417));
  Vector xs(n_eval);
  for (Index i = 0; i < n_eval; ++i) {
    xs(i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
  }
  const Matrix phi = featurize(xs);
  const Vector h0 = eval_h0(op, xs);
  const double n = static_cast<double>(n_eval);
  const Matrix cov = phi.transpose() * phi / n;
  const Vector rhs = phi.transpose() * h0 / n;
  const Vector coeffs = ridge_solve(cov, rhs, 1e-10);
  return (phi * coeffs).squaredNorm() / n;
}

double alignment_true(const LearnedOperator& learned,
                      const GroundTruthOperator& op, Index n_eval,
                      std::uint64_t seed) {
  return alignment_true_featurizer(
      [&learned](const Vector& xs) { return phi_features(learned, xs); }, op,
      n_eval, seed);
}

double select_delta_loss_balance(const std::map<double, TrainTrace>& traces,
                                 double eta) {
  if (traces.empty()) {
    throw LinalgError("select_delta_loss_balance: empty candidate grid");
  }
  const auto zero = traces.find(0.0);
  if (zero == traces.end()) {
    throw LinalgError("select_delta_loss_balance: grid must include delta = 0");
  }
  const double l0_base = zero->second.final_record().l0;
  const double threshold = l0_base + eta * std::abs(l0_base);
  double chosen = 0.0;
  for (const auto& [delta, trace] : traces) {
    if (trace.final_record().l0 <= threshold && delta > chosen) chosen = delta;
  }
  return chosen;
}

double select_delta_stage2(
    const std::map<double, std::pair<LearnedOperator, StructuralEstimate>>&
        candidates,
    const DataSplit& heldout) {
  if (candidates.empty()) {
    throw LinalgError("select_delta_stage2: empty candidate grid");
  }
  double best_delta = candidates.begin()->first;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const auto& [delta, cand] : candidates) {
    const double loss = stage2_loss(cand.first, cand.second, heldout);
    if (loss < best_loss) {
      best_loss = loss;
      best_delta = delta;
    }
  }
  return best_delta;
}

double select_delta_alignment(const std::map<double, LearnedOperator>& candidates,
                              const DataSplit& heldout, double cov_eps) {
  if (candidates.empty()) {
    throw LinalgError("select_delta_alignment: empty candidate grid");
  }
  double best_delta = candidates.begin()->first;
  double best_value = -std::numeric_limits<double>::infinity();
  for (const auto& [delta, learned] : candidates) {
    const EmpiricalSvd emp = empirical_svd(learned, heldout, cov_eps);
    const double value = alignment_plugin(emp, learned, heldout).value;
    if (value > best_value) {
      best_value = value;
      best_delta = delta;
    }
  }
  return best_delta;
}

}  // namespace augspec
