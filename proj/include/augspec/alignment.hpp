#pragma once

#include "augspec/spectral_loss.hpp"
#include "augspec/synthgen.hpp"
#include "augspec/twosls.hpp"

#include <map>

namespace augspec {

/// Whitened singular system of the learned augmented operator. Column i of
/// left_coeffs mixes the raw psi features into the i-th left singular
/// function; right_coeffs does the same for the phi part, and omega_hat(i)
/// is the R-coordinate of the i-th right singular element.
struct EmpiricalSvd {
  Vector sigma_hat;
  Matrix left_coeffs;   // A_psi, d x d
  Matrix right_coeffs;  // A_phi, d x d
  Vector omega_hat;
};

/// Whitens with the empirical covariances (C_psi for the left space,
/// C_phi + omega omega' for the right product space), then SVDs
/// K = C_psi^{1/2} (C_phi + omega omega')^{1/2}.
EmpiricalSvd empirical_svd_features(const Matrix& phi_feats,
                                    const Matrix& psi_feats,
                                    const Vector& omega, double cov_eps);

/// Forwards the learned networks on the split, then whitens. Requires at
/// least 10 d rows.
EmpiricalSvd empirical_svd(const LearnedOperator& learned,
                           const DataSplit& split, double cov_eps);

struct AlignmentValue {
  double value = 0.0;
  Index dropped = 0;  // components with sigma_hat below the 1e-8 floor
};

/// Plug-in estimate of ||Pi_{phi*} h0||^2: alpha_i = E[Y psi_hat_i] / s_i on
/// held-out data, combined through the Sherman-Morrison form
/// alpha'alpha + (omega'alpha)^2 / (1 - omega'omega).
AlignmentValue alignment_plugin(const EmpiricalSvd& emp,
                                const LearnedOperator& learned,
                                const DataSplit& heldout);
AlignmentValue alignment_plugin_features(const EmpiricalSvd& emp,
                                         const Matrix& psi_feats_heldout,
                                         const Vector& y_heldout);

/// Monte-Carlo ||Pi_{phi} h0||^2 against the synthetic ground truth: project
/// h0 onto the span of the features in the empirical L2 inner product.
double alignment_true(const LearnedOperator& learned,
                      const GroundTruthOperator& op, Index n_eval,
                      std::uint64_t seed);
double alignment_true_featurizer(const Featurizer& featurize,
                                 const GroundTruthOperator& op, Index n_eval,
                                 std::uint64_t seed);

/// Largest delta whose final L0 stays within eta * |L0(0)| of the delta = 0
/// run. The grid must contain delta = 0.
double select_delta_loss_balance(const std::map<double, TrainTrace>& traces,
                                 double eta);

/// Argmin of the held-out stage-2 loss; ties toward smaller delta.
double select_delta_stage2(
    const std::map<double, std::pair<LearnedOperator, StructuralEstimate>>&
        candidates,
    const DataSplit& heldout);

/// Argmax of the plug-in alignment; ties toward smaller delta.
double select_delta_alignment(const std::map<double, LearnedOperator>& candidates,
                              const DataSplit& heldout, double cov_eps);

}  // namespace augspec
