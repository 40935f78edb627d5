#pragma once

#include "augspec/spectral_loss.hpp"
#include "augspec/synthgen.hpp"

#include <functional>

namespace augspec {

/// Maps a batch of raw treatment values to an n x d feature matrix.
using Featurizer = std::function<Matrix(const Vector&)>;

Featurizer featurizer_from_mlp(MlpParams params);

/// Feature-space 2SLS fit: beta plus the feature map needed to predict.
struct StructuralEstimate {
  Vector beta;
  double ridge_used = 0.0;
  Featurizer featurize;  // optional; required by predict()/mse_l2()
};

/// beta = (C_pp (C_p + eI)^{-1} C_pf + eI)^{-1} C_pp (C_p + eI)^{-1} E[Y psi]
/// with all moments taken over the supplied rows (intended: the estimation
/// split). psi may have a different width p than phi.
StructuralEstimate fit_2sls(const Matrix& phi_feats, const Matrix& psi_feats,
                            const Vector& y, double ridge);

Vector predict_features(const StructuralEstimate& est, const Matrix& phi_feats);
Vector predict(const StructuralEstimate& est, const Vector& xs);

/// Monte-Carlo E_X[(h_hat(X) - h0(X))^2] over fresh uniform draws.
double mse_l2(const StructuralEstimate& est, const GroundTruthOperator& op,
              Index n_eval, std::uint64_t seed);

/// sigma_d of the whitened empirical cross-covariance
/// (C_psi+e)^{-1/2} C_psi,phi (C_phi+e)^{-1/2}; requires equal widths.
double illposedness(const Matrix& phi_feats, const Matrix& psi_feats,
                    double cov_eps);

/// Empirical sup over rows and coordinates of |(C+e)^{-1/2} feat|.
double boundedness_rho(const Matrix& feats, double cov_eps);

/// Held-out mean of (psi(z_i)' C_phi beta - y_i)^2 with C_phi estimated on
/// the same held-out split; the operator action on the phi-span.
double stage2_loss(const LearnedOperator& learned, const StructuralEstimate& est,
                   const DataSplit& heldout);
double stage2_loss_features(const Matrix& phi_feats_heldout,
                            const Matrix& psi_feats_heldout,
                            const Vector& y_heldout, const Vector& beta);

/// Feature estimate serialization: beta, ridge, checkpoint reference and the
/// split sizes that produced it.
void save_estimate_json(const std::filesystem::path& path,
                        const StructuralEstimate& est,
                        const std::string& checkpoint_ref, Index n_feature_rows,
                        Index n_estimation_rows);

}  // namespace augspec
