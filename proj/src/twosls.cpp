#include "augspec/twosls.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace augspec {

Featurizer featurizer_from_mlp(MlpParams params) {
  return [params = std::move(params)](const Vector& xs) {
    return mlp_forward(params,
                       Eigen::Map<const Matrix>(xs.data(), xs.size(), 1));
  };
}

StructuralEstimate fit_2sls(const Matrix& phi_feats, const Matrix& psi_feats,
                            const Vector& y, double ridge) {
  const Index n = phi_feats.rows();
  const Index d = phi_feats.cols();
  const Index p = psi_feats.cols();
  if (psi_feats.rows() != n || y.size() != n) {
    throw LinalgError("fit_2sls: row count mismatch");
  }
  if (n <= std::max(d, p)) {
    throw LinalgError("fit_2sls: need more rows than features");
  }
  const double nn = static_cast<double>(n);
  const Matrix cov_psi = psi_feats.transpose() * psi_feats / nn;      // p x p
  const Matrix cov_psi_phi = psi_feats.transpose() * phi_feats / nn;  // p x d
  const Vector ey_psi = psi_feats.transpose() * y / nn;

  // First stage: (C_psi + eI)^{-1} applied to both the cross-covariance and
  // the outcome moment.
  const Matrix stage1 = ridge_solve(cov_psi, cov_psi_phi, ridge);  // p x d
  const Vector stage1_y = ridge_solve(cov_psi, ey_psi, ridge);

  const Matrix inner = cov_psi_phi.transpose() * stage1;  // d x d
  const Vector rhs = cov_psi_phi.transpose() * stage1_y;

  StructuralEstimate est;
  est.beta = ridge_solve(inner, rhs, ridge);
  est.ridge_used = ridge;
  return est;
}

Vector predict_features(const StructuralEstimate& est, const Matrix& phi_feats) {
  if (phi_feats.cols() != est.beta.size()) {
    throw LinalgError("predict_features: feature width mismatch");
  }
  return phi_feats * est.beta;
}

Vector predict(const StructuralEstimate& est, const Vector& xs) {
  if (!est.featurize) {
    throw LinalgError("predict: estimate carries no feature map");
  }
  return predict_features(est, est.featurize(xs));
}

double mse_l2(const StructuralEstimate& est, const GroundTruthOperator& op,
              Index n_eval, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x315));
  Vector xs(n_eval);
  for (Index i = 0; i < n_eval; ++i) {
    xs(i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
  }
  const Vector h_hat = predict(est, xs);
  const Vector h0 = eval_h0(op, xs);
  return (h_hat - h0).squaredNorm() / static_cast<double>(n_eval);
}

double illposedness(const Matrix& phi_feats, const Matrix& psi_feats,
                    double cov_eps) {
  if (phi_feats.cols() != psi_feats.cols()) {
    throw LinalgError("illposedness: feature widths must match");
  }
  if (phi_feats.rows() != psi_feats.rows()) {
    throw LinalgError("illposedness: row count mismatch");
  }
  const double n = static_cast<double>(phi_feats.rows());
  const Matrix cov_phi = phi_feats.transpose() * phi_feats / n;
  const Matrix cov_psi = psi_feats.transpose() * psi_feats / n;
  const Matrix cross = psi_feats.transpose() * phi_feats / n;
  const Matrix whitened =
      sym_inv_sqrt(cov_psi, cov_eps) * cross * sym_inv_sqrt(cov_phi, cov_eps);
  const Vector s = svd(whitened).s;
  return s(s.size() - 1);
}

double boundedness_rho(const Matrix& feats, double cov_eps) {
  if (feats.rows() < feats.cols()) {
    throw LinalgError("boundedness_rho: need at least d rows");
  }
  const double n = static_cast<double>(feats.rows());
  const Matrix cov = feats.transpose() * feats / n;
  const Matrix whitened = feats * sym_inv_sqrt(cov, cov_eps);
  return whitened.cwiseAbs().maxCoeff();
}

double stage2_loss_features(const Matrix& phi_feats_heldout,
                            const Matrix& psi_feats_heldout,
                            const Vector& y_heldout, const Vector& beta) {
  const Index n = phi_feats_heldout.rows();
  if (psi_feats_heldout.rows() != n || y_heldout.size() != n) {
    throw LinalgError("stage2_loss: row count mismatch");
  }
  const double nn = static_cast<double>(n);
  const Matrix cov_phi = phi_feats_heldout.transpose() * phi_feats_heldout / nn;
  const Vector operator_applied = psi_feats_heldout * (cov_phi * beta);
  return (operator_applied - y_heldout).squaredNorm() / nn;
}

double stage2_loss(const LearnedOperator& learned, const StructuralEstimate& est,
                   const DataSplit& heldout) {
  const Matrix phi = phi_features(learned, heldout.x);
  const Matrix psi = psi_features(learned, heldout.z);
  return stage2_loss_features(phi, psi, heldout.y, est.beta);
}

void save_estimate_json(const std::filesystem::path& path,
                        const StructuralEstimate& est,
                        const std::string& checkpoint_ref, Index n_feature_rows,
                        Index n_estimation_rows) {
  nlohmann::json doc;
  doc["format"] = "augspec-estimate-v1";
  doc["beta"] = std::vector<double>(est.beta.data(),
                                    est.beta.data() + est.beta.size());
  doc["ridge"] = est.ridge_used;
  doc["feature_checkpoint"] = checkpoint_ref;
  doc["split"] = {{"feature_rows", n_feature_rows},
                  {"estimation_rows", n_estimation_rows}};
  std::ofstream out(path);
  if (!out) throw LinalgError("save_estimate_json: cannot open " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace augspec
