#pragma once

#include "augspec/linalg.hpp"
#include "augspec/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace augspec {

class SynthError : public std::runtime_error {
 public:
  explicit SynthError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Parameters of the finite-rank conditional expectation operator
///   T = 1_Z (x) 1_X + sum_{i=1}^{d-1} sigma_i u_i (x) v_i
/// on [-pi, pi] with uniform marginals. d counts the constant component.
struct SyntheticOperatorSpec {
  Index d = 11;                    // operator rank including the constant
  double sigma1 = 0.08;            // leading non-constant singular value
  double c_sigma = 0.2;            // sigma_{d-1} / sigma_1, in (0, 1]
  double c_alpha = 0.2;            // alpha_{d-1} / alpha_1, > 0
  double noise_std = 0.1;          // std of the independent additive noise
  double confound_strength = 0.5;  // rho_c
  std::uint64_t seed = 0;
};

/// Closed-form operator: u_i, v_i live in the span of the orthonormalized
/// sine basis {sqrt(2) sin(l t)}_{l=1}^{d-1}; column i of u_coeffs /
/// v_coeffs holds the basis coefficients of u_i / v_i. h0 = sum alpha_i v_i
/// with ||alpha|| = 1.
struct GroundTruthOperator {
  SyntheticOperatorSpec spec;
  Vector sigmas;    // d-1, descending, > 0
  Matrix u_coeffs;  // (d-1) x (d-1), orthogonal
  Matrix v_coeffs;  // (d-1) x (d-1), orthogonal
  Vector alpha;     // d-1, unit norm
};

/// Confounded scalar dataset. Rows [0, split_m) form the feature-learning
/// split, the remainder the estimation split.
struct Dataset {
  Vector z;
  Vector x;
  Vector y;
  std::uint64_t seed = 0;
  Index split_m = 0;
};

/// A contiguous (z, x, y) view used by training and estimation routines.
struct DataSplit {
  Vector z;
  Vector x;
  Vector y;
  Index size() const { return z.size(); }
};

DataSplit feature_split(const Dataset& ds);     // first split_m rows
DataSplit estimation_split(const Dataset& ds);  // remaining rows

/// Orthonormalized sine dictionary: column l-1 is sqrt(2) sin(l t).
Matrix sine_basis(const Vector& ts, Index n_funcs);

/// Draws the random orthogonal bases, fixes singular values and structural
/// coefficients, and verifies joint-density positivity on a 400x400 grid
/// (minimum must exceed 0.01, otherwise the spec is rejected).
GroundTruthOperator build_operator(const SyntheticOperatorSpec& spec);

/// Evaluates the singular functions at given points; column i is u_i / v_i.
Matrix eval_u(const GroundTruthOperator& op, const Vector& zs);
Matrix eval_v(const GroundTruthOperator& op, const Vector& xs);

/// Structural function h0(x) = sum_i alpha_i v_i(x).
Vector eval_h0(const GroundTruthOperator& op, const Vector& xs);

/// (T h)(z) = sum_i sigma_i beta_i u_i(z) for h = sum_i beta_i v_i.
Vector apply_T(const GroundTruthOperator& op, const Vector& coeffs_in_v_basis,
               const Vector& zs);

/// Operator matrix in the (constant ⊕ sine) basis:
/// blockdiag(1, U diag(sigma) V^T), d x d, constant component first.
Matrix operator_matrix(const GroundTruthOperator& op);

/// Augmented operator matrix [T | delta * r0] in the same basis, d x (d+1).
Matrix augmented_operator_matrix(const GroundTruthOperator& op, double delta);

/// Coefficients of h0 in the (constant ⊕ sine) basis (leading zero).
Vector h0_basis_coeffs(const GroundTruthOperator& op);

/// Spectral gap gamma_d(delta) for a partition of {1..d-1}: indices in
/// bar_n (1-based) form the signal block. May be negative.
double gap_gamma(const GroundTruthOperator& op, const std::vector<Index>& bar_n,
                 double delta);

/// Z ~ Uniform[-pi, pi]; X | Z by rejection from the joint density;
/// Y = h0(X) + rho_c * sum_i c_i (v_i(X) - sigma_i u_i(Z)) + eps.
/// The confounder direction c is derived from the operator seed, so all
/// datasets from one operator share it.
Dataset sample_dataset(const GroundTruthOperator& op, Index n,
                       double split_fraction, std::uint64_t seed);

/// CSV with header z,x,y at 17 significant digits plus a JSON sidecar
/// (same path + ".meta.json") recording the generating spec and seed.
void save_dataset_csv(const std::filesystem::path& path, const Dataset& ds,
                      const GroundTruthOperator& op);
Dataset load_dataset_csv(const std::filesystem::path& path);

}  // namespace augspec
