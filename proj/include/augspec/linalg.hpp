#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace augspec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Error thrown by numerical routines when a contract is violated
/// (non-finite input, singular system, non-PSD matrix, ...).
class LinalgError : public std::runtime_error {
 public:
  explicit LinalgError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thin SVD a = u * diag(s) * vt with s sorted descending and a
/// deterministic sign convention: in every column of u the entry of
/// largest magnitude is non-negative (ties broken by lowest index).
struct SvdResult {
  Matrix u;   // rows x k, orthonormal columns
  Vector s;   // k, descending, >= 0
  Matrix vt;  // k x cols, orthonormal rows
};

/// Throws LinalgError if any entry of a is NaN or infinite.
void check_finite(const Matrix& a, const std::string& what);

/// Deterministic thin SVD. A zero matrix yields all-zero s with
/// canonical-basis u and vt.
SvdResult svd(const Matrix& a);

/// Rank-d reconstruction sum_{i<=d} s_i u_i v_i^T. d == 0 gives the zero
/// matrix; d beyond min(rows, cols) is an error.
Matrix truncate(const SvdResult& svd, Index d);

/// Spectral norm ||a||_2 (largest singular value).
double operator_norm(const Matrix& a);

/// ||P_A - P_B||_2 for the orthogonal projectors onto the column spans of
/// two bases with orthonormal columns (checked to 1e-8).
double subspace_distance(const Matrix& basis_a, const Matrix& basis_b);

/// (m + eps*I)^{-1/2} of a symmetric matrix via eigendecomposition.
/// Throws if some eigenvalue is <= -eps.
Matrix sym_inv_sqrt(const Matrix& m, double eps);

/// (m + eps*I)^{1/2}, companion of sym_inv_sqrt. Eigenvalues below -eps
/// are an error as well.
Matrix sym_sqrt(const Matrix& m, double eps);

/// Solves (m + eps*I) x = rhs column-wise with a column-pivoted QR and
/// verifies the residual against 1e-8 * ||rhs||_F.
Matrix ridge_solve(const Matrix& m, const Matrix& rhs, double eps);

/// Text round-trip: first line "rows cols", then one whitespace-separated
/// row per line, 17 significant digits.
void save_matrix_text(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix_text(const std::filesystem::path& path);

/// Formats a double with 17 significant digits (exact binary64 round-trip).
std::string format_double(double v);

}  // namespace augspec
