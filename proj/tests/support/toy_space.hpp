#pragma once

// Discrete (Z, X) probability space with exact moments. Functions on the
// space are value tables; the conditional expectation operator and its
// augmented variant are explicit matrices in whitened orthonormal bases, so
// Hilbert-Schmidt identities can be checked to machine precision. Test-only:
// the library under test never sees these internals.

#include "augspec/linalg.hpp"
#include "augspec/rng.hpp"

#include <stdexcept>

namespace augspec::testing {

struct ToySpace {
  Matrix joint;  // p(z, x), n_z x n_x, entries > 0, sums to 1

  Index n_z() const { return joint.rows(); }
  Index n_x() const { return joint.cols(); }

  Vector mu_z() const { return joint.rowwise().sum(); }
  Vector mu_x() const { return joint.colwise().sum().transpose(); }

  // Whitened operator matrix K(z, x) = p(z, x) / sqrt(mu_z(z) mu_x(x)); in
  // the orthonormal bases e_z = 1{Z=z}/sqrt(mu_z), e_x = 1{X=x}/sqrt(mu_x)
  // this is exactly the matrix of h -> E[h(X) | Z].
  Matrix whitened_operator() const {
    const Vector mz = mu_z();
    const Vector mx = mu_x();
    Matrix k(n_z(), n_x());
    for (Index z = 0; z < n_z(); ++z) {
      for (Index x = 0; x < n_x(); ++x) {
        k(z, x) = joint(z, x) / std::sqrt(mz(z) * mx(x));
      }
    }
    return k;
  }

  // r0(z) = E[Y | Z = z] for an outcome given as a value table on X.
  Vector r0(const Vector& y_of_x) const {
    const Vector mz = mu_z();
    Vector r(n_z());
    for (Index z = 0; z < n_z(); ++z) {
      double acc = 0.0;
      for (Index x = 0; x < n_x(); ++x) acc += joint(z, x) * y_of_x(x);
      r(z) = acc / mz(z);
    }
    return r;
  }

  // Coefficients of a Z-function in the orthonormal basis: sqrt(mu_z) .* f.
  Vector z_coeffs(const Vector& f) const {
    return mu_z().cwiseSqrt().cwiseProduct(f);
  }
  Vector x_coeffs(const Vector& f) const {
    return mu_x().cwiseSqrt().cwiseProduct(f);
  }

  // Whitened matrix of the augmented operator [T | delta r0] acting on
  // L2(X) x R: n_z x (n_x + 1).
  Matrix augmented_operator(const Vector& y_of_x, double delta) const {
    Matrix aug(n_z(), n_x() + 1);
    aug.leftCols(n_x()) = whitened_operator();
    aug.col(n_x()) = delta * z_coeffs(r0(y_of_x));
    return aug;
  }

  // Feature tables: column i of phi_table is the value table of phi_i.
  // Returns the whitened coefficient matrix W with W(:, i) the orthonormal
  // basis coefficients of phi_i.
  Matrix x_feature_coeffs(const Matrix& phi_table) const {
    return mu_x().cwiseSqrt().asDiagonal() * phi_table;
  }
  Matrix z_feature_coeffs(const Matrix& psi_table) const {
    return mu_z().cwiseSqrt().asDiagonal() * psi_table;
  }

  // Whitened matrix of the learned operator Psi [Phi* | omega_1 .. omega_K].
  Matrix learned_operator(const Matrix& phi_table, const Matrix& psi_table,
                          const std::vector<Vector>& omegas) const {
    const Matrix w_phi = x_feature_coeffs(phi_table);
    const Matrix w_psi = z_feature_coeffs(psi_table);
    Matrix right(n_x() + static_cast<Index>(omegas.size()), phi_table.cols());
    right.topRows(n_x()) = w_phi;
    for (std::size_t k = 0; k < omegas.size(); ++k) {
      right.row(n_x() + static_cast<Index>(k)) = omegas[k].transpose();
    }
    return w_psi * right.transpose();
  }

  // Exact population moments of feature tables.
  Matrix cov_phi(const Matrix& phi_table) const {
    const Matrix w = x_feature_coeffs(phi_table);
    return w.transpose() * w;
  }
  Matrix cov_psi(const Matrix& psi_table) const {
    const Matrix w = z_feature_coeffs(psi_table);
    return w.transpose() * w;
  }
  // E[psi(Z) phi(X)^T]
  Matrix cross_psi_phi(const Matrix& phi_table, const Matrix& psi_table) const {
    return psi_table.transpose() * joint * phi_table;
  }
  // E[y(X) psi(Z)]
  Vector ey_psi(const Vector& y_of_x, const Matrix& psi_table) const {
    return psi_table.transpose() * joint * y_of_x;
  }
  // E_X E_Z [(phi' psi)^2] under the product of marginals.
  double product_second_moment(const Matrix& phi_table,
                               const Matrix& psi_table) const {
    return (cov_phi(phi_table) * cov_psi(psi_table)).trace();
  }
  // E[phi(X)' psi(Z)] under the joint law.
  double joint_first_moment(const Matrix& phi_table,
                            const Matrix& psi_table) const {
    return cross_psi_phi(phi_table, psi_table).trace();
  }

  // Population loss L_delta(theta, omega) assembled from exact moments;
  // supports rank-K augmentation with targets y^k.
  double population_loss(const Matrix& phi_table, const Matrix& psi_table,
                         const Vector& y_of_x, const std::vector<Vector>& omegas,
                         const Vector& deltas) const {
    double total = product_second_moment(phi_table, psi_table) -
                   2.0 * joint_first_moment(phi_table, psi_table);
    const Matrix c_psi = cov_psi(psi_table);
    Vector y_pow = Vector::Ones(y_of_x.size());
    for (Index k = 0; k < deltas.size(); ++k) {
      y_pow = y_pow.cwiseProduct(y_of_x);
      const Vector& omega = omegas[static_cast<std::size_t>(k)];
      total += omega.dot(c_psi * omega) -
               2.0 * deltas(k) * ey_psi(y_pow, psi_table).dot(omega);
    }
    return total;
  }
};

/// Random strictly positive joint pmf.
inline ToySpace random_toy_space(Index n_z, Index n_x, Rng& rng) {
  ToySpace space;
  space.joint.resize(n_z, n_x);
  for (Index z = 0; z < n_z; ++z) {
    for (Index x = 0; x < n_x; ++x) {
      space.joint(z, x) = 0.2 + rng.uniform();
    }
  }
  space.joint /= space.joint.sum();
  return space;
}

inline Matrix random_table(Index rows, Index cols, Rng& rng) {
  return rng.gaussian_matrix(rows, cols);
}

}  // namespace augspec::testing
