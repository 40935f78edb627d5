#include "augspec/linalg.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace augspec {

void check_finite(const Matrix& a, const std::string& what) {
  if (!a.allFinite()) {
    throw LinalgError(what + ": non-finite entry");
  }
}

namespace {

// Largest-|entry| sign convention, ties to the lowest index. Applied to u
// columns, compensated on vt rows so the product is unchanged.
void canonicalize_signs(Matrix& u, Matrix& vt) {
  for (Index j = 0; j < u.cols(); ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < u.rows(); ++i) {
      const double mag = std::abs(u(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (u(arg, j) < 0.0) {
      u.col(j) = -u.col(j);
      if (j < vt.rows()) vt.row(j) = -vt.row(j);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& a) {
  check_finite(a, "svd");
  const Index k = std::min(a.rows(), a.cols());
  if (a.isZero(0.0)) {
    SvdResult r;
    r.u = Matrix::Identity(a.rows(), k);
    r.s = Vector::Zero(k);
    r.vt = Matrix::Identity(k, a.cols());
    return r;
  }
  Eigen::JacobiSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) {
    throw LinalgError("svd: factorization did not converge (status " +
                      std::to_string(static_cast<int>(dec.info())) + ")");
  }
  SvdResult r;
  r.u = dec.matrixU();
  r.s = dec.singularValues();
  r.vt = dec.matrixV().transpose();
  canonicalize_signs(r.u, r.vt);
  return r;
}

Matrix truncate(const SvdResult& svd, Index d) {
  const Index k = svd.s.size();
  if (d < 0 || d > k) {
    throw LinalgError("truncate: rank " + std::to_string(d) +
                      " exceeds available " + std::to_string(k));
  }
  if (d == 0) return Matrix::Zero(svd.u.rows(), svd.vt.cols());
  return svd.u.leftCols(d) * svd.s.head(d).asDiagonal() * svd.vt.topRows(d);
}

double operator_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return svd(a).s(0);
}

double subspace_distance(const Matrix& basis_a, const Matrix& basis_b) {
  if (basis_a.rows() != basis_b.rows()) {
    throw LinalgError("subspace_distance: ambient dimensions differ");
  }
  for (const auto* basis : {&basis_a, &basis_b}) {
    const Matrix gram = basis->transpose() * (*basis);
    const double dev =
        (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    if (dev > 1e-8) {
      std::ostringstream msg;
      msg << "subspace_distance: basis not orthonormal, max Gram deviation "
          << dev;
      throw LinalgError(msg.str());
    }
  }
  const Matrix diff =
      basis_a * basis_a.transpose() - basis_b * basis_b.transpose();
  return operator_norm(diff);
}

namespace {

Eigen::SelfAdjointEigenSolver<Matrix> symmetric_eigen(const Matrix& m,
                                                      const char* who) {
  if (m.rows() != m.cols()) {
    throw LinalgError(std::string(who) + ": matrix not square");
  }
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    std::ostringstream msg;
    msg << who << ": matrix not symmetric, max asymmetry " << asym;
    throw LinalgError(msg.str());
  }
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw LinalgError(std::string(who) + ": eigendecomposition failed");
  }
  return eig;
}

Matrix sym_power(const Matrix& m, double eps, double expo, const char* who) {
  auto eig = symmetric_eigen(m, who);
  Vector shifted = eig.eigenvalues().array() + eps;
  for (Index i = 0; i < shifted.size(); ++i) {
    if (shifted(i) <= 0.0) {
      std::ostringstream msg;
      msg << who << ": eigenvalue " << eig.eigenvalues()(i)
          << " <= -eps, input not PSD up to regularization";
      throw LinalgError(msg.str());
    }
  }
  const Vector powered = shifted.array().pow(expo);
  return eig.eigenvectors() * powered.asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

Matrix sym_inv_sqrt(const Matrix& m, double eps) {
  return sym_power(m, eps, -0.5, "sym_inv_sqrt");
}

Matrix sym_sqrt(const Matrix& m, double eps) {
  return sym_power(m, eps, 0.5, "sym_sqrt");
}

Matrix ridge_solve(const Matrix& m, const Matrix& rhs, double eps) {
  if (m.rows() != m.cols()) {
    throw LinalgError("ridge_solve: matrix not square");
  }
  if (m.rows() != rhs.rows()) {
    throw LinalgError("ridge_solve: rhs row count mismatch");
  }
  const Matrix a = m + eps * Matrix::Identity(m.rows(), m.cols());
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  const Matrix x = qr.solve(rhs);
  const double rhs_norm = rhs.norm();
  const double resid = (a * x - rhs).norm();
  if (!x.allFinite() || resid > 1e-8 * std::max(rhs_norm, 1.0)) {
    std::ostringstream msg;
    msg << "ridge_solve: system singular to working precision (residual "
        << resid << ", eps " << eps << ")";
    throw LinalgError(msg.str());
  }
  return x;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_matrix_text(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw LinalgError("save_matrix_text: cannot open " + path.string());
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw LinalgError("save_matrix_text: write failed for " + path.string());
}

Matrix load_matrix_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LinalgError("load_matrix_text: cannot open " + path.string());
  Index rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) {
    throw LinalgError("load_matrix_text: bad header in " + path.string());
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) {
        throw LinalgError("load_matrix_text: truncated data in " + path.string());
      }
    }
  }
  return m;
}

}  // namespace augspec
