#include "augspec/twosls.hpp"

#include "toy_space.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace augspec;
using namespace augspec::testing;

namespace {

SyntheticOperatorSpec clean_spec(std::uint64_t seed, double c_alpha = 0.2) {
  SyntheticOperatorSpec spec;
  spec.d = 5;
  spec.sigma1 = 0.2;
  spec.c_sigma = 0.5;
  spec.c_alpha = c_alpha;
  spec.noise_std = 0.0;
  spec.confound_strength = 0.0;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("2sls reduces to ols when instruments equal treatments") {
  Rng rng(61);
  const Index n = 200, d = 4;
  const Matrix phi = rng.gaussian_matrix(n, d);
  Vector beta_star(d);
  beta_star << 1.0, -2.0, 0.5, 3.0;
  const Vector y = phi * beta_star;
  const StructuralEstimate est = fit_2sls(phi, phi, y, 0.0);
  CHECK((est.beta - beta_star).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("2sls simplification under invertible cross-covariance") {
  Rng rng(62);
  const Index n = 300, d = 3;
  const Matrix phi = rng.gaussian_matrix(n, d);
  const Matrix mix = Matrix::Identity(d, d) + 0.3 * rng.gaussian_matrix(d, d);
  const Matrix psi = phi * mix + 0.1 * rng.gaussian_matrix(n, d);
  const Vector y = rng.gaussian_vector(n);

  const StructuralEstimate est = fit_2sls(phi, psi, y, 0.0);
  const double nn = static_cast<double>(n);
  const Matrix cross = psi.transpose() * phi / nn;
  const Vector ey = psi.transpose() * y / nn;
  const Vector simplified = ridge_solve(cross, ey, 0.0);
  CHECK((est.beta - simplified).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("oracle features recover the structural coefficients") {
  const GroundTruthOperator op = build_operator(clean_spec(63));
  const Dataset ds = sample_dataset(op, 20000, 0.5, 64);
  const Matrix phi = eval_v(op, ds.x);
  const Matrix psi = eval_u(op, ds.z);
  const StructuralEstimate est = fit_2sls(phi, psi, ds.y, 1e-8);
  CHECK((est.beta - op.alpha).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("predict closed forms") {
  StructuralEstimate zero;
  zero.beta = Vector::Zero(3);
  Rng rng(65);
  const Matrix feats = rng.gaussian_matrix(7, 3);
  CHECK(predict_features(zero, feats).cwiseAbs().maxCoeff() == 0.0);

  StructuralEstimate scale;
  scale.beta = Vector::Constant(1, 2.0);
  scale.featurize = [](const Vector& xs) {
    return Matrix(Eigen::Map<const Matrix>(xs.data(), xs.size(), 1));
  };
  Vector xs(3);
  xs << -1.0, 0.5, 2.0;
  const Vector pred = predict(scale, xs);
  CHECK((pred - 2.0 * xs).cwiseAbs().maxCoeff() < 1e-12);

  StructuralEstimate manual;
  manual.beta = rng.gaussian_vector(3);
  const Vector by_hand = feats * manual.beta;
  CHECK((predict_features(manual, feats) - by_hand).cwiseAbs().maxCoeff() <
        1e-12);

  StructuralEstimate no_map;
  no_map.beta = Vector::Ones(2);
  CHECK_THROWS_AS(predict(no_map, xs), LinalgError);
}

TEST_CASE("mse_l2 oracle and null estimates") {
  const GroundTruthOperator op = build_operator(clean_spec(66));
  StructuralEstimate oracle;
  oracle.beta = op.alpha;
  oracle.featurize = [op](const Vector& xs) { return eval_v(op, xs); };
  CHECK(mse_l2(oracle, op, 100000, 1) <= 1e-6);

  StructuralEstimate null;
  null.beta = Vector::Zero(op.spec.d - 1);
  null.featurize = oracle.featurize;
  CHECK(mse_l2(null, op, 100000, 1) == doctest::Approx(1.0).epsilon(0.02));

  // independent eval seeds agree within monte-carlo error
  const double a = mse_l2(null, op, 100000, 2);
  const double b = mse_l2(null, op, 100000, 3);
  CHECK(std::abs(a - b) < 3.0 * 0.01);  // std err of a mean of squares ~ 1/sqrt(n)
}

TEST_CASE("illposedness closed forms and oracle value") {
  Rng rng(67);
  const Index n = 50000;
  const Matrix phi = rng.gaussian_matrix(n, 3);
  CHECK(illposedness(phi, phi, 1e-10) == doctest::Approx(1.0).epsilon(1e-6));

  const GroundTruthOperator op = build_operator(clean_spec(68));
  Vector zs(n), xs(n);
  {
    const Dataset ds = sample_dataset(op, n, 0.5, 69);
    zs = ds.z;
    xs = ds.x;
  }
  const Matrix v3 = eval_v(op, xs).leftCols(3);
  const Matrix u3 = eval_u(op, zs).leftCols(3);
  CHECK(illposedness(v3, u3, 1e-8) ==
        doctest::Approx(op.sigmas(2)).epsilon(0.03));

  // unrelated features have vanishing ill-posedness measure
  const Matrix phi_ind = rng.gaussian_matrix(n, 3);
  const Matrix psi_ind = rng.gaussian_matrix(n, 3);
  CHECK(illposedness(phi_ind, psi_ind, 1e-8) <= 0.1);
}

TEST_CASE("boundedness_rho closed forms") {
  // one-hot features with equal class frequencies 1/k whiten to sqrt(k)
  const Index k = 4, n = 400;
  Matrix onehot = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) onehot(i, i % k) = 1.0;
  CHECK(boundedness_rho(onehot, 0.0) == doctest::Approx(std::sqrt(4.0)).epsilon(1e-10));

  CHECK(boundedness_rho(Matrix::Ones(100, 1), 0.0) == doctest::Approx(1.0));

  // whitened bounded sine features are stable across seeds
  double first = 0.0;
  for (std::uint64_t seed : {501ULL, 502ULL}) {
    Rng rng(seed);
    Vector ts(20000);
    for (Index i = 0; i < ts.size(); ++i) {
      ts(i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
    }
    const double rho = boundedness_rho(sine_basis(ts, 3), 1e-8);
    if (first == 0.0) {
      first = rho;
    } else {
      CHECK(rho == doctest::Approx(first).epsilon(0.1));
    }
  }
}

TEST_CASE("stage2 loss explicit-operator oracle") {
  Rng rng(70);
  const Index n = 50, d = 3;
  const Matrix phi = rng.gaussian_matrix(n, d);
  const Matrix psi = rng.gaussian_matrix(n, d);
  const Vector y = rng.gaussian_vector(n);
  const Vector beta = rng.gaussian_vector(d);

  // literal form: T_hat h(z_i) = sum_j psi_j(z_i) (1/n) sum_r phi_j(x_r) h(x_r)
  Vector applied = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) {
      double moment = 0.0;
      for (Index r = 0; r < n; ++r) {
        moment += phi(r, j) * phi.row(r).dot(beta);
      }
      applied(i) += psi(i, j) * moment / static_cast<double>(n);
    }
  }
  const double expected =
      (applied - y).squaredNorm() / static_cast<double>(n);
  CHECK(stage2_loss_features(phi, psi, y, beta) ==
        doctest::Approx(expected).epsilon(1e-10));

  CHECK(stage2_loss_features(phi, psi, Vector::Zero(n), Vector::Zero(d)) ==
        doctest::Approx(0.0));
}

TEST_CASE("stage2 loss equals residual variance under oracle features") {
  SyntheticOperatorSpec spec = clean_spec(71);
  spec.noise_std = 0.3;
  spec.confound_strength = 0.4;
  const GroundTruthOperator op = build_operator(spec);
  const Dataset ds = sample_dataset(op, 20000, 0.5, 72);

  // oracle feature tables standing in for the learned networks
  const Matrix phi = eval_v(op, ds.x);
  const Matrix psi_raw = eval_u(op, ds.z);
  // scale psi by sigma so psi' C_phi alpha approximates T h0 = r0
  const Matrix psi = psi_raw * op.sigmas.asDiagonal();

  const double loss = stage2_loss_features(phi, psi, ds.y, op.alpha);
  const Vector r0 = apply_T(op, op.alpha, ds.z);
  const double var_u = (ds.y - r0).squaredNorm() / static_cast<double>(ds.y.size());
  CHECK(loss == doctest::Approx(var_u).epsilon(0.05));
}

TEST_CASE("confounding: 2sls beats the naive regression") {
  for (std::uint64_t seed : {81ULL, 82ULL}) {
    SyntheticOperatorSpec spec = clean_spec(seed, 1.0);
    spec.noise_std = 0.1;
    spec.confound_strength = 0.5;
    const GroundTruthOperator op = build_operator(spec);
    const Dataset ds = sample_dataset(op, 20000, 0.5, seed + 100);
    const Matrix phi = eval_v(op, ds.x);
    const Matrix psi = eval_u(op, ds.z);

    StructuralEstimate iv = fit_2sls(phi, psi, ds.y, 1e-8);
    iv.featurize = [op](const Vector& xs) { return eval_v(op, xs); };
    StructuralEstimate naive = fit_2sls(phi, phi, ds.y, 1e-8);
    naive.featurize = iv.featurize;

    const double mse_iv = mse_l2(iv, op, 100000, seed);
    const double mse_naive = mse_l2(naive, op, 100000, seed);
    CHECK(mse_iv <= 0.8 * mse_naive);
  }
}

TEST_CASE("ridge continuity on a well-conditioned problem") {
  const GroundTruthOperator op = build_operator(clean_spec(83));
  const Dataset ds = sample_dataset(op, 20000, 0.5, 84);
  const Matrix phi = eval_v(op, ds.x);
  const Matrix psi = eval_u(op, ds.z);
  double reference = -1.0;
  for (double ridge : {1e-10, 1e-9, 1e-8}) {
    StructuralEstimate est = fit_2sls(phi, psi, ds.y, ridge);
    est.featurize = [op](const Vector& xs) { return eval_v(op, xs); };
    const double mse = mse_l2(est, op, 50000, 85);
    if (reference < 0.0) {
      reference = mse;
    } else {
      CHECK(mse == doctest::Approx(reference).epsilon(0.01));
    }
  }
}

TEST_CASE("fit_2sls input validation") {
  Rng rng(86);
  const Matrix phi = rng.gaussian_matrix(3, 4);
  CHECK_THROWS_AS(fit_2sls(phi, phi, Vector::Zero(3), 0.0), LinalgError);
}
