#include "augspec/spectral_loss.hpp"

#include "toy_space.hpp"

#include <doctest.h>

#include <cmath>

using namespace augspec;
using namespace augspec::testing;

namespace {

double brute_force_l0(const Matrix& phi, const Matrix& psi) {
  const Index b = phi.rows();
  double pairs = 0.0, diag = 0.0;
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < b; ++j) {
      const double ip = phi.row(i).dot(psi.row(j));
      if (i == j) {
        diag += ip;
      } else {
        pairs += ip * ip;
      }
    }
  }
  const double bb = static_cast<double>(b);
  return pairs / (bb * (bb - 1.0)) - 2.0 * diag / bb;
}

}  // namespace

TEST_CASE("loss_l0 brute force oracle and edge cases") {
  Rng rng(41);
  const Matrix phi = rng.gaussian_matrix(9, 3);
  const Matrix psi = rng.gaussian_matrix(9, 3);
  CHECK(loss_l0(phi, psi) == doctest::Approx(brute_force_l0(phi, psi)).epsilon(1e-12));

  CHECK(loss_l0(Matrix::Zero(5, 2), Matrix::Zero(5, 2)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(loss_l0(Matrix::Zero(1, 2), Matrix::Zero(1, 2)), TrainError);
}

TEST_CASE("u-statistic equals the average over cyclic pairings") {
  Rng rng(42);
  const Index b = 6;
  const Matrix phi = rng.gaussian_matrix(b, 2);
  const Matrix psi = rng.gaussian_matrix(b, 2);
  double shifted = 0.0;
  for (Index s = 1; s < b; ++s) {
    for (Index i = 0; i < b; ++i) {
      const double ip = phi.row(i).dot(psi.row((i + s) % b));
      shifted += ip * ip;
    }
  }
  shifted /= static_cast<double>(b * (b - 1));
  const Vector diag = (phi.array() * psi.array()).rowwise().sum();
  const double ustat = loss_l0(phi, psi) + 2.0 * diag.sum() / static_cast<double>(b);
  CHECK(ustat == doctest::Approx(shifted).epsilon(1e-12));
}

TEST_CASE("population optimum of l0 equals minus the top singular values") {
  // analytic optimum: phi_i = v_i, psi_i = sigma_i u_i for the whitened
  // operator of a discrete space
  Rng rng(43);
  const ToySpace space = random_toy_space(7, 7, rng);
  const Matrix k = space.whitened_operator();
  const SvdResult dec = svd(k);
  const Index d = 3;

  // value tables from whitened coefficients: f = coeffs / sqrt(mu)
  const Vector mz_inv = space.mu_z().cwiseSqrt().cwiseInverse();
  const Vector mx_inv = space.mu_x().cwiseSqrt().cwiseInverse();
  Matrix phi_table(7, d), psi_table(7, d);
  for (Index i = 0; i < d; ++i) {
    phi_table.col(i) = mx_inv.cwiseProduct(dec.vt.row(i).transpose());
    psi_table.col(i) = dec.s(i) * mz_inv.cwiseProduct(dec.u.col(i));
  }
  const double loss = space.population_loss(phi_table, psi_table,
                                            Vector::Zero(7), {Vector::Zero(d)},
                                            Vector::Zero(1));
  double expected = 0.0;
  for (Index i = 0; i < d; ++i) expected -= dec.s(i) * dec.s(i);
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("extended loss reductions and omega optimum") {
  Rng rng(44);
  const Index b = 32, d = 4;
  const Matrix phi = rng.gaussian_matrix(b, d);
  const Matrix psi = rng.gaussian_matrix(b, d);
  const Vector y = rng.gaussian_vector(b);

  CHECK(loss_ldelta_extended(phi, psi, y, Vector::Zero(d), 0.0) ==
        doctest::Approx(loss_l0(phi, psi)).epsilon(1e-12));

  const double delta = 0.7;
  const Matrix cov = psi.transpose() * psi / static_cast<double>(b);
  const Vector ey = psi.transpose() * y / static_cast<double>(b);
  const Vector omega_star = delta * ridge_solve(cov, ey, 0.0);

  // any perturbation increases the loss by exactly v' C v
  for (int rep = 0; rep < 5; ++rep) {
    const Vector v = rng.gaussian_vector(d);
    const double at_star = loss_ldelta_extended(phi, psi, y, omega_star, delta);
    const double perturbed =
        loss_ldelta_extended(phi, psi, y, omega_star + v, delta);
    CHECK(perturbed - at_star == doctest::Approx(v.dot(cov * v)).epsilon(1e-10));
  }

  // profile equals extended at the optimum (eps = 0)
  const ProfileLoss prof = loss_ldelta_profile(phi, psi, y, delta, 0.0);
  CHECK(prof.total ==
        doctest::Approx(loss_ldelta_extended(phi, psi, y, omega_star, delta))
            .epsilon(1e-10));

  CHECK(loss_ldelta_profile(phi, psi, y, 0.0, 0.0).r_delta == doctest::Approx(0.0));
  CHECK(loss_ldelta_profile(phi, psi, Vector::Zero(b), delta, 0.0).r_delta ==
        doctest::Approx(0.0));
}

TEST_CASE("higher rank loss reductions") {
  Rng rng(45);
  const Index b = 16, d = 3;
  const Matrix phi = rng.gaussian_matrix(b, d);
  const Matrix psi = rng.gaussian_matrix(b, d);
  const Vector y = rng.gaussian_vector(b);
  const Vector omega = rng.gaussian_vector(d);

  CHECK(loss_higher_rank(phi, psi, y, {omega}, Vector::Constant(1, 0.4)) ==
        doctest::Approx(loss_ldelta_extended(phi, psi, y, omega, 0.4))
            .epsilon(1e-12));
  CHECK(loss_higher_rank(phi, psi, y, {Vector::Zero(d), Vector::Zero(d)},
                         Vector::Zero(2)) ==
        doctest::Approx(loss_l0(phi, psi)).epsilon(1e-12));
}

TEST_CASE("rank-2 augmented operator identity on a discrete space") {
  Rng rng(46);
  const ToySpace space = random_toy_space(6, 6, rng);
  const Vector y = rng.gaussian_vector(6);  // outcome value table on X
  Vector deltas(2);
  deltas << 0.6, 0.3;

  // explicit rank-2 augmented operator [K | d1 r1 | d2 r2], r_k = E[Y^k | Z]
  Matrix aug(6, 8);
  aug.leftCols(6) = space.whitened_operator();
  aug.col(6) = deltas(0) * space.z_coeffs(space.r0(y));
  aug.col(7) = deltas(1) * space.z_coeffs(space.r0(y.cwiseProduct(y)));

  for (int rep = 0; rep < 20; ++rep) {
    const Index d = 1 + static_cast<Index>(rng.integer(3));
    const Matrix phi_table = random_table(6, d, rng);
    const Matrix psi_table = random_table(6, d, rng);
    const std::vector<Vector> omegas = {rng.gaussian_vector(d),
                                        rng.gaussian_vector(d)};
    const double loss =
        space.population_loss(phi_table, psi_table, y, omegas, deltas);
    const Matrix learned = space.learned_operator(phi_table, psi_table, omegas);
    const double expected = (aug - learned).squaredNorm() - aug.squaredNorm();
    CHECK(loss == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("orthonormal penalty closed forms") {
  Rng rng(47);
  const Index b = 500, d = 3;
  // exactly whitened features: Q from a QR of a tall gaussian, scaled
  const Matrix g = rng.gaussian_matrix(b, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ() * Matrix::Identity(b, d);
  const Matrix white = std::sqrt(static_cast<double>(b)) * q;
  CHECK(orthonormal_penalty(white) == doctest::Approx(0.0).epsilon(1e-18));

  CHECK(orthonormal_penalty(Matrix::Zero(b, d)) == doctest::Approx(3.0));

  const double c = 1.7;
  const double expected = 3.0 * (c * c - 1.0) * (c * c - 1.0);
  CHECK(orthonormal_penalty(c * white) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("proposition-1 identity for arbitrary linear parameterizations") {
  Rng rng(48);
  const ToySpace space = random_toy_space(8, 8, rng);
  const Vector y = rng.gaussian_vector(8);

  for (double delta : {0.0, 0.5, 2.0}) {
    const Matrix aug = space.augmented_operator(y, delta);
    for (int rep = 0; rep < 30; ++rep) {
      const Index d = 1 + static_cast<Index>(rng.integer(4));
      const Matrix phi_table = random_table(8, d, rng);
      const Matrix psi_table = random_table(8, d, rng);
      const Vector omega = rng.gaussian_vector(d);
      const double loss = space.population_loss(
          phi_table, psi_table, y, {omega}, Vector::Constant(1, delta));
      const Matrix learned =
          space.learned_operator(phi_table, psi_table, {omega});
      const double expected = (aug - learned).squaredNorm() - aug.squaredNorm();
      CHECK(std::abs(loss - expected) < 1e-10);
    }
  }
}

TEST_CASE("monotone augmentation of the target direction") {
  // at the exact population optimum, the projection of r0 onto the learned
  // psi-span is non-decreasing in delta
  Rng rng(49);
  const ToySpace space = random_toy_space(8, 8, rng);
  Vector y = rng.gaussian_vector(8);
  const Index d = 2;
  const Vector r0_coeffs = space.z_coeffs(space.r0(y));

  double previous = -1.0;
  for (double delta : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    const Matrix aug = space.augmented_operator(y, delta);
    const SvdResult dec = svd(aug);
    const Matrix basis = dec.u.leftCols(d);
    const double projected = (basis.transpose() * r0_coeffs).squaredNorm();
    CHECK(projected >= previous - 1e-8);
    previous = projected;
  }
}

TEST_CASE("analytic gradients match finite differences through the full loss") {
  Rng rng(50);
  const Index b = 8, d = 3;
  const Vector y = rng.gaussian_vector(b);
  Vector deltas(1);
  deltas << 0.8;
  const double ortho_w = 0.5;

  MlpParams phi_net = init_mlp(
      {{1, 5, Activation::kSnake}, {5, d, Activation::kGelu}}, 51);
  MlpParams psi_net = init_mlp(
      {{1, 5, Activation::kSnake}, {5, d, Activation::kLinear}}, 52);
  const Matrix xb = rng.gaussian_matrix(b, 1);
  const Matrix zb = rng.gaussian_matrix(b, 1);
  Vector omega = rng.gaussian_vector(d);

  auto loss_value = [&](const MlpParams& pn, const MlpParams& qn,
                        const Vector& om) {
    const Matrix phi = mlp_forward(pn, xb);
    const Matrix psi = mlp_forward(qn, zb);
    return loss_ldelta_extended(phi, psi, y, om, deltas(0)) +
           ortho_w * (orthonormal_penalty(phi) + orthonormal_penalty(psi));
  };

  MlpCache phi_cache, psi_cache;
  const Matrix phi = mlp_forward_cached(phi_net, xb, phi_cache);
  const Matrix psi = mlp_forward_cached(psi_net, zb, psi_cache);
  const LossGrads lg = loss_extended_grads(phi, psi, y, {omega}, deltas, ortho_w);
  CHECK(lg.value == doctest::Approx(loss_value(phi_net, psi_net, omega))
                        .epsilon(1e-12));
  const MlpParams phi_grads = mlp_backward(phi_net, phi_cache, lg.d_phi);
  const MlpParams psi_grads = mlp_backward(psi_net, psi_cache, lg.d_psi);

  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double bb) {
    return std::abs(a - bb) / std::max({std::abs(a), std::abs(bb), 1e-6});
  };

  auto check_net = [&](MlpParams& net, const MlpParams& analytic, bool is_phi) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto sweep = [&](double* p, const double* g, Index n) {
        for (Index i = 0; i < n; ++i) {
          const double keep = p[i];
          p[i] = keep + h;
          const double up = is_phi ? loss_value(net, psi_net, omega)
                                   : loss_value(phi_net, net, omega);
          p[i] = keep - h;
          const double down = is_phi ? loss_value(net, psi_net, omega)
                                     : loss_value(phi_net, net, omega);
          p[i] = keep;
          worst = std::max(worst, rel(g[i], (up - down) / (2.0 * h)));
        }
      };
      sweep(net.layers[l].weight.data(), analytic.layers[l].weight.data(),
            net.layers[l].weight.size());
      sweep(net.layers[l].bias.data(), analytic.layers[l].bias.data(),
            net.layers[l].bias.size());
    }
  };
  check_net(phi_net, phi_grads, true);
  check_net(psi_net, psi_grads, false);
  for (Index i = 0; i < d; ++i) {
    const double keep = omega(i);
    omega(i) = keep + h;
    const double up = loss_value(phi_net, psi_net, omega);
    omega(i) = keep - h;
    const double down = loss_value(phi_net, psi_net, omega);
    omega(i) = keep;
    worst = std::max(worst, rel(lg.d_omegas[0](i), (up - down) / (2.0 * h)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("moment loss gradients match finite differences") {
  Rng rng(53);
  const ToySpace space = random_toy_space(6, 5, rng);
  const Vector y = rng.gaussian_vector(5);

  MomentProblem prob;
  prob.cov_bx = Matrix::Identity(5, 5);
  prob.cov_bz = Matrix::Identity(6, 6);
  prob.cross_zx = space.whitened_operator();
  prob.y_moments = space.z_coeffs(space.r0(y)).transpose();
  // exercise a non-identity dictionary covariance too
  const Matrix g = rng.gaussian_matrix(5, 5);
  prob.cov_bx += 0.1 * g * g.transpose();

  Vector deltas(1);
  deltas << 0.9;
  LinearFeatures feats;
  feats.a_phi = rng.gaussian_matrix(3, 5);
  feats.a_psi = rng.gaussian_matrix(3, 6);
  feats.omegas = {rng.gaussian_vector(3)};

  const LossGrads lg = moment_loss_grads(prob, feats, deltas);
  CHECK(lg.value == doctest::Approx(moment_loss(prob, feats, deltas)).epsilon(1e-12));

  const double h = 1e-6;
  auto rel = [](double a, double bb) {
    return std::abs(a - bb) / std::max({std::abs(a), std::abs(bb), 1e-6});
  };
  double worst = 0.0;
  auto sweep = [&](double* p, const double* g2, Index n) {
    for (Index i = 0; i < n; ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = moment_loss(prob, feats, deltas);
      p[i] = keep - h;
      const double down = moment_loss(prob, feats, deltas);
      p[i] = keep;
      worst = std::max(worst, rel(g2[i], (up - down) / (2.0 * h)));
    }
  };
  sweep(feats.a_phi.data(), lg.d_phi.data(), feats.a_phi.size());
  sweep(feats.a_psi.data(), lg.d_psi.data(), feats.a_psi.size());
  sweep(feats.omegas[0].data(), lg.d_omegas[0].data(), 3);
  CHECK(worst <= 1e-4);
}

TEST_CASE("linear moment training reaches the truncated-svd optimum") {
  Rng rng(54);
  const ToySpace space = random_toy_space(6, 6, rng);
  const Vector y = rng.gaussian_vector(6);
  const double delta = 0.8;

  MomentProblem prob;
  prob.cov_bx = Matrix::Identity(6, 6);
  prob.cov_bz = Matrix::Identity(6, 6);
  prob.cross_zx = space.whitened_operator();
  prob.y_moments = space.z_coeffs(space.r0(y)).transpose();

  const Matrix aug = space.augmented_operator(y, delta);
  const SvdResult dec = svd(aug);

  for (Index d : {Index{1}, Index{2}}) {
    MomentTrainConfig cfg;
    cfg.steps = 12000;
    cfg.adam.lr = 5e-3;
    cfg.seed = 55;
    const LinearFeatures feats =
        train_linear_moments(prob, d, Vector::Constant(1, delta), cfg);
    const double achieved = moment_loss(prob, feats, Vector::Constant(1, delta));
    double optimum = 0.0;
    for (Index i = 0; i < d; ++i) optimum -= dec.s(i) * dec.s(i);
    CHECK(achieved == doctest::Approx(optimum).epsilon(1e-3));
    CHECK(achieved >= optimum - 1e-9);  // lower bound is never crossed
  }
}

TEST_CASE("train_features zero steps and determinism") {
  Rng rng(56);
  DataSplit dm;
  const Index m = 64;
  dm.z = rng.gaussian_vector(m);
  dm.x = rng.gaussian_vector(m);
  dm.y = rng.gaussian_vector(m);

  TrainConfig cfg;
  cfg.d = 3;
  cfg.delta = 0.5;
  cfg.batch_size = 16;
  cfg.steps = 0;
  cfg.hidden = {8};
  cfg.seed = 77;
  auto [op0, trace0] = train_features(dm, cfg);
  CHECK(trace0.records.size() == 1);
  CHECK(trace0.records[0].step == 0);
  CHECK(op0.omega.cwiseAbs().maxCoeff() == 0.0);

  cfg.steps = 40;
  auto [op_a, trace_a] = train_features(dm, cfg);
  auto [op_b, trace_b] = train_features(dm, cfg);
  REQUIRE(trace_a.records.size() == trace_b.records.size());
  for (std::size_t i = 0; i < trace_a.records.size(); ++i) {
    CHECK(trace_a.records[i].l0 == trace_b.records[i].l0);
  }
  for (std::size_t l = 0; l < op_a.phi_params.layers.size(); ++l) {
    CHECK((op_a.phi_params.layers[l].weight - op_b.phi_params.layers[l].weight)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  CHECK((op_a.omega - op_b.omega).cwiseAbs().maxCoeff() == 0.0);

  // delta = 0 keeps omega pinned at zero through training
  cfg.delta = 0.0;
  auto [op_zero, trace_zero] = train_features(dm, cfg);
  CHECK(op_zero.omega.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(
      train_features(dm, [] {
        TrainConfig bad;
        bad.batch_size = 2;
        return bad;
      }()),
      TrainError);
}
