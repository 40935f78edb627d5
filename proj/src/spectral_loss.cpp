#include "augspec/spectral_loss.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace augspec {

namespace {

void check_batch(const Matrix& phi_feats, const Matrix& psi_feats) {
  if (phi_feats.rows() != psi_feats.rows()) {
    throw TrainError("spectral loss: phi/psi batch sizes differ");
  }
  if (phi_feats.cols() != psi_feats.cols()) {
    throw TrainError("spectral loss: phi/psi feature widths differ");
  }
  if (phi_feats.rows() < 2) {
    throw TrainError("spectral loss: batch must have at least 2 rows");
  }
}

Vector pairwise_diag(const Matrix& phi_feats, const Matrix& psi_feats) {
  return (phi_feats.array() * psi_feats.array()).rowwise().sum();
}

}  // namespace

double loss_l0(const Matrix& phi_feats, const Matrix& psi_feats) {
  check_batch(phi_feats, psi_feats);
  const double b = static_cast<double>(phi_feats.rows());
  const Matrix g_phi = phi_feats.transpose() * phi_feats;
  const Matrix g_psi = psi_feats.transpose() * psi_feats;
  const Vector diag = pairwise_diag(phi_feats, psi_feats);
  const double cross_total = (g_phi * g_psi).trace();
  return (cross_total - diag.squaredNorm()) / (b * (b - 1.0)) -
         2.0 * diag.sum() / b;
}

double loss_ldelta_extended(const Matrix& phi_feats, const Matrix& psi_feats,
                            const Vector& y, const Vector& omega,
                            double delta) {
  check_batch(phi_feats, psi_feats);
  if (y.size() != psi_feats.rows()) {
    throw TrainError("loss_ldelta_extended: outcome length mismatch");
  }
  if (omega.size() != psi_feats.cols()) {
    throw TrainError("loss_ldelta_extended: omega width mismatch");
  }
  const double b = static_cast<double>(phi_feats.rows());
  const Vector psi_omega = psi_feats * omega;
  const double quad = psi_omega.squaredNorm() / b;
  const double lin = psi_omega.dot(y) / b;
  return loss_l0(phi_feats, psi_feats) + quad - 2.0 * delta * lin;
}

ProfileLoss loss_ldelta_profile(const Matrix& phi_feats, const Matrix& psi_feats,
                                const Vector& y, double delta, double cov_eps) {
  check_batch(phi_feats, psi_feats);
  if (y.size() != psi_feats.rows()) {
    throw TrainError("loss_ldelta_profile: outcome length mismatch");
  }
  const double b = static_cast<double>(phi_feats.rows());
  ProfileLoss out;
  if (delta != 0.0) {
    const Matrix cov_psi = psi_feats.transpose() * psi_feats / b;
    const Vector ey = psi_feats.transpose() * y / b;
    const Vector solved = ridge_solve(cov_psi, ey, cov_eps);
    out.r_delta = -delta * delta * ey.dot(solved);
  }
  out.total = loss_l0(phi_feats, psi_feats) + out.r_delta;
  return out;
}

double loss_higher_rank(const Matrix& phi_feats, const Matrix& psi_feats,
                        const Vector& y, const std::vector<Vector>& omegas,
                        const Vector& deltas) {
  check_batch(phi_feats, psi_feats);
  if (deltas.size() < 1 ||
      static_cast<Index>(omegas.size()) != deltas.size()) {
    throw TrainError("loss_higher_rank: need K >= 1 matched (omega, delta)");
  }
  const double b = static_cast<double>(phi_feats.rows());
  double total = loss_l0(phi_feats, psi_feats);
  Vector y_pow = Vector::Ones(y.size());
  for (Index k = 0; k < deltas.size(); ++k) {
    y_pow = y_pow.cwiseProduct(y);  // y^(k+1)
    const Vector psi_omega = psi_feats * omegas[static_cast<std::size_t>(k)];
    total += psi_omega.squaredNorm() / b -
             2.0 * deltas(k) * psi_omega.dot(y_pow) / b;
  }
  return total;
}

double orthonormal_penalty(const Matrix& feats) {
  if (feats.rows() < 2) {
    throw TrainError("orthonormal_penalty: batch must have at least 2 rows");
  }
  const double b = static_cast<double>(feats.rows());
  const Matrix cov = feats.transpose() * feats / b;
  return (cov - Matrix::Identity(cov.rows(), cov.cols())).squaredNorm();
}

LossGrads loss_extended_grads(const Matrix& phi_feats, const Matrix& psi_feats,
                              const Vector& y,
                              const std::vector<Vector>& omegas,
                              const Vector& deltas, double ortho_weight) {
  check_batch(phi_feats, psi_feats);
  if (static_cast<Index>(omegas.size()) != deltas.size()) {
    throw TrainError("loss_extended_grads: omega/delta count mismatch");
  }
  const Index d = phi_feats.cols();
  const double b = static_cast<double>(phi_feats.rows());
  const double pair_scale = 2.0 / (b * (b - 1.0));

  const Matrix g_phi = phi_feats.transpose() * phi_feats;
  const Matrix g_psi = psi_feats.transpose() * psi_feats;
  const Vector diag = pairwise_diag(phi_feats, psi_feats);

  LossGrads out;
  out.value = (g_phi * g_psi).trace() / (b * (b - 1.0)) -
              diag.squaredNorm() / (b * (b - 1.0)) - 2.0 * diag.sum() / b;

  out.d_phi = pair_scale * (phi_feats * g_psi - diag.asDiagonal() * psi_feats) -
              (2.0 / b) * psi_feats;
  out.d_psi = pair_scale * (psi_feats * g_phi - diag.asDiagonal() * phi_feats) -
              (2.0 / b) * phi_feats;

  out.d_omegas.resize(omegas.size());
  Vector y_pow = Vector::Ones(y.size());
  for (Index k = 0; k < deltas.size(); ++k) {
    y_pow = y_pow.cwiseProduct(y);
    const Vector& omega = omegas[static_cast<std::size_t>(k)];
    if (omega.size() != d) {
      throw TrainError("loss_extended_grads: omega width mismatch");
    }
    const Vector psi_omega = psi_feats * omega;
    out.value += psi_omega.squaredNorm() / b -
                 2.0 * deltas(k) * psi_omega.dot(y_pow) / b;
    out.d_psi += (2.0 / b) * psi_omega * omega.transpose() -
                 (2.0 * deltas(k) / b) * y_pow * omega.transpose();
    out.d_omegas[static_cast<std::size_t>(k)] =
        (2.0 / b) * (g_psi * omega) - (2.0 * deltas(k) / b) * (psi_feats.transpose() * y_pow);
  }

  if (ortho_weight != 0.0) {
    const Matrix id = Matrix::Identity(d, d);
    const Matrix c_phi = g_phi / b - id;
    const Matrix c_psi = g_psi / b - id;
    out.value += ortho_weight * (c_phi.squaredNorm() + c_psi.squaredNorm());
    out.d_phi += ortho_weight * (4.0 / b) * phi_feats * c_phi;
    out.d_psi += ortho_weight * (4.0 / b) * psi_feats * c_psi;
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix phi_features(const LearnedOperator& op, const Vector& xs) {
  return mlp_forward(op.phi_params, Eigen::Map<const Matrix>(xs.data(), xs.size(), 1));
}

Matrix psi_features(const LearnedOperator& op, const Vector& zs) {
  return mlp_forward(op.psi_params, Eigen::Map<const Matrix>(zs.data(), zs.size(), 1));
}

namespace {

std::vector<LayerSpec> feature_net_arch(const TrainConfig& cfg) {
  std::vector<LayerSpec> arch;
  Index in = 1;
  for (std::size_t h = 0; h < cfg.hidden.size(); ++h) {
    arch.push_back({in, cfg.hidden[h],
                    h == 0 ? Activation::kSnake : Activation::kGelu});
    in = cfg.hidden[h];
  }
  arch.push_back({in, cfg.d, Activation::kLinear});
  return arch;
}

TraceRecord evaluate_full_split(Index step, const Matrix& phi_full,
                                const Matrix& psi_full, const Vector& y,
                                const Vector& deltas, double cov_eps) {
  TraceRecord rec;
  rec.step = step;
  rec.l0 = loss_l0(phi_full, psi_full);
  const double b = static_cast<double>(psi_full.rows());
  double r_delta = 0.0;
  Vector y_pow = Vector::Ones(y.size());
  for (Index k = 0; k < deltas.size(); ++k) {
    y_pow = y_pow.cwiseProduct(y);
    if (deltas(k) == 0.0) continue;
    const Matrix cov_psi = psi_full.transpose() * psi_full / b;
    const Vector ey = psi_full.transpose() * y_pow / b;
    const Vector solved = ridge_solve(cov_psi, ey, cov_eps);
    r_delta += -deltas(k) * deltas(k) * ey.dot(solved);
  }
  rec.r_delta = r_delta;
  rec.ortho_pen = orthonormal_penalty(phi_full) + orthonormal_penalty(psi_full);
  return rec;
}

std::string trace_tail(const TrainTrace& trace) {
  std::ostringstream out;
  const std::size_t n = trace.records.size();
  for (std::size_t i = n > 5 ? n - 5 : 0; i < n; ++i) {
    const auto& r = trace.records[i];
    out << " [step " << r.step << " l0 " << r.l0 << " r_delta " << r.r_delta
        << "]";
  }
  return out.str();
}

}  // namespace

std::pair<LearnedOperator, TrainTrace> train_features(const DataSplit& dm,
                                                      const TrainConfig& cfg) {
  if (dm.size() == 0) throw TrainError("train_features: empty training split");
  if (cfg.batch_size < 4) {
    throw TrainError("train_features: batch_size must be >= 4");
  }
  if (cfg.steps < 0) throw TrainError("train_features: negative step count");
  if (cfg.d < 1) throw TrainError("train_features: d must be >= 1");

  Vector deltas;
  if (!cfg.higher_rank_deltas.empty()) {
    deltas = Eigen::Map<const Vector>(cfg.higher_rank_deltas.data(),
                                      static_cast<Index>(cfg.higher_rank_deltas.size()));
  } else {
    deltas = Vector::Constant(1, cfg.delta);
  }
  const std::size_t rank = static_cast<std::size_t>(deltas.size());

  LearnedOperator op;
  op.d = cfg.d;
  op.delta = deltas(0);
  op.phi_params = init_mlp(feature_net_arch(cfg), mix_seed(cfg.seed, 1));
  op.psi_params = init_mlp(feature_net_arch(cfg), mix_seed(cfg.seed, 2));

  std::vector<Vector> omegas(rank, Vector::Zero(cfg.d));

  // One optimizer over phi, psi and all omegas.
  std::vector<Index> sizes = mlp_block_sizes(op.phi_params);
  {
    const auto psi_sizes = mlp_block_sizes(op.psi_params);
    sizes.insert(sizes.end(), psi_sizes.begin(), psi_sizes.end());
    for (std::size_t k = 0; k < rank; ++k) sizes.push_back(cfg.d);
  }
  AdamState adam = make_adam_state(sizes, cfg.adam);

  const Matrix x_col = Eigen::Map<const Matrix>(dm.x.data(), dm.size(), 1);
  const Matrix z_col = Eigen::Map<const Matrix>(dm.z.data(), dm.size(), 1);

  TrainTrace trace;
  auto log_record = [&](Index step) {
    const Matrix phi_full = mlp_forward(op.phi_params, x_col);
    const Matrix psi_full = mlp_forward(op.psi_params, z_col);
    trace.records.push_back(
        evaluate_full_split(step, phi_full, psi_full, dm.y, deltas, cfg.cov_eps));
  };
  log_record(0);

  Rng rng(mix_seed(cfg.seed, 3));
  std::vector<Index> pool(static_cast<std::size_t>(dm.size()));
  std::iota(pool.begin(), pool.end(), Index{0});
  std::size_t pool_pos = pool.size();  // forces an initial shuffle

  const Index batch = std::min<Index>(cfg.batch_size, dm.size());
  Matrix xb(batch, 1), zb(batch, 1);
  Vector yb(batch);

  for (Index step = 1; step <= cfg.steps; ++step) {
    for (Index i = 0; i < batch; ++i) {
      if (pool_pos == pool.size()) {
        rng.shuffle(pool);
        pool_pos = 0;
      }
      const Index row = pool[pool_pos++];
      xb(i, 0) = dm.x(row);
      zb(i, 0) = dm.z(row);
      yb(i) = dm.y(row);
    }

    MlpCache phi_cache, psi_cache;
    const Matrix phi = mlp_forward_cached(op.phi_params, xb, phi_cache);
    const Matrix psi = mlp_forward_cached(op.psi_params, zb, psi_cache);

    const LossGrads lg = loss_extended_grads(phi, psi, yb, omegas, deltas,
                                             cfg.orthonormal_reg_weight);
    if (!std::isfinite(lg.value)) {
      throw TrainError("train_features: loss diverged at step " +
                       std::to_string(step) + ";" + trace_tail(trace));
    }

    const MlpParams phi_grads = mlp_backward(op.phi_params, phi_cache, lg.d_phi);
    const MlpParams psi_grads = mlp_backward(op.psi_params, psi_cache, lg.d_psi);

    auto params = mlp_param_blocks(op.phi_params);
    {
      const auto psi_blocks = mlp_param_blocks(op.psi_params);
      params.insert(params.end(), psi_blocks.begin(), psi_blocks.end());
      for (std::size_t k = 0; k < rank; ++k) {
        params.push_back({omegas[k].data(), omegas[k].size()});
      }
    }
    auto grads = mlp_grad_blocks(phi_grads);
    {
      const auto psi_blocks = mlp_grad_blocks(psi_grads);
      grads.insert(grads.end(), psi_blocks.begin(), psi_blocks.end());
      for (std::size_t k = 0; k < rank; ++k) {
        grads.push_back({lg.d_omegas[k].data(), lg.d_omegas[k].size()});
      }
    }
    adam_step(adam, params, grads);

    if (step % cfg.log_interval == 0 || step == cfg.steps) log_record(step);
  }

  op.omega = omegas[0];
  for (std::size_t k = 1; k < rank; ++k) {
    op.extra_omegas.push_back(omegas[k]);
    op.extra_deltas.push_back(deltas(static_cast<Index>(k)));
  }
  return {std::move(op), std::move(trace)};
}

void save_trace_csv(const std::filesystem::path& path, const TrainTrace& trace) {
  std::ofstream out(path);
  if (!out) throw TrainError("save_trace_csv: cannot open " + path.string());
  out << "step,l0,r_delta,ortho_pen\n";
  for (const auto& r : trace.records) {
    out << r.step << ',' << format_double(r.l0) << ','
        << format_double(r.r_delta) << ',' << format_double(r.ortho_pen)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Moment-based linear features.

namespace {

void check_problem(const MomentProblem& prob) {
  if (prob.cov_bx.rows() != prob.cov_bx.cols() ||
      prob.cov_bz.rows() != prob.cov_bz.cols()) {
    throw TrainError("moment problem: covariances must be square");
  }
  if (prob.cross_zx.rows() != prob.cov_bz.rows() ||
      prob.cross_zx.cols() != prob.cov_bx.rows()) {
    throw TrainError("moment problem: cross moment shape mismatch");
  }
  if (prob.y_moments.size() > 0 && prob.y_moments.cols() != prob.cov_bz.rows()) {
    throw TrainError("moment problem: y moment width mismatch");
  }
}

}  // namespace

double moment_loss(const MomentProblem& prob, const LinearFeatures& feats,
                   const Vector& deltas) {
  check_problem(prob);
  const Matrix p = feats.a_phi * prob.cov_bx * feats.a_phi.transpose();
  const Matrix q = feats.a_psi * prob.cov_bz * feats.a_psi.transpose();
  const Matrix cross =
      feats.a_psi * prob.cross_zx * feats.a_phi.transpose();
  double total = (p * q).trace() - 2.0 * cross.trace();
  for (Index k = 0; k < deltas.size(); ++k) {
    const Vector& omega = feats.omegas[static_cast<std::size_t>(k)];
    const Vector ym = feats.a_psi * prob.y_moments.row(k).transpose();
    total += omega.dot(q * omega) - 2.0 * deltas(k) * ym.dot(omega);
  }
  return total;
}

LossGrads moment_loss_grads(const MomentProblem& prob,
                            const LinearFeatures& feats, const Vector& deltas) {
  check_problem(prob);
  const Matrix p = feats.a_phi * prob.cov_bx * feats.a_phi.transpose();
  const Matrix q = feats.a_psi * prob.cov_bz * feats.a_psi.transpose();
  const Matrix cross = feats.a_psi * prob.cross_zx * feats.a_phi.transpose();

  LossGrads out;
  out.value = (p * q).trace() - 2.0 * cross.trace();
  out.d_phi = 2.0 * q * feats.a_phi * prob.cov_bx -
              2.0 * feats.a_psi * prob.cross_zx;
  out.d_psi = 2.0 * p * feats.a_psi * prob.cov_bz -
              2.0 * feats.a_phi * prob.cross_zx.transpose();
  out.d_omegas.resize(static_cast<std::size_t>(deltas.size()));
  for (Index k = 0; k < deltas.size(); ++k) {
    const Vector& omega = feats.omegas[static_cast<std::size_t>(k)];
    const Vector ym_raw = prob.y_moments.row(k).transpose();
    const Vector ym = feats.a_psi * ym_raw;
    out.value += omega.dot(q * omega) - 2.0 * deltas(k) * ym.dot(omega);
    out.d_psi += 2.0 * omega * (omega.transpose() * feats.a_psi * prob.cov_bz) -
                 2.0 * deltas(k) * omega * ym_raw.transpose();
    out.d_omegas[static_cast<std::size_t>(k)] =
        2.0 * q * omega - 2.0 * deltas(k) * ym;
  }
  return out;
}

LinearFeatures train_linear_moments(const MomentProblem& prob, Index d,
                                    const Vector& deltas,
                                    const MomentTrainConfig& cfg) {
  check_problem(prob);
  if (d < 1) throw TrainError("train_linear_moments: d must be >= 1");
  const Index nx = prob.cov_bx.rows();
  const Index nz = prob.cov_bz.rows();

  Rng rng(mix_seed(cfg.seed, 4));
  LinearFeatures feats;
  const double scale_x = std::sqrt(1.0 / static_cast<double>(nx));
  const double scale_z = std::sqrt(1.0 / static_cast<double>(nz));
  feats.a_phi = scale_x * rng.gaussian_matrix(d, nx);
  feats.a_psi = scale_z * rng.gaussian_matrix(d, nz);
  feats.omegas.assign(static_cast<std::size_t>(deltas.size()), Vector::Zero(d));

  std::vector<Index> sizes = {feats.a_phi.size(), feats.a_psi.size()};
  for (Index k = 0; k < deltas.size(); ++k) sizes.push_back(d);
  AdamState adam = make_adam_state(sizes, cfg.adam);

  for (Index step = 1; step <= cfg.steps; ++step) {
    const LossGrads lg = moment_loss_grads(prob, feats, deltas);
    if (!std::isfinite(lg.value)) {
      throw TrainError("train_linear_moments: loss diverged at step " +
                       std::to_string(step));
    }
    std::vector<ParamBlock> params = {
        {feats.a_phi.data(), feats.a_phi.size()},
        {feats.a_psi.data(), feats.a_psi.size()}};
    std::vector<GradBlock> grads = {
        {lg.d_phi.data(), lg.d_phi.size()},
        {lg.d_psi.data(), lg.d_psi.size()}};
    for (std::size_t k = 0; k < feats.omegas.size(); ++k) {
      params.push_back({feats.omegas[k].data(), feats.omegas[k].size()});
      grads.push_back({lg.d_omegas[k].data(), lg.d_omegas[k].size()});
    }
    adam_step(adam, params, grads);
  }
  return feats;
}

}  // namespace augspec
