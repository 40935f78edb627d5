#include "augspec/ope.hpp"

#include <cmath>
#include <iostream>
#include <queue>
#include <set>

namespace augspec {

void TabularMdp::validate() const {
  if (n_states < 1 || n_actions < 1) throw OpeError("mdp: empty spaces");
  if (!(gamma > 0.0 && gamma < 1.0)) throw OpeError("mdp: gamma must be in (0,1)");
  if (static_cast<Index>(transition.size()) != n_actions) {
    throw OpeError("mdp: transition tensor must have one matrix per action");
  }
  for (const Matrix& p : transition) {
    if (p.rows() != n_states || p.cols() != n_states) {
      throw OpeError("mdp: transition matrix shape mismatch");
    }
    if (p.minCoeff() < 0.0) throw OpeError("mdp: negative transition probability");
    for (Index s = 0; s < n_states; ++s) {
      if (std::abs(p.row(s).sum() - 1.0) > 1e-12) {
        throw OpeError("mdp: transition row does not sum to 1");
      }
    }
  }
  if (reward_mean.rows() != n_states || reward_mean.cols() != n_actions) {
    throw OpeError("mdp: reward shape mismatch");
  }
  if (reward_std < 0.0) throw OpeError("mdp: negative reward std");
  if (mu0.size() != n_states || std::abs(mu0.sum() - 1.0) > 1e-12 ||
      mu0.minCoeff() < 0.0) {
    throw OpeError("mdp: mu0 is not a distribution");
  }
}

void Policy::validate(Index n_states, Index n_actions) const {
  if (probs.rows() != n_states || probs.cols() != n_actions) {
    throw OpeError("policy: shape mismatch");
  }
  if (probs.minCoeff() < 0.0) throw OpeError("policy: negative probability");
  for (Index s = 0; s < n_states; ++s) {
    if (std::abs(probs.row(s).sum() - 1.0) > 1e-12) {
      throw OpeError("policy: row does not sum to 1");
    }
  }
}

namespace {

Index flat(Index s, Index a, Index n_actions) { return s * n_actions + a; }

Index sample_categorical(Rng& rng, const Vector& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

Index sample_row(Rng& rng, const Matrix& row_stochastic, Index row) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Index j = 0; j < row_stochastic.cols(); ++j) {
    acc += row_stochastic(row, j);
    if (u < acc) return j;
  }
  return row_stochastic.cols() - 1;
}

// P_pi[(s,a),(s',a')] = P(s'|s,a) pi(a'|s') over flattened pairs.
Matrix extended_transition(const TabularMdp& mdp, const Policy& pi) {
  const Index sa = mdp.n_pairs();
  Matrix p(sa, sa);
  for (Index s = 0; s < mdp.n_states; ++s) {
    for (Index a = 0; a < mdp.n_actions; ++a) {
      const Index row = flat(s, a, mdp.n_actions);
      for (Index s2 = 0; s2 < mdp.n_states; ++s2) {
        for (Index a2 = 0; a2 < mdp.n_actions; ++a2) {
          p(row, flat(s2, a2, mdp.n_actions)) =
              mdp.transition[static_cast<std::size_t>(a)](s, s2) *
              pi.probs(s2, a2);
        }
      }
    }
  }
  return p;
}

Vector flatten_q(const Matrix& q) {
  Vector out(q.size());
  for (Index s = 0; s < q.rows(); ++s) {
    for (Index a = 0; a < q.cols(); ++a) out(s * q.cols() + a) = q(s, a);
  }
  return out;
}

Matrix unflatten_q(const Vector& q, Index n_states, Index n_actions) {
  Matrix out(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s) {
    for (Index a = 0; a < n_actions; ++a) out(s, a) = q(flat(s, a, n_actions));
  }
  return out;
}

}  // namespace

Matrix exact_q(const TabularMdp& mdp, const Policy& pi) {
  mdp.validate();
  pi.validate(mdp.n_states, mdp.n_actions);
  const Index sa = mdp.n_pairs();
  const Matrix p_pi = extended_transition(mdp, pi);
  const Matrix system = Matrix::Identity(sa, sa) - mdp.gamma * p_pi;
  const Vector r = flatten_q(mdp.reward_mean);
  const Vector q = ridge_solve(system, r, 0.0);
  const double resid = (system * q - r).norm();
  if (resid > 1e-10 * std::max(1.0, r.norm())) {
    throw OpeError("exact_q: linear solve residual too large");
  }
  return unflatten_q(q, mdp.n_states, mdp.n_actions);
}

double policy_value(const TabularMdp& mdp, const Matrix& q, const Policy& pi) {
  double value = 0.0;
  for (Index s = 0; s < mdp.n_states; ++s) {
    for (Index a = 0; a < mdp.n_actions; ++a) {
      value += mdp.mu0(s) * pi.probs(s, a) * q(s, a);
    }
  }
  return value;
}

double bellman_residual(const TabularMdp& mdp, const Matrix& q, const Policy& pi) {
  const Matrix p_pi = extended_transition(mdp, pi);
  const Vector q_flat = flatten_q(q);
  const Vector target = flatten_q(mdp.reward_mean) + mdp.gamma * (p_pi * q_flat);
  return (q_flat - target).cwiseAbs().maxCoeff();
}

OfflineData collect_offline(const TabularMdp& mdp, const Policy& pi_b, Index n,
                            std::uint64_t seed) {
  mdp.validate();
  pi_b.validate(mdp.n_states, mdp.n_actions);
  if (n < 1) throw OpeError("collect_offline: need n >= 1");

  Rng rng(mix_seed(seed, 0x09e));
  OfflineData data;
  data.behavior = pi_b;
  data.tuples.reserve(static_cast<std::size_t>(n));

  Index s = sample_categorical(rng, mdp.mu0);
  for (Index i = 0; i < n; ++i) {
    const Index a = sample_row(rng, pi_b.probs, s);
    const double r =
        mdp.reward_std > 0.0
            ? rng.normal(mdp.reward_mean(s, a), mdp.reward_std)
            : mdp.reward_mean(s, a);
    const Index s2 = sample_row(rng, mdp.transition[static_cast<std::size_t>(a)], s);
    data.tuples.push_back({s, a, r, s2});
    // Geometric restart approximates the discounted occupancy of pi_b.
    if (rng.uniform() < 1.0 - mdp.gamma) {
      s = sample_categorical(rng, mdp.mu0);
    } else {
      s = s2;
    }
  }
  return data;
}

namespace {

bool check_coverage(const TabularMdp& mdp, const OfflineData& data,
                    const Policy& pi) {
  // (s, a) pairs reachable when following pi from the mu0 support.
  std::set<Index> reachable_states;
  std::queue<Index> frontier;
  for (Index s = 0; s < mdp.n_states; ++s) {
    if (mdp.mu0(s) > 0.0) {
      reachable_states.insert(s);
      frontier.push(s);
    }
  }
  while (!frontier.empty()) {
    const Index s = frontier.front();
    frontier.pop();
    for (Index a = 0; a < mdp.n_actions; ++a) {
      if (pi.probs(s, a) <= 0.0) continue;
      for (Index s2 = 0; s2 < mdp.n_states; ++s2) {
        if (mdp.transition[static_cast<std::size_t>(a)](s, s2) > 0.0 &&
            !reachable_states.count(s2)) {
          reachable_states.insert(s2);
          frontier.push(s2);
        }
      }
    }
  }
  std::set<Index> visited;
  for (const auto& t : data.tuples) {
    visited.insert(flat(t.s, t.a, mdp.n_actions));
  }
  for (Index s : reachable_states) {
    for (Index a = 0; a < mdp.n_actions; ++a) {
      if (pi.probs(s, a) > 0.0 && !visited.count(flat(s, a, mdp.n_actions))) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

OpeResult iterative_npiv_ope(const TabularMdp& mdp, const OfflineData& data,
                             const Policy& pi, const OpeConfig& cfg) {
  mdp.validate();
  pi.validate(mdp.n_states, mdp.n_actions);
  if (data.tuples.empty()) throw OpeError("iterative_npiv_ope: empty data");
  const Index sa = mdp.n_pairs();
  const Index n = static_cast<Index>(data.tuples.size());
  const double nn = static_cast<double>(n);
  const double gamma = mdp.gamma;

  const bool linear = cfg.feature_mode == OpeFeatureMode::kLinear;
  if (linear && (cfg.d < 1 || cfg.d > sa)) {
    throw OpeError("iterative_npiv_ope: linear mode needs 1 <= d <= S*A");
  }

  OpeResult result;
  result.coverage_ok = check_coverage(mdp, data, pi);
  if (!result.coverage_ok) {
    std::cerr << "iterative_npiv_ope: warning: offline data does not cover "
                 "all (s,a) pairs reachable under the target policy\n";
  }

  // Z-side moments are iteration-independent.
  Vector count_z = Vector::Zero(sa);
  for (const auto& t : data.tuples) {
    count_z(flat(t.s, t.a, mdp.n_actions)) += 1.0;
  }
  const Matrix cov_bz = (count_z / nn).asDiagonal();

  Vector q = Vector::Zero(sa);  // Q_0 = 0
  if (cfg.q_init.size() > 0) {
    if (cfg.q_init.rows() != mdp.n_states || cfg.q_init.cols() != mdp.n_actions) {
      throw OpeError("iterative_npiv_ope: q_init shape mismatch");
    }
    q = flatten_q(cfg.q_init);
  }
  double prev_change = std::numeric_limits<double>::infinity();
  Index growth_streak = 0;

  std::vector<Index> x_index(static_cast<std::size_t>(n));
  for (Index k = 0; k < cfg.max_iters; ++k) {
    // a' ~ pi(.|s') resampled per tuple per iteration.
    Rng a_rng(mix_seed(cfg.seed, 7001 + static_cast<std::uint64_t>(k)));
    for (Index i = 0; i < n; ++i) {
      const auto& t = data.tuples[static_cast<std::size_t>(i)];
      const Index a2 = sample_row(a_rng, pi.probs, t.s_next);
      x_index[static_cast<std::size_t>(i)] = flat(t.s_next, a2, mdp.n_actions);
    }

    // Per-tuple regression target r + gamma Q_k(X). Its conditional
    // expectation given Z is what the next solve must represent, so the
    // same moment drives both the delta-augmented feature learning and the
    // Q update. (Augmenting with the raw iteration outcome
    // -(r - Q_k(s,a))/gamma instead destabilizes the loop: that direction
    // moves 1/(gamma sigma) faster than the estimate it tracks.)
    Vector target_moment = Vector::Zero(sa);  // E[(r + gamma Q_k(X)) b_z]
    Vector count_x = Vector::Zero(sa);
    Matrix cross_zx = Matrix::Zero(sa, sa);
    for (Index i = 0; i < n; ++i) {
      const auto& t = data.tuples[static_cast<std::size_t>(i)];
      const Index zi = flat(t.s, t.a, mdp.n_actions);
      const Index xi = x_index[static_cast<std::size_t>(i)];
      target_moment(zi) += t.r + gamma * q(xi);
      count_x(xi) += 1.0;
      cross_zx(zi, xi) += 1.0;
    }
    target_moment /= nn;
    cross_zx /= nn;

    // psi features of the one-hot dictionary: identity in tabular mode,
    // trained linear mixing otherwise.
    Matrix a_psi;
    if (linear) {
      MomentProblem prob;
      prob.cov_bx = (count_x / nn).asDiagonal();
      prob.cov_bz = cov_bz;
      prob.cross_zx = cross_zx;
      prob.y_moments = target_moment.transpose();
      MomentTrainConfig train_cfg = cfg.train;
      train_cfg.seed = mix_seed(cfg.seed, 8001 + static_cast<std::uint64_t>(k));
      const LinearFeatures feats = train_linear_moments(
          prob, cfg.d, Vector::Constant(1, cfg.delta), train_cfg);
      a_psi = feats.a_psi;
    } else {
      a_psi = Matrix::Identity(sa, sa);
    }

    // Q_{k+1}(z) = psi(z)' (C_psi + ridge I)^{-1} E[(r + gamma Q_k(X)) psi].
    const Matrix cov_psi = a_psi * cov_bz * a_psi.transpose();
    const Vector target_psi = a_psi * target_moment;
    const Vector weights = ridge_solve(cov_psi, target_psi, cfg.ridge);
    const Vector q_next = a_psi.transpose() * weights;

    const double change = (q_next - q).cwiseAbs().maxCoeff();
    q = q_next;

    OpeIterRecord rec;
    rec.iter = k + 1;
    rec.supnorm_change = change;
    const Matrix q_mat = unflatten_q(q, mdp.n_states, mdp.n_actions);
    rec.bellman_residual = bellman_residual(mdp, q_mat, pi);
    rec.rho_hat = policy_value(mdp, q_mat, pi);
    result.trace.push_back(rec);

    // resampling of a' makes consecutive changes jitter, so only clear
    // geometric growth counts toward the divergence streak
    if (change > 1.5 * prev_change) {
      if (++growth_streak >= 5) {
        throw OpeError("iterative_npiv_ope: sup-norm change grew for 5 "
                       "consecutive iterations (diverging), last change " +
                       std::to_string(change));
      }
    } else {
      growth_streak = 0;
    }
    prev_change = change;

    if (change < cfg.tol) {
      result.converged = true;
      break;
    }
  }

  result.q_hat = unflatten_q(q, mdp.n_states, mdp.n_actions);
  result.rho_hat = policy_value(mdp, result.q_hat, pi);
  return result;
}

Policy uniform_policy(Index n_states, Index n_actions) {
  Policy pi;
  pi.probs = Matrix::Constant(n_states, n_actions,
                              1.0 / static_cast<double>(n_actions));
  return pi;
}

TabularMdp make_chain_mdp(Index n_states, double slip, double gamma,
                          double reward_std) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = 2;
  mdp.gamma = gamma;
  mdp.reward_std = reward_std;
  mdp.transition.assign(2, Matrix::Zero(n_states, n_states));
  for (Index s = 0; s < n_states; ++s) {
    const Index left = std::max<Index>(s - 1, 0);
    const Index right = std::min<Index>(s + 1, n_states - 1);
    mdp.transition[0](s, left) += 1.0 - slip;
    mdp.transition[0](s, s) += slip;
    mdp.transition[1](s, right) += 1.0 - slip;
    mdp.transition[1](s, s) += slip;
  }
  mdp.reward_mean.resize(n_states, 2);
  for (Index s = 0; s < n_states; ++s) {
    const double pos = static_cast<double>(s) / static_cast<double>(n_states - 1);
    mdp.reward_mean(s, 0) = pos;
    mdp.reward_mean(s, 1) = pos + 0.5;
  }
  mdp.mu0 = Vector::Constant(n_states, 1.0 / static_cast<double>(n_states));
  mdp.validate();
  return mdp;
}

TabularMdp make_misaligned_mdp(double gamma, double reward_std) {
  // Sylvester Hadamard rows on 8 states: h_j are +-1, mutually orthogonal,
  // mean zero for j >= 1. Transitions are action-symmetric and carry three
  // moderate spectral directions plus one weak direction (h_7). The reward
  // is supported on h_7 and flips sign with the action, so the Q-function
  // of a deterministic target policy lives in directions the top operator
  // spectrum cannot represent: the state part sits in the weak h_7
  // direction and the action part is invisible to the (action-independent)
  // range of the conditional expectation operator.
  const Index n = 8;
  Matrix h(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      h(i, j) = (__builtin_popcountll(static_cast<unsigned long long>(i & j)) % 2)
                    ? -1.0
                    : 1.0;
    }
  }

  const double sigma_spurious = 0.28;
  const double sigma_fine = 0.1;
  Matrix p = Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  for (Index j = 1; j <= 3; ++j) {
    p += (sigma_spurious / static_cast<double>(n)) * h.row(j).transpose() *
         h.row(j);
  }
  p += (sigma_fine / static_cast<double>(n)) * h.row(7).transpose() * h.row(7);
  if (p.minCoeff() < 0.0) throw OpeError("make_misaligned_mdp: negative kernel");

  TabularMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 2;
  mdp.gamma = gamma;
  mdp.reward_std = reward_std;
  mdp.transition = {p, p};
  mdp.reward_mean.resize(n, 2);
  for (Index s = 0; s < n; ++s) {
    mdp.reward_mean(s, 0) = -5.0 * h(7, s);
    mdp.reward_mean(s, 1) = 5.0 * h(7, s);
  }
  mdp.mu0 = Vector::Zero(n);
  mdp.mu0(0) = 1.0;
  mdp.validate();
  return mdp;
}

}  // namespace augspec
