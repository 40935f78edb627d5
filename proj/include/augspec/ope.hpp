#pragma once

#include "augspec/spectral_loss.hpp"

#include <cstdint>
#include <vector>

namespace augspec {

class OpeError : public std::runtime_error {
 public:
  explicit OpeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TabularMdp {
  Index n_states = 0;
  Index n_actions = 0;
  std::vector<Matrix> transition;  // per action a: P_a(s, s'), rows sum to 1
  Matrix reward_mean;              // S x A
  double reward_std = 0.0;
  double gamma = 0.9;
  Vector mu0;  // initial distribution over states

  Index n_pairs() const { return n_states * n_actions; }
  void validate() const;
};

struct Policy {
  Matrix probs;  // S x A, row-stochastic
  void validate(Index n_states, Index n_actions) const;
};

struct Transition {
  Index s = 0;
  Index a = 0;
  double r = 0.0;
  Index s_next = 0;
};

struct OfflineData {
  std::vector<Transition> tuples;
  Policy behavior;
};

/// Q_pi via direct solve of (I - gamma P_pi) q = r_mean over state-action
/// space; residual verified against 1e-10.
Matrix exact_q(const TabularMdp& mdp, const Policy& pi);

/// E_{mu0, pi}[q(S0, A0)].
double policy_value(const TabularMdp& mdp, const Matrix& q, const Policy& pi);

/// Samples the discounted occupancy of the behavior policy by trajectory
/// simulation with geometric restart probability (1 - gamma).
OfflineData collect_offline(const TabularMdp& mdp, const Policy& pi_b, Index n,
                            std::uint64_t seed);

enum class OpeFeatureMode {
  kTabular,  // one-hot (s, a) features, d = S*A, no training
  kLinear,   // trainable linear features of the one-hot dictionary, d < S*A
};

struct OpeConfig {
  Index max_iters = 100;
  double tol = 1e-4;   // sup-norm early-stop threshold
  double delta = 0.0;  // 0 recovers the outcome-agnostic estimator
  OpeFeatureMode feature_mode = OpeFeatureMode::kTabular;
  Index d = 0;  // feature count for the linear mode
  double ridge = 1e-8;
  MomentTrainConfig train;
  std::uint64_t seed = 0;
  Matrix q_init;  // S x A starting point; empty means Q_0 = 0
};

struct OpeIterRecord {
  Index iter = 0;
  double supnorm_change = 0.0;
  double bellman_residual = 0.0;
  double rho_hat = 0.0;
};

struct OpeResult {
  Matrix q_hat;  // S x A
  double rho_hat = 0.0;
  std::vector<OpeIterRecord> trace;
  bool converged = false;
  bool coverage_ok = true;
};

/// Iterative NPIV policy evaluation: at step k the outcome is
/// Y_k = -(1/gamma)(r - Q_k(s, a)), Z-features live on (s, a) and X-features
/// on (s', a') with a' resampled from pi per tuple per iteration, and the
/// next Q is the 2SLS solution in feature space. Linear features are
/// retrained each iteration from the one-hot moment matrices.
OpeResult iterative_npiv_ope(const TabularMdp& mdp, const OfflineData& data,
                             const Policy& pi, const OpeConfig& cfg);

/// Max-norm Bellman residual ||q - (r + gamma P_pi q)||_inf.
double bellman_residual(const TabularMdp& mdp, const Matrix& q, const Policy& pi);

/// Uniform random policy.
Policy uniform_policy(Index n_states, Index n_actions);

/// Ergodic 5-state chain with slip; actions step left/right.
TabularMdp make_chain_mdp(Index n_states, double slip, double gamma,
                          double reward_std);

/// Symmetric-action MDP whose transition kernel carries several moderate
/// spectral directions plus one weak direction that alone supports the
/// reward, so low-rank outcome-agnostic features miss the Q-function.
TabularMdp make_misaligned_mdp(double gamma, double reward_std);

}  // namespace augspec
