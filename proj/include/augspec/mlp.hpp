#pragma once

#include "augspec/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace augspec {

class MlpError : public std::runtime_error {
 public:
  explicit MlpError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Activation { kSnake, kGelu, kLinear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// snake(t) = t + sin^2(t); its derivative is 1 + sin(2t).
double snake(double t);
double snake_prime(double t);

/// Exact-CDF GeLU: t * Phi(t) with Phi the standard normal CDF.
double gelu(double t);
double gelu_prime(double t);

struct MlpLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::kLinear;
};

struct MlpParams {
  std::vector<MlpLayer> layers;

  Index in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  Index out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
};

struct LayerSpec {
  Index in = 0;
  Index out = 0;
  Activation act = Activation::kLinear;
};

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases,
/// deterministic per seed.
MlpParams init_mlp(const std::vector<LayerSpec>& arch, std::uint64_t seed);

/// Batched forward pass; rows are samples. Throws MlpError naming the layer
/// if a non-finite value appears.
Matrix mlp_forward(const MlpParams& params, const Matrix& inputs);

/// Intermediate state kept by the forward pass for the exact reverse sweep.
struct MlpCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-activation per layer
};

Matrix mlp_forward_cached(const MlpParams& params, const Matrix& inputs,
                          MlpCache& cache);

/// Exact reverse-mode gradients for all weights and biases given the
/// cotangent of the output. Optionally also returns the input cotangent.
MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache,
                       const Matrix& out_cotangent,
                       Matrix* input_cotangent = nullptr);

MlpParams zeros_like(const MlpParams& params);

/// Versioned JSON checkpoint; double round-trip is bit-exact.
void save_mlp_json(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_mlp_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Flat view of one trainable block (a weight matrix, a bias, omega, ...).
struct ParamBlock {
  double* data = nullptr;
  Index size = 0;
};
struct GradBlock {
  const double* data = nullptr;
  Index size = 0;
};

/// Bias-corrected Adam over an ordered list of parameter blocks. One state
/// drives one training run; the block layout must stay fixed.
struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::vector<Vector> m;
  std::vector<Vector> v;
};

AdamState make_adam_state(const std::vector<Index>& block_sizes,
                          const AdamConfig& cfg);

void adam_step(AdamState& state, const std::vector<ParamBlock>& params,
               const std::vector<GradBlock>& grads);

/// Blocks of an MLP in layer order: weight, bias, weight, bias, ...
std::vector<ParamBlock> mlp_param_blocks(MlpParams& params);
std::vector<GradBlock> mlp_grad_blocks(const MlpParams& grads);
std::vector<Index> mlp_block_sizes(const MlpParams& params);

/// Adam step over a whole network (convenience wrapper over the block API).
void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);

}  // namespace augspec
