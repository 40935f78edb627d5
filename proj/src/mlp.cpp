#include "augspec/mlp.hpp"

#include "augspec/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace augspec {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSnake: return "snake";
    case Activation::kGelu: return "gelu";
    case Activation::kLinear: return "linear";
  }
  throw MlpError("unknown activation tag");
}

Activation activation_from_string(const std::string& s) {
  if (s == "snake") return Activation::kSnake;
  if (s == "gelu") return Activation::kGelu;
  if (s == "linear") return Activation::kLinear;
  throw MlpError("unknown activation name: " + s);
}

double snake(double t) {
  const double s = std::sin(t);
  return t + s * s;
}

double snake_prime(double t) { return 1.0 + std::sin(2.0 * t); }

double gelu(double t) {
  return t * 0.5 * std::erfc(-t * kInvSqrt2);
}

double gelu_prime(double t) {
  const double cdf = 0.5 * std::erfc(-t * kInvSqrt2);
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * t * t);
  return cdf + t * pdf;
}

namespace {

double activate(Activation a, double t) {
  switch (a) {
    case Activation::kSnake: return snake(t);
    case Activation::kGelu: return gelu(t);
    case Activation::kLinear: return t;
  }
  return t;
}

double activate_prime(Activation a, double t) {
  switch (a) {
    case Activation::kSnake: return snake_prime(t);
    case Activation::kGelu: return gelu_prime(t);
    case Activation::kLinear: return 1.0;
  }
  return 1.0;
}

Matrix apply_activation(Activation a, const Matrix& pre) {
  if (a == Activation::kLinear) return pre;
  return pre.unaryExpr([a](double t) { return activate(a, t); });
}

Matrix apply_activation_prime(Activation a, const Matrix& pre) {
  if (a == Activation::kLinear) return Matrix::Ones(pre.rows(), pre.cols());
  return pre.unaryExpr([a](double t) { return activate_prime(a, t); });
}

void check_shapes(const MlpParams& params, const Matrix& inputs) {
  if (params.layers.empty()) throw MlpError("mlp: no layers");
  if (inputs.cols() != params.in_dim()) {
    throw MlpError("mlp: input width " + std::to_string(inputs.cols()) +
                   " does not match first layer " +
                   std::to_string(params.in_dim()));
  }
  for (std::size_t l = 1; l < params.layers.size(); ++l) {
    if (params.layers[l].weight.cols() != params.layers[l - 1].weight.rows()) {
      throw MlpError("mlp: layer " + std::to_string(l) + " dimension mismatch");
    }
  }
}

}  // namespace

MlpParams init_mlp(const std::vector<LayerSpec>& arch, std::uint64_t seed) {
  if (arch.empty()) throw MlpError("init_mlp: empty architecture");
  Rng rng(seed);
  MlpParams params;
  params.layers.reserve(arch.size());
  for (const auto& spec : arch) {
    if (spec.in < 1 || spec.out < 1) throw MlpError("init_mlp: bad layer sizes");
    const double bound =
        std::sqrt(6.0 / static_cast<double>(spec.in + spec.out));
    MlpLayer layer;
    layer.weight.resize(spec.out, spec.in);
    for (Index i = 0; i < spec.out; ++i) {
      for (Index j = 0; j < spec.in; ++j) {
        layer.weight(i, j) = rng.uniform(-bound, bound);
      }
    }
    layer.bias = Vector::Zero(spec.out);
    layer.act = spec.act;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& inputs) {
  check_shapes(params, inputs);
  Matrix a = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix pre = a * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    a = apply_activation(layer.act, pre);
    if (!a.allFinite()) {
      throw MlpError("mlp_forward: non-finite output at layer " +
                     std::to_string(l));
    }
  }
  return a;
}

Matrix mlp_forward_cached(const MlpParams& params, const Matrix& inputs,
                          MlpCache& cache) {
  check_shapes(params, inputs);
  cache.input = inputs;
  cache.pre.assign(params.layers.size(), Matrix());
  cache.post.assign(params.layers.size(), Matrix());
  Matrix a = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix pre = a * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    cache.pre[l] = pre;
    a = apply_activation(layer.act, pre);
    cache.post[l] = a;
    if (!a.allFinite()) {
      throw MlpError("mlp_forward: non-finite output at layer " +
                     std::to_string(l));
    }
  }
  return a;
}

MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache,
                       const Matrix& out_cotangent, Matrix* input_cotangent) {
  const std::size_t n_layers = params.layers.size();
  if (cache.pre.size() != n_layers) {
    throw MlpError("mlp_backward: cache does not match network");
  }
  if (out_cotangent.rows() != cache.input.rows() ||
      out_cotangent.cols() != params.out_dim()) {
    throw MlpError("mlp_backward: cotangent shape mismatch");
  }
  MlpParams grads = zeros_like(params);
  Matrix g = out_cotangent;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = params.layers[l];
    const Matrix g_pre =
        g.cwiseProduct(apply_activation_prime(layer.act, cache.pre[l]));
    const Matrix& below = (l == 0) ? cache.input : cache.post[l - 1];
    grads.layers[l].weight = g_pre.transpose() * below;
    grads.layers[l].bias = g_pre.colwise().sum().transpose();
    if (l > 0 || input_cotangent != nullptr) {
      g = g_pre * layer.weight;
    }
  }
  if (input_cotangent != nullptr) *input_cotangent = g;
  return grads;
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams z;
  z.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    MlpLayer g;
    g.weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
    g.bias = Vector::Zero(layer.bias.size());
    g.act = layer.act;
    z.layers.push_back(std::move(g));
  }
  return z;
}

void save_mlp_json(const std::filesystem::path& path, const MlpParams& params) {
  nlohmann::json doc;
  doc["format"] = "augspec-mlp-v1";
  auto& layers = doc["layers"];
  layers = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    nlohmann::json jl;
    jl["in"] = layer.weight.cols();
    jl["out"] = layer.weight.rows();
    jl["act"] = to_string(layer.act);
    std::vector<double> w(layer.weight.size());
    // stored row-major
    for (Index i = 0; i < layer.weight.rows(); ++i) {
      for (Index j = 0; j < layer.weight.cols(); ++j) {
        w[static_cast<std::size_t>(i * layer.weight.cols() + j)] =
            layer.weight(i, j);
      }
    }
    jl["weight"] = w;
    jl["bias"] = std::vector<double>(layer.bias.data(),
                                     layer.bias.data() + layer.bias.size());
    layers.push_back(std::move(jl));
  }
  std::ofstream out(path);
  if (!out) throw MlpError("save_mlp_json: cannot open " + path.string());
  out << doc.dump(2) << '\n';
}

MlpParams load_mlp_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MlpError("load_mlp_json: cannot open " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in);
  if (doc.value("format", "") != "augspec-mlp-v1") {
    throw MlpError("load_mlp_json: unsupported format in " + path.string());
  }
  MlpParams params;
  for (const auto& jl : doc.at("layers")) {
    MlpLayer layer;
    const Index in_dim = jl.at("in").get<Index>();
    const Index out_dim = jl.at("out").get<Index>();
    layer.act = activation_from_string(jl.at("act").get<std::string>());
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (static_cast<Index>(w.size()) != in_dim * out_dim ||
        static_cast<Index>(b.size()) != out_dim) {
      throw MlpError("load_mlp_json: inconsistent layer payload");
    }
    layer.weight.resize(out_dim, in_dim);
    for (Index i = 0; i < out_dim; ++i) {
      for (Index j = 0; j < in_dim; ++j) {
        layer.weight(i, j) = w[static_cast<std::size_t>(i * in_dim + j)];
      }
    }
    layer.bias = Eigen::Map<const Vector>(b.data(), out_dim);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

AdamState make_adam_state(const std::vector<Index>& block_sizes,
                          const AdamConfig& cfg) {
  AdamState st;
  st.cfg = cfg;
  st.m.reserve(block_sizes.size());
  st.v.reserve(block_sizes.size());
  for (Index n : block_sizes) {
    st.m.push_back(Vector::Zero(n));
    st.v.push_back(Vector::Zero(n));
  }
  return st;
}

void adam_step(AdamState& state, const std::vector<ParamBlock>& params,
               const std::vector<GradBlock>& grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size()) {
    throw MlpError("adam_step: block count mismatch");
  }
  ++state.step;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size != state.m[k].size() ||
        grads[k].size != state.m[k].size()) {
      throw MlpError("adam_step: block size mismatch");
    }
    double* p = params[k].data;
    const double* g = grads[k].data;
    Vector& m = state.m[k];
    Vector& v = state.v[k];
    for (Index i = 0; i < params[k].size; ++i) {
      m(i) = b1 * m(i) + (1.0 - b1) * g[i];
      v(i) = b2 * v(i) + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m(i) / bc1;
      const double v_hat = v(i) / bc2;
      p[i] -= state.cfg.lr * m_hat / (std::sqrt(v_hat) + state.cfg.eps);
    }
  }
}

std::vector<ParamBlock> mlp_param_blocks(MlpParams& params) {
  std::vector<ParamBlock> blocks;
  blocks.reserve(2 * params.layers.size());
  for (auto& layer : params.layers) {
    blocks.push_back({layer.weight.data(), layer.weight.size()});
    blocks.push_back({layer.bias.data(), layer.bias.size()});
  }
  return blocks;
}

std::vector<GradBlock> mlp_grad_blocks(const MlpParams& grads) {
  std::vector<GradBlock> blocks;
  blocks.reserve(2 * grads.layers.size());
  for (const auto& layer : grads.layers) {
    blocks.push_back({layer.weight.data(), layer.weight.size()});
    blocks.push_back({layer.bias.data(), layer.bias.size()});
  }
  return blocks;
}

std::vector<Index> mlp_block_sizes(const MlpParams& params) {
  std::vector<Index> sizes;
  sizes.reserve(2 * params.layers.size());
  for (const auto& layer : params.layers) {
    sizes.push_back(layer.weight.size());
    sizes.push_back(layer.bias.size());
  }
  return sizes;
}

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  adam_step(state, mlp_param_blocks(params), mlp_grad_blocks(grads));
}

}  // namespace augspec
