#include "augspec/synthgen.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace augspec {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Index kGrid = 400;
constexpr double kPositivityFloor = 0.01;
constexpr double kEnvelopeInflation = 1.05;

// Seed streams so operator draws, confounder direction and dataset noise
// never share state.
constexpr std::uint64_t kOperatorStream = 0x5ee601;
constexpr std::uint64_t kConfoundStream = 0x5ee602;
constexpr std::uint64_t kDatasetStream = 0x5ee603;

Vector grid_points() {
  Vector g(kGrid);
  for (Index k = 0; k < kGrid; ++k) {
    g(k) = -kPi + (2.0 * kPi) * (static_cast<double>(k) + 0.5) / kGrid;
  }
  return g;
}

// QR of a square Gaussian draw with the R diagonal forced positive gives a
// Haar-distributed orthogonal matrix.
Matrix random_orthogonal(Index n, Rng& rng) {
  const Matrix g = rng.gaussian_matrix(n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Vector linear_profile(Index count, double first, double last) {
  Vector v(count);
  if (count == 1) {
    v(0) = first;
    return v;
  }
  for (Index i = 0; i < count; ++i) {
    v(i) = first + (last - first) * static_cast<double>(i) /
                       static_cast<double>(count - 1);
  }
  return v;
}

void validate_spec(const SyntheticOperatorSpec& spec) {
  if (spec.d < 2) throw SynthError("operator spec: d must be >= 2");
  if (!(spec.sigma1 > 0.0 && spec.sigma1 < 1.0)) {
    throw SynthError("operator spec: sigma1 must lie in (0, 1)");
  }
  if (!(spec.c_sigma > 0.0 && spec.c_sigma <= 1.0)) {
    throw SynthError("operator spec: c_sigma must lie in (0, 1]");
  }
  if (!(spec.c_alpha > 0.0)) {
    throw SynthError("operator spec: c_alpha must be positive");
  }
  if (spec.noise_std < 0.0 || spec.confound_strength < 0.0) {
    throw SynthError("operator spec: noise_std and confound_strength must be >= 0");
  }
}

Vector confound_direction(const GroundTruthOperator& op) {
  Rng rng(mix_seed(op.spec.seed, kConfoundStream));
  Vector c = rng.gaussian_vector(op.spec.d - 1);
  const double norm = c.norm();
  if (norm == 0.0) {
    c.setZero();
    c(0) = 1.0;
    return c;
  }
  return c / norm;
}

}  // namespace

Matrix sine_basis(const Vector& ts, Index n_funcs) {
  Matrix b(ts.size(), n_funcs);
  const double scale = std::numbers::sqrt2;
  for (Index i = 0; i < ts.size(); ++i) {
    for (Index l = 1; l <= n_funcs; ++l) {
      b(i, l - 1) = scale * std::sin(static_cast<double>(l) * ts(i));
    }
  }
  return b;
}

GroundTruthOperator build_operator(const SyntheticOperatorSpec& spec) {
  validate_spec(spec);
  const Index m = spec.d - 1;

  GroundTruthOperator op;
  op.spec = spec;

  Rng rng(mix_seed(spec.seed, kOperatorStream));
  op.u_coeffs = random_orthogonal(m, rng);
  op.v_coeffs = random_orthogonal(m, rng);

  op.sigmas = linear_profile(m, spec.sigma1, spec.c_sigma * spec.sigma1);

  Vector alpha = linear_profile(m, 1.0, spec.c_alpha);
  op.alpha = alpha / alpha.norm();

  // Joint density wrt the uniform product measure must stay positive,
  // otherwise the spec is rejected (never clipped).
  const Vector grid = grid_points();
  const Matrix u_vals = eval_u(op, grid);
  const Matrix v_vals = eval_v(op, grid);
  const Matrix density =
      Matrix::Ones(kGrid, kGrid) +
      u_vals * op.sigmas.asDiagonal() * v_vals.transpose();
  const double min_density = density.minCoeff();
  if (min_density <= kPositivityFloor) {
    std::ostringstream msg;
    msg << "build_operator: joint density minimum " << min_density
        << " <= " << kPositivityFloor
        << "; reduce sigma1 (currently " << spec.sigma1 << ")";
    throw SynthError(msg.str());
  }
  return op;
}

Matrix eval_u(const GroundTruthOperator& op, const Vector& zs) {
  return sine_basis(zs, op.spec.d - 1) * op.u_coeffs;
}

Matrix eval_v(const GroundTruthOperator& op, const Vector& xs) {
  return sine_basis(xs, op.spec.d - 1) * op.v_coeffs;
}

Vector eval_h0(const GroundTruthOperator& op, const Vector& xs) {
  return eval_v(op, xs) * op.alpha;
}

Vector apply_T(const GroundTruthOperator& op, const Vector& coeffs_in_v_basis,
               const Vector& zs) {
  if (coeffs_in_v_basis.size() != op.spec.d - 1) {
    throw SynthError("apply_T: coefficient vector must have length d-1");
  }
  const Vector scaled = op.sigmas.cwiseProduct(coeffs_in_v_basis);
  return eval_u(op, zs) * scaled;
}

Matrix operator_matrix(const GroundTruthOperator& op) {
  const Index d = op.spec.d;
  Matrix t = Matrix::Zero(d, d);
  t(0, 0) = 1.0;
  t.bottomRightCorner(d - 1, d - 1) =
      op.u_coeffs * op.sigmas.asDiagonal() * op.v_coeffs.transpose();
  return t;
}

Vector h0_basis_coeffs(const GroundTruthOperator& op) {
  const Index d = op.spec.d;
  Vector c = Vector::Zero(d);
  c.tail(d - 1) = op.v_coeffs * op.alpha;
  return c;
}

Matrix augmented_operator_matrix(const GroundTruthOperator& op, double delta) {
  const Index d = op.spec.d;
  const Matrix t = operator_matrix(op);
  Matrix aug(d, d + 1);
  aug.leftCols(d) = t;
  aug.col(d) = delta * (t * h0_basis_coeffs(op));
  return aug;
}

double gap_gamma(const GroundTruthOperator& op, const std::vector<Index>& bar_n,
                 double delta) {
  const Index m = op.spec.d - 1;
  if (bar_n.empty()) throw SynthError("gap_gamma: empty signal partition");
  std::vector<bool> in_bar(m, false);
  for (Index idx : bar_n) {
    if (idx < 1 || idx > m) {
      throw SynthError("gap_gamma: index " + std::to_string(idx) +
                       " outside {1.." + std::to_string(m) + "}");
    }
    in_bar[idx - 1] = true;
  }

  const Index k = static_cast<Index>(bar_n.size());
  Vector bar_sigma(k), bar_alpha(k);
  Index pos = 0;
  double complement_max = 0.0;
  for (Index i = 0; i < m; ++i) {
    if (in_bar[i]) {
      bar_sigma(pos) = op.sigmas(i);
      bar_alpha(pos) = op.alpha(i);
      ++pos;
    } else {
      complement_max = std::max(complement_max, op.sigmas(i));
    }
  }

  const Matrix inner =
      Matrix::Identity(k, k) + delta * delta * bar_alpha * bar_alpha.transpose();
  const Matrix block = bar_sigma.asDiagonal() * sym_sqrt(inner, 0.0);
  const Vector s = svd(block).s;
  return s(s.size() - 1) - complement_max;
}

Dataset sample_dataset(const GroundTruthOperator& op, Index n,
                       double split_fraction, std::uint64_t seed) {
  if (n < 10) throw SynthError("sample_dataset: n must be >= 10");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw SynthError("sample_dataset: split_fraction must lie in (0, 1)");
  }
  const Index m = op.spec.d - 1;

  // Grid sup of |v_i|, inflated, gives the rejection envelope per z.
  const Vector grid = grid_points();
  const Matrix v_grid = eval_v(op, grid);
  Vector sup_v(m);
  for (Index i = 0; i < m; ++i) {
    sup_v(i) = kEnvelopeInflation * v_grid.col(i).cwiseAbs().maxCoeff();
  }

  const Vector c = confound_direction(op);
  Rng rng(mix_seed(seed, kDatasetStream));

  Dataset ds;
  ds.z.resize(n);
  ds.x.resize(n);
  ds.y.resize(n);
  ds.seed = seed;
  ds.split_m = static_cast<Index>(static_cast<double>(n) * split_fraction);
  if (ds.split_m < 1) ds.split_m = 1;
  if (ds.split_m >= n) ds.split_m = n - 1;

  const double sqrt2 = std::numbers::sqrt2;
  std::uint64_t proposals = 0;
  Vector u_at_z(m), v_at_x(m);
  for (Index row = 0; row < n; ++row) {
    const double z = rng.uniform(-kPi, kPi);
    for (Index l = 1; l <= m; ++l) {
      u_at_z(l - 1) = sqrt2 * std::sin(static_cast<double>(l) * z);
    }
    u_at_z = op.u_coeffs.transpose() * u_at_z;

    double envelope = 1.0;
    for (Index i = 0; i < m; ++i) {
      envelope += op.sigmas(i) * std::abs(u_at_z(i)) * sup_v(i);
    }

    double x = 0.0;
    std::uint64_t local = 0;
    while (true) {
      ++proposals;
      if (++local > 100000) {
        throw SynthError("sample_dataset: rejection acceptance rate below 1% "
                         "(pathological spec)");
      }
      x = rng.uniform(-kPi, kPi);
      for (Index l = 1; l <= m; ++l) {
        v_at_x(l - 1) = sqrt2 * std::sin(static_cast<double>(l) * x);
      }
      v_at_x = op.v_coeffs.transpose() * v_at_x;
      double density = 1.0;
      for (Index i = 0; i < m; ++i) {
        density += op.sigmas(i) * u_at_z(i) * v_at_x(i);
      }
      if (density > envelope) {
        throw SynthError("sample_dataset: envelope violated; grid sup underestimate");
      }
      if (rng.uniform() * envelope <= density) break;
    }

    const double eps = op.spec.noise_std > 0.0
                           ? rng.normal(0.0, op.spec.noise_std)
                           : 0.0;
    double confounder = 0.0;
    for (Index i = 0; i < m; ++i) {
      confounder += c(i) * (v_at_x(i) - op.sigmas(i) * u_at_z(i));
    }
    const double h0 = v_at_x.dot(op.alpha);

    ds.z(row) = z;
    ds.x(row) = x;
    ds.y(row) = h0 + op.spec.confound_strength * confounder + eps;
  }

  const double rate =
      static_cast<double>(n) / static_cast<double>(proposals);
  if (rate < 0.01) {
    throw SynthError("sample_dataset: rejection acceptance rate below 1% "
                     "(pathological spec)");
  }
  return ds;
}

DataSplit feature_split(const Dataset& ds) {
  DataSplit s;
  s.z = ds.z.head(ds.split_m);
  s.x = ds.x.head(ds.split_m);
  s.y = ds.y.head(ds.split_m);
  return s;
}

DataSplit estimation_split(const Dataset& ds) {
  const Index rest = ds.z.size() - ds.split_m;
  DataSplit s;
  s.z = ds.z.tail(rest);
  s.x = ds.x.tail(rest);
  s.y = ds.y.tail(rest);
  return s;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& ds,
                      const GroundTruthOperator& op) {
  std::ofstream out(path);
  if (!out) throw SynthError("save_dataset_csv: cannot open " + path.string());
  out << "z,x,y\n";
  for (Index i = 0; i < ds.z.size(); ++i) {
    out << format_double(ds.z(i)) << ',' << format_double(ds.x(i)) << ','
        << format_double(ds.y(i)) << '\n';
  }
  if (!out) throw SynthError("save_dataset_csv: write failed");

  nlohmann::json meta;
  meta["spec"] = {{"d", op.spec.d},
                  {"sigma1", op.spec.sigma1},
                  {"c_sigma", op.spec.c_sigma},
                  {"c_alpha", op.spec.c_alpha},
                  {"noise_std", op.spec.noise_std},
                  {"confound_strength", op.spec.confound_strength},
                  {"seed", op.spec.seed}};
  meta["dataset_seed"] = ds.seed;
  meta["n"] = ds.z.size();
  meta["split_m"] = ds.split_m;
  std::ofstream meta_out(path.string() + ".meta.json");
  meta_out << meta.dump(2) << '\n';
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SynthError("load_dataset_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "z,x,y") {
    throw SynthError("load_dataset_csv: bad header in " + path.string());
  }
  std::vector<double> zs, xs, ys;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double z, x, y;
    if (!(row >> z >> x >> y)) {
      throw SynthError("load_dataset_csv: bad row in " + path.string());
    }
    zs.push_back(z);
    xs.push_back(x);
    ys.push_back(y);
  }
  Dataset ds;
  const Index n = static_cast<Index>(zs.size());
  ds.z = Eigen::Map<Vector>(zs.data(), n);
  ds.x = Eigen::Map<Vector>(xs.data(), n);
  ds.y = Eigen::Map<Vector>(ys.data(), n);

  const std::filesystem::path meta_path(path.string() + ".meta.json");
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    ds.seed = meta.value("dataset_seed", 0ULL);
    ds.split_m = meta.value("split_m", n / 2);
  } else {
    ds.split_m = n / 2;
  }
  return ds;
}

}  // namespace augspec
