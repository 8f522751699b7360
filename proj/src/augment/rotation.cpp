#include "dncasr/augment/rotation.hpp"

#include "dncasr/common.hpp"

#include <cmath>

namespace dncasr::aug {

void RotationSpec::validate() const {
  if (dim < 2) throw std::invalid_argument("rotation dim must be >= 2");
  if (!(scale >= 0.0)) throw std::invalid_argument("scale must be >= 0");
}

MatrixXd householder(const VectorXd& v) {
  double vtv = v.squaredNorm();
  if (vtv <= 0.0) throw std::invalid_argument("householder: zero vector");
  int m = static_cast<int>(v.size());
  return MatrixXd::Identity(m, m) - (2.0 / vtv) * (v * v.transpose());
}

MatrixXd constrained_rotation(const RotationSpec& spec) {
  spec.validate();
  const int n = spec.dim;
  if (std::isinf(spec.scale)) return MatrixXd::Identity(n, n);

  auto rng = std::mt19937_64(mix_seed(spec.seed));
  std::normal_distribution<double> normal(0.0, 1.0);

  MatrixXd h = MatrixXd::Identity(n, n);
  VectorXd d_sign = VectorXd::Ones(n);
  // Stewart's construction: draw the constrained normal vector, record the
  // sign of its leading entry for D, and reflect with the stable annihilator
  // u = v + sign(v[0])*||v||*e1 (the Householder matrix that carries e1 to
  // the drawn direction up to sign). At scale 0 the product is Haar; as the
  // scale grows every factor collapses toward diag(-1, I) and D*prod -> I.
  std::vector<VectorXd> us(n - 1);
  for (int j = 1; j <= n - 1; ++j) {
    int m = n - j + 1;
    VectorXd v(m);
    for (int i = 0; i < m; ++i) v[i] = normal(rng);
    v[0] -= spec.scale;
    double sign = v[0] >= 0.0 ? 1.0 : -1.0;
    d_sign[j - 1] = sign;
    VectorXd u = v;
    u[0] += sign * v.norm();
    if (u.squaredNorm() <= 0.0) u[0] = 1.0;  // measure-zero degenerate draw
    us[j - 1] = u;
  }
  // Accumulate H_1 H_2 ... H_{n-1}; H_j touches only the trailing n-j+1 rows.
  for (int j = n - 1; j >= 1; --j) {
    const VectorXd& u = us[j - 1];
    int m = n - j + 1;
    auto block = h.bottomRows(m);
    Eigen::RowVectorXd ut_block = u.transpose() * block;
    block.noalias() -= (2.0 / u.squaredNorm()) * u * ut_block;
  }
  for (int i = 0; i < n; ++i) h.row(i) *= d_sign[i];
  return h;
}

MatrixXd random_orthogonal(const RotationSpec& spec) {
  RotationSpec unconstrained = spec;
  unconstrained.scale = 0.0;
  return constrained_rotation(unconstrained);
}

double max_orthogonality_error(const MatrixXd& h) {
  MatrixXd e = h.transpose() * h - MatrixXd::Identity(h.rows(), h.cols());
  return e.cwiseAbs().maxCoeff();
}

double mean_abs_rotation_angle(int dim, double scale, int num_samples,
                               std::uint64_t seed) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
  double sum = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    RotationSpec spec{dim, scale, split_seed(seed, 2 * s)};
    MatrixXd h = constrained_rotation(spec);
    auto rng = std::mt19937_64(split_seed(seed, 2 * s + 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = normal(rng);
    double cosine = x.dot(h * x) / x.squaredNorm();
    cosine = std::clamp(cosine, -1.0, 1.0);
    sum += std::abs(std::acos(cosine)) * 180.0 / M_PI;
  }
  return sum / num_samples;
}

sim::EmbeddingSequence apply_cda(const sim::EmbeddingSequence& embeddings,
                                 double c_lo, double c_hi, std::uint64_t seed) {
  if (embeddings.windows.cols() < 2)
    throw std::invalid_argument("apply_cda: embedding dim must be >= 2");
  if (!(c_lo <= c_hi)) throw std::invalid_argument("apply_cda: bad scale range");

  double scale;
  if (std::isinf(c_lo) && std::isinf(c_hi)) {
    scale = kInfiniteScale;
  } else {
    auto rng = std::mt19937_64(mix_seed(seed ^ 0xcda0ULL));
    scale = std::uniform_real_distribution<double>(c_lo, c_hi)(rng);
  }
  sim::EmbeddingSequence out = embeddings;
  if (std::isinf(scale)) return out;  // identity limit

  RotationSpec spec{static_cast<int>(embeddings.windows.cols()), scale,
                    split_seed(seed, 0xcda1ULL)};
  MatrixXd h = constrained_rotation(spec);
  out.windows = embeddings.windows * h.transpose();  // rows x -> Hx
  return out;
}

}  // namespace dncasr::aug
