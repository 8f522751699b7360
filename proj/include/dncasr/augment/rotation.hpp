// Random orthogonal rotations of speaker embeddings via composed Householder
// reflections (Stewart's construction), with a constrained variant whose
// scale offset controls the mean rotation angle.
#pragma once

#include "dncasr/sim/types.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <limits>

namespace dncasr::aug {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RotationSpec {
  int dim = 32;
  double scale = 0.0;  // 0 = unconstrained; may be infinity
  std::uint64_t seed = 0;

  void validate() const;
};

// I - 2 v v^T / (v^T v); symmetric, orthogonal, maps v to -v.
MatrixXd householder(const VectorXd& v);

// Unconstrained draw (scale fixed at 0); Haar-distributed up to the diagonal
// sign convention.
MatrixXd random_orthogonal(const RotationSpec& spec);

// H = D H_1 ... H_{n-1} where H_j embeds a Householder reflection of the
// trailing n-j+1 coordinates built from a standard-normal vector whose first
// component is shifted by -scale. An infinite scale yields the identity.
MatrixXd constrained_rotation(const RotationSpec& spec);

double max_orthogonality_error(const MatrixXd& h);

// Mean over `num_samples` of |angle(x, Hx)| in degrees, fresh H and fresh
// standard-normal x per sample.
double mean_abs_rotation_angle(int dim, double scale, int num_samples,
                               std::uint64_t seed);

// One scale drawn uniformly from [c_lo, c_hi] and one rotation per call;
// every window row x is replaced by Hx.
sim::EmbeddingSequence apply_cda(const sim::EmbeddingSequence& embeddings,
                                 double c_lo, double c_hi, std::uint64_t seed);

constexpr double kInfiniteScale = std::numeric_limits<double>::infinity();

}  // namespace dncasr::aug
