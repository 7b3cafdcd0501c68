#pragma once

#include "ttvi/basis.hpp"
#include "ttvi/common.hpp"
#include "ttvi/tensor_train.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ttvi {

// Normalized coefficient train C of the functional expansion
//   q0(x) = sum_I C[I] phi_{i_1}(x_1) ... phi_{i_d}(x_d),
// kept in right-left orthogonal form with ||C||_F = 1 so that p0 = q0^2
// integrates to one on [-1,1]^d.
class CoefficientTT {
 public:
  CoefficientTT(TensorTrain ortho_unit_norm, Basis basis);

  const TensorTrain& train() const { return tt_; }
  const Basis& basis() const { return basis_; }
  Index dims() const { return tt_.dims(); }

  // q0(x); DomainError outside [-1,1]^d.
  double q0_eval(const Vector& x) const;

  // log p0(x) = 2 log|q0(x)|
  double log_density(const Vector& x) const;

 private:
  TensorTrain tt_;
  Basis basis_;
};

// Contract the quadrature weight matrix W (n x m) into every physical leg of
// the grid-value train S, orthogonalize right-left, and normalize by scaling
// the first core. Cores are rescaled before orthogonalization so extreme
// dynamic ranges (Boltzmann factors) cannot overflow the norm accumulation.
CoefficientTT build_coefficient_tt(const TensorTrain& s, const Matrix& w, Basis basis);

// State of the autoregressive pass: v is the left-tail contraction after
// fixing coordinates 1..k-1 (v_0 = [1]).
struct ConditionalState {
  RowVector v;
  Index k = 0;
};

// Univariate marginal f_k(x) = phi(x)^T B B^T phi(x) = ||B^T phi(x)||^2 with
// B the core-k contraction against the state vector. PSD by construction.
class Conditional {
 public:
  Conditional(Matrix b, const Basis* basis) : b_(std::move(b)), basis_(basis) {}

  double eval(double x) const;
  Vector eval_grid(const Vector& points) const;
  // A_k = B B^T (n x n); exposed for diagnostics and tests.
  Matrix second_moment_matrix() const { return b_ * b_.transpose(); }
  const Matrix& b() const { return b_; }

  // advance the state through the sampled coordinate
  RowVector advance(double x_star) const;

 private:
  Matrix b_;  // n x r_k
  const Basis* basis_;
};

Conditional next_conditional(const CoefficientTT& c, const ConditionalState& state);

// Inverse-CDF draw from a nonnegative grid-sampled density: trapezoidal CDF
// on `grid_size` uniform points over [-1,1], linear quantile interpolation.
double inverse_cdf_sample(const Vector& f_grid, double u);

struct SampleBatch {
  Matrix points;        // count x d
  Vector log_density;   // log p0 per sample
  std::uint64_t seed = 0;

  Index count() const { return points.rows(); }
  Index dims() const { return points.cols(); }
};

// Exact sampling from p0 = q0^2. Deterministic given (seed); each sample uses
// an independent stream derived from (seed, sample index), so any worker
// partition yields identical output.
SampleBatch draw_samples(const CoefficientTT& c, Index count, std::uint64_t seed,
                         Index grid_size = 1024, int threads = 1);

// CSV with header x1,...,xd,logp0
void save_samples_csv(const SampleBatch& batch, const std::string& path);

}  // namespace ttvi
