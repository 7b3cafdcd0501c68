#pragma once

#include "ttvi/common.hpp"

namespace ttvi {

// Orthonormal Legendre basis on [-1, 1]:
//   phi_k(x) = sqrt((2k - 1) / 2) * P_{k-1}(x),  k = 1..n,
// so that <phi_i, phi_j>_{L2[-1,1]} = delta_ij.
class Basis {
 public:
  explicit Basis(Index n);

  Index size() const { return n_; }

  // [phi_1(x), ..., phi_n(x)]. Throws DomainError if |x| > 1 + 1e-12.
  Vector eval(double x) const;

  // n x npts matrix of phi_i(x_j) for a vector of points.
  Matrix eval_many(const Vector& points) const;

 private:
  Index n_;
};

Vector legendre_eval(Index n, double x);

// Gauss-Legendre rule on [-1, 1]; nodes ascending, weights positive,
// exact for polynomials up to degree 2m - 1.
struct Quadrature {
  Vector nodes;
  Vector weights;

  Index size() const { return nodes.size(); }
};

Quadrature gauss_legendre(Index m);

// W[i, j] = phi_i(x_j) * w_j. For m >= n this is a discrete projector:
// W * Phi^T = I_n with Phi[i, j] = phi_i(x_j).
Matrix weight_matrix(const Basis& basis, const Quadrature& quad);

}  // namespace ttvi
