#include "ttvi/basis.hpp"

#include <cmath>

namespace ttvi {

Basis::Basis(Index n) : n_(n) {
  if (n < 1) throw ConfigError("basis size must be >= 1");
}

Vector legendre_eval(Index n, double x) {
  if (std::abs(x) > 1.0 + 1e-12) {
    throw DomainError("legendre_eval: point outside [-1, 1]: x = " + std::to_string(x));
  }
  x = std::min(1.0, std::max(-1.0, x));
  Vector out(n);
  double pm1 = 1.0;  // P_0
  out[0] = std::sqrt(0.5);
  if (n == 1) return out;
  double p = x;  // P_1
  out[1] = std::sqrt(1.5) * p;
  for (Index k = 2; k < n; ++k) {
    const double j = static_cast<double>(k - 1);
    const double pnext = ((2.0 * j + 1.0) * x * p - j * pm1) / (j + 1.0);
    pm1 = p;
    p = pnext;
    out[k] = std::sqrt((2.0 * static_cast<double>(k) + 1.0) / 2.0) * p;
  }
  return out;
}

Vector Basis::eval(double x) const { return legendre_eval(n_, x); }

Matrix Basis::eval_many(const Vector& points) const {
  Matrix out(n_, points.size());
  for (Index j = 0; j < points.size(); ++j) out.col(j) = eval(points[j]);
  return out;
}

Quadrature gauss_legendre(Index m) {
  if (m < 1) throw ConfigError("quadrature size must be >= 1");
  Quadrature q;
  q.nodes.resize(m);
  q.weights.resize(m);
  const double md = static_cast<double>(m);
  // Newton on P_m from Chebyshev initial guesses; nodes are symmetric, so
  // compute the lower half and mirror for exact symmetry.
  for (Index i = 0; i < (m + 1) / 2; ++i) {
    double x = -std::cos(M_PI * (static_cast<double>(i) + 0.75) / (md + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double pm1 = 1.0, p = x;
      for (Index k = 2; k <= m; ++k) {
        const double j = static_cast<double>(k - 1);
        const double pnext = ((2.0 * j + 1.0) * x * p - j * pm1) / (j + 1.0);
        pm1 = p;
        p = pnext;
      }
      if (m == 1) {
        p = x;
        pm1 = 1.0;
      }
      dp = md * (x * p - pm1) / (x * x - 1.0);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-14) break;
    }
    // one clean-up evaluation of P'_m at the converged node
    {
      double pm1 = 1.0, p = x;
      for (Index k = 2; k <= m; ++k) {
        const double j = static_cast<double>(k - 1);
        const double pnext = ((2.0 * j + 1.0) * x * p - j * pm1) / (j + 1.0);
        pm1 = p;
        p = pnext;
      }
      if (m == 1) {
        p = x;
        pm1 = 1.0;
      }
      dp = md * (x * p - pm1) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    q.nodes[i] = x;
    q.weights[i] = w;
    q.nodes[m - 1 - i] = -x;
    q.weights[m - 1 - i] = w;
  }
  if (m % 2 == 1) {
    q.nodes[m / 2] = 0.0;
    // P'_m(0) for odd m via recurrence on derivative-free formula
    double pm1 = 1.0, p = 0.0;
    for (Index k = 2; k <= m; ++k) {
      const double j = static_cast<double>(k - 1);
      const double pnext = (-j * pm1) / (j + 1.0);
      pm1 = p;
      p = pnext;
    }
    const double dp0 = md * (0.0 - pm1) / (0.0 - 1.0);
    q.weights[m / 2] = 2.0 / (dp0 * dp0);
  }
  return q;
}

Matrix weight_matrix(const Basis& basis, const Quadrature& quad) {
  Matrix w(basis.size(), quad.size());
  for (Index j = 0; j < quad.size(); ++j) {
    w.col(j) = basis.eval(quad.nodes[j]) * quad.weights[j];
  }
  return w;
}

}  // namespace ttvi
