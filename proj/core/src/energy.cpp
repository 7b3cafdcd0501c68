#include "ttvi/energy.hpp"

#include <cmath>

namespace ttvi {

DomainMap::DomainMap(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw DimensionError("domain map bounds size mismatch");
  scale_.resize(lo_.size());
  shift_.resize(lo_.size());
  for (Index k = 0; k < lo_.size(); ++k) {
    if (!(hi_[k] > lo_[k])) throw ConfigError("domain box must have positive extent");
    scale_[k] = 0.5 * (hi_[k] - lo_[k]);
    shift_[k] = 0.5 * (hi_[k] + lo_[k]);
    log_jacobian_ += std::log(scale_[k]);
  }
}

Vector DomainMap::to_cube(const Vector& x) const {
  if (x.size() != dims()) throw DimensionError("to_cube: dimension mismatch");
  Vector z(dims());
  for (Index k = 0; k < dims(); ++k) {
    if (x[k] < lo_[k] - 1e-9 || x[k] > hi_[k] + 1e-9) {
      throw DomainError("to_cube: point outside native box at coordinate " + std::to_string(k));
    }
    z[k] = (x[k] - shift_[k]) / scale_[k];
  }
  return z;
}

Vector DomainMap::from_cube(const Vector& z) const {
  if (z.size() != dims()) throw DimensionError("from_cube: dimension mismatch");
  return (z.array() * scale_.array() + shift_.array()).matrix();
}

double box_wall_energy(const Vector& x, const DomainMap& map) {
  double acc = 0.0;
  for (Index k = 0; k < x.size(); ++k) {
    const double over = std::max(0.0, x[k] - map.hi()[k]) + std::max(0.0, map.lo()[k] - x[k]);
    acc += over * over;
  }
  return kBoxWallStiffness * acc;
}

void add_box_wall_gradient(const Vector& x, const DomainMap& map, Vector& grad) {
  for (Index k = 0; k < x.size(); ++k) {
    if (x[k] > map.hi()[k]) {
      grad[k] += 2.0 * kBoxWallStiffness * (x[k] - map.hi()[k]);
    } else if (x[k] < map.lo()[k]) {
      grad[k] -= 2.0 * kBoxWallStiffness * (map.lo()[k] - x[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// Gaussian mixture
// ---------------------------------------------------------------------------
MixtureEnergy::MixtureEnergy(GaussianMixtureSpec spec)
    : spec_(spec),
      map_(Vector::Constant(spec.d, -spec.box_half_width),
           Vector::Constant(spec.d, spec.box_half_width)) {
  if (spec_.d < 2) throw ConfigError("mixture needs d >= 2");
  const Index d = spec_.d;
  const double kVar = 0.4;
  auto mean_at = [&](double a, double b) {
    Vector mu = Vector::Zero(d);
    mu[d - 2] = a;
    mu[d - 1] = b;
    return mu;
  };
  means_ = {mean_at(2, 2), mean_at(2, -2), mean_at(-2, 2), mean_at(-2, -2), mean_at(0, 0)};
  rho_ = {19.0 / 20.0, -19.0 / 20.0, -19.0 / 20.0, 19.0 / 20.0, 0.0};
  log_norm_.resize(5);
  for (int i = 0; i < 5; ++i) {
    // det(0.4 Sigma_i) = 0.4^d (1 - rho^2)
    const double logdet = static_cast<double>(d) * std::log(kVar) + std::log1p(-rho_[i] * rho_[i]);
    log_norm_[i] = -0.5 * (static_cast<double>(d) * std::log(2.0 * M_PI) + logdet);
  }
}

Vector MixtureEnergy::component_log_densities(const Vector& x) const {
  const Index d = spec_.d;
  const double kVar = 0.4;
  Vector out(5);
  for (int i = 0; i < 5; ++i) {
    const Vector r = x - means_[i];
    // quadratic form of (0.4 Sigma_i)^{-1}: identity block on the leading
    // d-2 coordinates, 2x2 correlated block on the trailing two
    double quad = r.head(d - 2).squaredNorm() / kVar;
    const double a = r[d - 2], b = r[d - 1], rho = rho_[i];
    quad += (a * a - 2.0 * rho * a * b + b * b) / (kVar * (1.0 - rho * rho));
    out[i] = -0.5 * quad + log_norm_[i];
  }
  return out;
}

double MixtureEnergy::energy(const Vector& x) const {
  if (x.size() != spec_.d) throw DimensionError("mixture energy: dimension mismatch");
  const Vector lg = component_log_densities(x);
  const double mx = lg.maxCoeff();
  double s = 0.0;
  for (int i = 0; i < 5; ++i) s += std::exp(lg[i] - mx);
  return -(mx + std::log(s / 5.0)) + box_wall_energy(x, map_);
}

Vector MixtureEnergy::gradient(const Vector& x) const {
  const Index d = spec_.d;
  const double kVar = 0.4;
  const Vector lg = component_log_densities(x);
  const double mx = lg.maxCoeff();
  Vector w(5);
  double s = 0.0;
  for (int i = 0; i < 5; ++i) {
    w[i] = std::exp(lg[i] - mx);
    s += w[i];
  }
  w /= s;  // posterior weights
  Vector g = Vector::Zero(d);
  for (int i = 0; i < 5; ++i) {
    const Vector r = x - means_[i];
    Vector gi(d);
    gi.head(d - 2) = r.head(d - 2) / kVar;
    const double a = r[d - 2], b = r[d - 1], rho = rho_[i];
    const double den = kVar * (1.0 - rho * rho);
    gi[d - 2] = (a - rho * b) / den;
    gi[d - 1] = (b - rho * a) / den;
    g += w[i] * gi;  // grad U = sum_i w_i Sigma_i^{-1} (x - mu_i)
  }
  add_box_wall_gradient(x, map_, g);
  return g;
}

// ---------------------------------------------------------------------------
// 1-D Ginzburg-Landau
// ---------------------------------------------------------------------------
Gl1dEnergy::Gl1dEnergy(Gl1dSpec spec)
    : spec_(spec),
      map_(Vector::Constant(spec.d, -spec.box_half_width),
           Vector::Constant(spec.d, spec.box_half_width)) {
  if (spec_.d < 1 || spec_.h <= 0.0 || spec_.delta <= 0.0 || spec_.beta < 0.0) {
    throw ConfigError("invalid gl1d spec");
  }
}

double Gl1dEnergy::lattice_energy(const Vector& u) const {
  if (u.size() != spec_.d) throw DimensionError("gl1d energy: dimension mismatch");
  const Index d = spec_.d;
  const double ch = spec_.delta / (2.0 * spec_.h * spec_.h);
  const double cq = 1.0 / (4.0 * spec_.delta);
  double grad = 0.0, quart = 0.0;
  double prev = 0.0;  // u_0 = 0
  for (Index i = 0; i < d; ++i) {
    const double di = u[i] - prev;
    grad += di * di;
    const double w = 1.0 - u[i] * u[i];
    quart += w * w;
    prev = u[i];
  }
  grad += prev * prev;  // edge to u_{d+1} = 0
  return -ch * grad + cq * quart;
}

double Gl1dEnergy::energy(const Vector& u) const {
  return spec_.beta * lattice_energy(u) + box_wall_energy(u, map_);
}

Vector Gl1dEnergy::gradient(const Vector& u) const {
  if (u.size() != spec_.d) throw DimensionError("gl1d gradient: dimension mismatch");
  const Index d = spec_.d;
  const double ch = spec_.delta / (spec_.h * spec_.h);
  Vector g(d);
  for (Index i = 0; i < d; ++i) {
    const double left = (i == 0) ? 0.0 : u[i - 1];
    const double right = (i == d - 1) ? 0.0 : u[i + 1];
    const double coupling = -ch * (2.0 * u[i] - left - right);
    const double quart = -(u[i] / spec_.delta) * (1.0 - u[i] * u[i]);
    g[i] = spec_.beta * (coupling + quart);
  }
  add_box_wall_gradient(u, map_, g);
  return g;
}

// ---------------------------------------------------------------------------
// 2-D Ginzburg-Landau
// ---------------------------------------------------------------------------
Gl2dEnergy::Gl2dEnergy(Gl2dSpec spec)
    : spec_(spec),
      map_(Vector::Constant(spec.side * spec.side, -spec.box_half_width),
           Vector::Constant(spec.side * spec.side, spec.box_half_width)) {
  if (spec_.side < 1 || spec_.h <= 0.0 || spec_.delta <= 0.0 || spec_.beta < 0.0) {
    throw ConfigError("invalid gl2d spec");
  }
}

double Gl2dEnergy::boundary(Index i, Index j) const {
  const Index L = spec_.side;
  if (i == 0 || i == L + 1) return 1.0;   // rows take precedence at corners
  if (j == 0 || j == L + 1) return -1.0;
  throw DimensionError("boundary queried at interior point");
}

double Gl2dEnergy::padded(const Vector& u, Index i, Index j) const {
  const Index L = spec_.side;
  if (i >= 1 && i <= L && j >= 1 && j <= L) return u[(i - 1) * L + (j - 1)];
  return boundary(i, j);
}

double Gl2dEnergy::lattice_energy(const Vector& u) const {
  const Index L = spec_.side;
  if (u.size() != L * L) throw DimensionError("gl2d energy: field size must be L^2");
  const double ch = spec_.delta / (2.0 * spec_.h * spec_.h);
  const double cq = 1.0 / (4.0 * spec_.delta);
  double grad = 0.0;
  for (Index i = 1; i <= L + 1; ++i) {
    for (Index j = 1; j <= L + 1; ++j) {
      const double dv = padded(u, i, j) - padded(u, i - 1, j);
      const double dh = padded(u, i, j) - padded(u, i, j - 1);
      grad += dv * dv + dh * dh;
    }
  }
  double quart = 0.0;
  for (Index s = 0; s < L * L; ++s) {
    const double w = 1.0 - u[s] * u[s];
    quart += w * w;
  }
  return ch * grad + cq * quart;
}

double Gl2dEnergy::energy(const Vector& u) const {
  return spec_.beta * lattice_energy(u) + box_wall_energy(u, map_);
}

Vector Gl2dEnergy::gradient(const Vector& u) const {
  const Index L = spec_.side;
  if (u.size() != L * L) throw DimensionError("gl2d gradient: field size must be L^2");
  const double ch = spec_.delta / (spec_.h * spec_.h);
  Vector g = Vector::Zero(L * L);
  for (Index i = 1; i <= L; ++i) {
    for (Index j = 1; j <= L; ++j) {
      const double c = padded(u, i, j);
      double acc = 0.0;
      // every edge incident to (i,j) contributes (c - neighbor)
      acc += (c - padded(u, i - 1, j)) + (c - padded(u, i + 1, j));
      acc += (c - padded(u, i, j - 1)) + (c - padded(u, i, j + 1));
      const double quart = -(c / spec_.delta) * (1.0 - c * c);
      g[(i - 1) * L + (j - 1)] = spec_.beta * (ch * acc + quart);
    }
  }
  add_box_wall_gradient(u, map_, g);
  return g;
}

}  // namespace ttvi
