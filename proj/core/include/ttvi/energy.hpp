#pragma once

#include "ttvi/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ttvi {

// Affine bijection between native coordinates on [a_k, b_k] and the cube
// [-1,1]^d. from_cube extends affinely outside the cube (flow outputs may
// leave it); to_cube enforces the native bounding box.
class DomainMap {
 public:
  DomainMap(Vector lo, Vector hi);

  Index dims() const { return scale_.size(); }
  double log_jacobian() const { return log_jacobian_; }  // sum_k log s_k

  Vector to_cube(const Vector& x_native) const;
  Vector from_cube(const Vector& z_cube) const;
  const Vector& scale() const { return scale_; }
  const Vector& shift() const { return shift_; }
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }

 private:
  Vector scale_, shift_;
  Vector lo_, hi_;
  double log_jacobian_ = 0.0;
};

// A target energy U on native coordinates: p(x) proportional to exp(-U(x)).
//
// Every model confines its target to the native bounding box with a stiff
// quadratic wall: U += kappa * sum_k max(0, |x_k| - b_k)^2. The truncation is
// part of the target's definition (several lattice targets have most of
// their unconstrained mass far outside any sensible box), and without it a
// trained flow legitimately migrates mass beyond the box, invalidating every
// box-referenced normalization constant. The wall vanishes identically on
// the box, so in-box energies, grid tensors and closed-form values are
// untouched.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  virtual Index dims() const = 0;
  virtual double energy(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  virtual const DomainMap& domain() const = 0;
  virtual std::string name() const = 0;
};

constexpr double kBoxWallStiffness = 5e4;

double box_wall_energy(const Vector& x, const DomainMap& map);
void add_box_wall_gradient(const Vector& x, const DomainMap& map, Vector& grad);

// ---------------------------------------------------------------------------
// Equally weighted mixture of five Gaussians N(mu_i, 0.4 * Sigma_i); the
// Sigma_i are identity except in the trailing 2x2 block where four of them
// carry +-19/20 off-diagonals. U = -log density including all normalization
// constants, evaluated by log-sum-exp.
// ---------------------------------------------------------------------------
struct GaussianMixtureSpec {
  Index d = 30;
  double box_half_width = 6.0;
};

class MixtureEnergy final : public EnergyModel {
 public:
  explicit MixtureEnergy(GaussianMixtureSpec spec);

  Index dims() const override { return spec_.d; }
  double energy(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  const DomainMap& domain() const override { return map_; }
  std::string name() const override { return "mixture"; }

  const std::vector<Vector>& means() const { return means_; }
  // per-component log N(x; mu_i, 0.4 Sigma_i); exposed for tests
  Vector component_log_densities(const Vector& x) const;

 private:
  GaussianMixtureSpec spec_;
  std::vector<Vector> means_;
  std::vector<double> rho_;       // trailing-block correlation per component
  std::vector<double> log_norm_;  // -0.5 log((2 pi)^d det(0.4 Sigma_i))
  DomainMap map_;
};

// ---------------------------------------------------------------------------
// 1-D Ginzburg-Landau chain with zero boundary values and negative coupling
// (antiferromagnetic): E = -sum (delta/2) ((u_i - u_{i-1})/h)^2
//                          + 1/(4 delta) sum (1 - u_i^2)^2.
// ---------------------------------------------------------------------------
struct Gl1dSpec {
  Index d = 35;
  double h = 1.0 / 36.0;
  double delta = 0.04;
  double beta = 6.25e-2;
  double box_half_width = 1.0;
};

class Gl1dEnergy final : public EnergyModel {
 public:
  explicit Gl1dEnergy(Gl1dSpec spec);

  Index dims() const override { return spec_.d; }
  double energy(const Vector& u) const override;   // beta * E(u)
  Vector gradient(const Vector& u) const override;
  const DomainMap& domain() const override { return map_; }
  std::string name() const override { return "gl1d"; }

  double lattice_energy(const Vector& u) const;  // E(u) without beta
  const Gl1dSpec& spec() const { return spec_; }

 private:
  Gl1dSpec spec_;
  DomainMap map_;
};

// ---------------------------------------------------------------------------
// 2-D Ginzburg-Landau field on an L x L interior lattice (d = L^2, row-major)
// with positive coupling, boundary rows fixed at +1 (top/bottom) and boundary
// columns at -1 (left/right); corners take the row value.
// ---------------------------------------------------------------------------
struct Gl2dSpec {
  Index side = 8;  // L, d = L^2
  double h = 1.0 / 9.0;
  double delta = 0.04;
  double beta = 0.2;
  double box_half_width = 2.0;
};

class Gl2dEnergy final : public EnergyModel {
 public:
  explicit Gl2dEnergy(Gl2dSpec spec);

  Index dims() const override { return spec_.side * spec_.side; }
  double energy(const Vector& u) const override;  // beta * E(u)
  Vector gradient(const Vector& u) const override;
  const DomainMap& domain() const override { return map_; }
  std::string name() const override { return "gl2d"; }

  double lattice_energy(const Vector& u) const;
  const Gl2dSpec& spec() const { return spec_; }

 private:
  Gl2dSpec spec_;
  DomainMap map_;
  // boundary value at padded lattice point (i, j), i, j in 0..L+1
  double boundary(Index i, Index j) const;
  double padded(const Vector& u, Index i, Index j) const;
};

}  // namespace ttvi
