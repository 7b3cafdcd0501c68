#include "ttvi/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace ttvi {

CoefficientTT::CoefficientTT(TensorTrain ortho_unit_norm, Basis basis)
    : tt_(std::move(ortho_unit_norm)), basis_(std::move(basis)) {
  if (tt_.ortho() != Ortho::right_left) {
    throw DimensionError("coefficient train must be right-left orthogonal");
  }
  for (Index k = 0; k < tt_.dims(); ++k) {
    if (tt_.phys_dim(k) != basis_.size()) {
      throw DimensionError("coefficient train physical size must match basis size");
    }
  }
}

double CoefficientTT::q0_eval(const Vector& x) const {
  if (x.size() != dims()) throw DimensionError("point dimension mismatch");
  for (Index k = 0; k < dims(); ++k) {
    if (std::abs(x[k]) > 1.0 + 1e-12) {
      throw DomainError("q0_eval: point outside [-1,1]^d at coordinate " + std::to_string(k));
    }
  }
  RowVector v = RowVector::Ones(1);
  for (Index k = 0; k < dims(); ++k) {
    const Vector phi = basis_.eval(x[k]);
    const TtCore& core = tt_.core(k);
    // B = <v, core> (n x r), then v <- phi^T B
    RowVector folded = v * core.left_unfold();  // 1 x (n*r)
    Eigen::Map<const RowMatrix> b(folded.data(), core.phys, core.right);
    v = phi.transpose() * b;
  }
  return v[0];
}

double CoefficientTT::log_density(const Vector& x) const {
  const double q = q0_eval(x);
  return 2.0 * std::log(std::abs(q));
}

CoefficientTT build_coefficient_tt(const TensorTrain& s, const Matrix& w, Basis basis) {
  if (w.rows() != basis.size()) throw DimensionError("weight matrix rows must equal basis size");
  const Index n = w.rows(), m = w.cols();
  std::vector<TtCore> cores;
  cores.reserve(s.dims());
  for (Index k = 0; k < s.dims(); ++k) {
    const TtCore& a = s.core(k);
    if (a.phys != m) throw DimensionError("grid train physical size must match quadrature size");
    TtCore b(a.left, n, a.right);
    for (Index al = 0; al < a.left; ++al) {
      Eigen::Map<const RowMatrix> ablock(a.data.data() + al * a.phys * a.right, a.phys, a.right);
      Eigen::Map<RowMatrix> bblock(b.data.data() + al * n * a.right, n, a.right);
      bblock.noalias() = w * ablock;
    }
    // per-core rescale keeps the norm accumulation inside double range; the
    // normalized train is invariant to it
    const double scale = b.data.cwiseAbs().maxCoeff();
    if (scale == 0.0) throw DegeneracyError("coefficient train is identically zero");
    b.data /= scale;
    cores.push_back(std::move(b));
  }
  TensorTrain ortho = right_left_orthogonalize(TensorTrain(std::move(cores)));
  const double norm = ortho.core(0).data.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegeneracyError("degenerate density: coefficient norm is zero or non-finite");
  }
  TensorTrain unit = scale_first_core(ortho, 1.0 / norm);
  return CoefficientTT(std::move(unit), std::move(basis));
}

double Conditional::eval(double x) const {
  const Vector phi = legendre_eval(b_.rows(), x);
  return (b_.transpose() * phi).squaredNorm();
}

Vector Conditional::eval_grid(const Vector& points) const {
  Vector out(points.size());
  for (Index g = 0; g < points.size(); ++g) out[g] = eval(points[g]);
  return out;
}

RowVector Conditional::advance(double x_star) const {
  const Vector phi = legendre_eval(b_.rows(), x_star);
  return phi.transpose() * b_;
}

Conditional next_conditional(const CoefficientTT& c, const ConditionalState& state) {
  const TtCore& core = c.train().core(state.k);
  if (state.v.size() != core.left) throw DimensionError("conditional state rank mismatch");
  RowVector folded = state.v * core.left_unfold();
  Matrix b = Eigen::Map<const RowMatrix>(folded.data(), core.phys, core.right);
  return Conditional(std::move(b), &c.basis());
}

double inverse_cdf_sample(const Vector& f_grid, double u) {
  const Index g = f_grid.size();
  if (g < 2) throw ConfigError("quantile grid needs at least 2 points");
  if (u < 0.0 || u > 1.0) throw DomainError("uniform variate outside [0,1]");
  const double dx = 2.0 / static_cast<double>(g - 1);
  Vector f = f_grid.cwiseMax(0.0);  // clamp roundoff-negative lobes
  // trapezoidal CDF at the grid points
  Vector cdf(g);
  cdf[0] = 0.0;
  for (Index i = 1; i < g; ++i) cdf[i] = cdf[i - 1] + 0.5 * (f[i - 1] + f[i]) * dx;
  const double total = cdf[g - 1];
  if (!(total > 1e-300)) throw DegeneracyError("degenerate conditional: total mass underflow");
  cdf /= total;
  const double* lo = std::upper_bound(cdf.data(), cdf.data() + g, u);
  Index hi = std::min<Index>(g - 1, static_cast<Index>(lo - cdf.data()));
  if (hi == 0) hi = 1;
  const Index lo_i = hi - 1;
  const double span = cdf[hi] - cdf[lo_i];
  const double frac = span > 0.0 ? (u - cdf[lo_i]) / span : 0.0;
  const double x = -1.0 + dx * (static_cast<double>(lo_i) + frac);
  return std::min(1.0, std::max(-1.0, x));
}

namespace {

void draw_range(const CoefficientTT& c, const Vector& grid_points, const Matrix& phi_grid,
                std::uint64_t seed, Index begin, Index end, Matrix& points, Vector& logp) {
  const Index d = c.dims();
  for (Index s = begin; s < end; ++s) {
    Rng rng(mix_seed(seed, 0xa11ce + static_cast<std::uint64_t>(s)));
    ConditionalState state{RowVector::Ones(1), 0};
    for (Index k = 0; k < d; ++k) {
      const TtCore& core = c.train().core(k);
      RowVector folded = state.v * core.left_unfold();
      Eigen::Map<const RowMatrix> b(folded.data(), core.phys, core.right);
      // f on the quantile grid: rowwise squared norms of Phi^T B
      Matrix proj = phi_grid.transpose() * b;  // G x r
      Vector f = proj.rowwise().squaredNorm();
      double x_star;
      try {
        x_star = inverse_cdf_sample(f, rng.uniform());
      } catch (const DegeneracyError& e) {
        throw DegeneracyError(std::string(e.what()) + " (sample " + std::to_string(s) +
                              ", coordinate " + std::to_string(k) + ")");
      }
      points(s, k) = x_star;
      const Vector phi = c.basis().eval(x_star);
      state.v = phi.transpose() * b;
      state.k = k + 1;
    }
    logp[s] = c.log_density(points.row(s).transpose());
  }
}

}  // namespace

SampleBatch draw_samples(const CoefficientTT& c, Index count, std::uint64_t seed,
                         Index grid_size, int threads) {
  if (count < 0) throw ConfigError("sample count must be nonnegative");
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(count, c.dims());
  batch.log_density.resize(count);
  if (count == 0) return batch;

  Vector grid_points(grid_size);
  for (Index g = 0; g < grid_size; ++g) {
    grid_points[g] = -1.0 + 2.0 * static_cast<double>(g) / static_cast<double>(grid_size - 1);
  }
  const Matrix phi_grid = c.basis().eval_many(grid_points);  // n x G

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    draw_range(c, grid_points, phi_grid, seed, 0, count, batch.points, batch.log_density);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const Index chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const Index b = w * chunk, e = std::min(count, b + chunk);
      pool.emplace_back([&, w, b, e] {
        try {
          draw_range(c, grid_points, phi_grid, seed, b, e, batch.points, batch.log_density);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }
  return batch;
}

void save_samples_csv(const SampleBatch& batch, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  for (Index k = 0; k < batch.dims(); ++k) f << "x" << (k + 1) << ",";
  f << "logp0\n";
  f.precision(17);
  for (Index s = 0; s < batch.count(); ++s) {
    for (Index k = 0; k < batch.dims(); ++k) f << batch.points(s, k) << ",";
    f << batch.log_density[s] << "\n";
  }
  if (!f) throw DataError("failed writing samples csv");
}

}  // namespace ttvi
