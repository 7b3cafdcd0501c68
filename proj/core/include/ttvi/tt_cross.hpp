#pragma once

#include "ttvi/common.hpp"
#include "ttvi/tensor_train.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ttvi {

using MultiIndex = std::vector<int>;

// Black-box access to a tensor of grid values T[j_1, ..., j_d]. The callable
// must be deterministic and safe for concurrent invocation; eval_count tallies
// every query.
class GridOracle {
 public:
  GridOracle(Index dims, Index grid_size, std::function<double(std::span<const int>)> fn)
      : dims_(dims), grid_size_(grid_size), fn_(std::move(fn)) {}

  Index dims() const { return dims_; }
  Index grid_size() const { return grid_size_; }
  long long eval_count() const { return count_.load(std::memory_order_relaxed); }

  double operator()(std::span<const int> idx) const {
    count_.fetch_add(1, std::memory_order_relaxed);
    const double v = fn_(idx);
    if (!std::isfinite(v)) {
      std::string where;
      for (int j : idx) where += std::to_string(j) + ",";
      throw DataError("oracle returned non-finite value at index (" + where + ")");
    }
    return v;
  }

 private:
  Index dims_;
  Index grid_size_;
  std::function<double(std::span<const int>)> fn_;
  mutable std::atomic<long long> count_{0};
};

struct CrossConfig {
  Index max_rank = 2;
  int n_sweeps = 4;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  bool record_fibers = false;  // keep the final sweep's fiber set for tests
};

struct FiberRecord {
  MultiIndex index;
  double value = 0.0;
};

struct CrossResult {
  TensorTrain tt;
  long long oracle_evals = 0;
  int sweeps_run = 0;
  bool converged = false;
  bool rank_cap_hit = false;
  std::vector<Index> ranks;            // bond ranks r_0..r_d
  std::vector<FiberRecord> fibers;     // populated when record_fibers is set
};

// Quasi-dominant row selection: returns r row indices (ascending) such that
// all entries of A * Ahat^{-1} are bounded by 1 + delta. Initialization by
// column-pivoted QR of A^T, refinement by row swaps (lowest index wins ties).
// Throws DegeneracyError when the pivoted submatrix is numerically singular
// (smallest singular value below 1e-12 relative to the matrix scale).
std::vector<Index> maxvol(const Matrix& a, double delta = 0.01);

// Alternating one-site cross interpolation with maxvol pivot selection and
// fixed target rank. Sweeps stop after cfg.n_sweeps or once the max relative
// change on a fixed random probe set of 1000 entries drops below cfg.rel_tol.
CrossResult cross_approximate(const GridOracle& oracle, const CrossConfig& cfg);

// Rank-adaptive variant: per-bond ranks grow each sweep until the l2-relative
// residual on the freshly sampled fibers of every site is <= rel_tol, or the
// rank cap is reached (warning flag set, best result returned).
CrossResult reference_cross(const GridOracle& oracle, double rel_tol = 1e-10,
                            Index rank_cap = 200, std::uint64_t seed = 0, int max_sweeps = 40);

}  // namespace ttvi
