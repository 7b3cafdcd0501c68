#pragma once

#include "ttvi/common.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ttvi {

// One order-3 tensor-train core of shape (left, phys, right), stored flat in
// row-major (left, phys, right) order so the sampler's contractions over the
// left bond are single contiguous matrix products.
struct TtCore {
  Index left = 1;
  Index phys = 1;
  Index right = 1;
  Vector data;

  TtCore() = default;
  TtCore(Index l, Index p, Index r) : left(l), phys(p), right(r), data(Vector::Zero(l * p * r)) {}

  double& at(Index a, Index i, Index b) { return data[(a * phys + i) * right + b]; }
  double at(Index a, Index i, Index b) const { return data[(a * phys + i) * right + b]; }

  // rows alpha_{k-1}, columns (i_k, alpha_k); the matricization used both by
  // orthogonalization and by the sampler's v-contraction.
  Eigen::Map<RowMatrix> left_unfold() { return {data.data(), left, phys * right}; }
  Eigen::Map<const RowMatrix> left_unfold() const { return {data.data(), left, phys * right}; }

  // rows (alpha_{k-1}, i_k), columns alpha_k.
  Eigen::Map<RowMatrix> right_unfold() { return {data.data(), left * phys, right}; }
  Eigen::Map<const RowMatrix> right_unfold() const { return {data.data(), left * phys, right}; }

  // (left x right) matrix at fixed physical index.
  Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> slice(Index i) const {
    return {data.data() + i * right, left, right, Eigen::OuterStride<>(phys * right)};
  }
};

enum class Ortho { none, right_left };

// A tensor train: ordered cores with matching bond dimensions, r_0 = r_d = 1.
// Values are immutable in spirit once built; mutating entry points return new
// trains or are clearly named.
class TensorTrain {
 public:
  TensorTrain() = default;
  explicit TensorTrain(std::vector<TtCore> cores, Ortho ortho = Ortho::none);

  Index dims() const { return static_cast<Index>(cores_.size()); }
  const TtCore& core(Index k) const { return cores_[k]; }
  TtCore& mutable_core(Index k) { return cores_[k]; }
  const std::vector<TtCore>& cores() const { return cores_; }
  Ortho ortho() const { return ortho_; }

  Index phys_dim(Index k) const { return cores_[k].phys; }
  // bond rank r_k, k = 0..d
  Index rank(Index k) const { return k == 0 ? 1 : cores_[k - 1].right; }
  Index max_rank() const;

  double eval(std::span<const int> idx) const;

  void validate() const;

 private:
  std::vector<TtCore> cores_;
  Ortho ortho_ = Ortho::none;

  friend TensorTrain right_left_orthogonalize(const TensorTrain&);
  friend TensorTrain scale_first_core(const TensorTrain&, double);
};

// Sweeps d -> 2 with one LQ (QR of the transposed left unfolding) per core;
// cores 2..d get orthonormal rows, core 1 absorbs the remainder. Represents
// the same tensor up to roundoff. O(d n r^3).
TensorTrain right_left_orthogonalize(const TensorTrain& tt);

// sqrt(sum of squared entries) by sequential two-layer contraction.
double frobenius_norm(const TensorTrain& tt);

// Multiplies every tensor entry by c; preserves the orthogonality flag.
TensorTrain scale_first_core(const TensorTrain& tt, double c);

// max-abs deviation of <Q_k[:,i,a], Q_k[:,i,a]>_{i,a} from I_{r_{k-1}} for
// core k (0-based); the right-left orthogonality residual used in tests.
double gram_residual(const TtCore& core);

// --------------------------------------------------------------------------
// Binary serialization (format "TTV1"):
//   magic "TTV1" | u64 d | d x (u64 r_{k-1}, u64 n_k, u64 r_k) |
//   core data as f64 little-endian in (left, phys, right) row-major order.
// --------------------------------------------------------------------------
void save_tensor_train(const TensorTrain& tt, std::ostream& os);
void save_tensor_train(const TensorTrain& tt, const std::string& path);
TensorTrain load_tensor_train(std::istream& is);
TensorTrain load_tensor_train(const std::string& path);

}  // namespace ttvi
