#include "ttvi/tensor_train.hpp"

#include <Eigen/QR>

#include <cmath>
#include <fstream>
#include <ostream>

namespace ttvi {

TensorTrain::TensorTrain(std::vector<TtCore> cores, Ortho ortho)
    : cores_(std::move(cores)), ortho_(ortho) {
  validate();
}

void TensorTrain::validate() const {
  if (cores_.empty()) throw DimensionError("tensor train must have at least one core");
  if (cores_.front().left != 1 || cores_.back().right != 1) {
    throw DimensionError("boundary ranks must be 1");
  }
  for (std::size_t k = 0; k < cores_.size(); ++k) {
    const auto& c = cores_[k];
    if (c.left < 1 || c.phys < 1 || c.right < 1) {
      throw DimensionError("core dimensions must be >= 1");
    }
    if (c.data.size() != c.left * c.phys * c.right) {
      throw DimensionError("core data size mismatch");
    }
    if (k + 1 < cores_.size() && c.right != cores_[k + 1].left) {
      throw DimensionError("adjacent bond dimensions disagree at bond " + std::to_string(k + 1));
    }
  }
}

Index TensorTrain::max_rank() const {
  Index r = 1;
  for (const auto& c : cores_) r = std::max(r, c.right);
  return r;
}

double TensorTrain::eval(std::span<const int> idx) const {
  if (static_cast<Index>(idx.size()) != dims()) {
    throw BoundsError("index length does not match train dimension");
  }
  for (Index k = 0; k < dims(); ++k) {
    if (idx[k] < 0 || idx[k] >= cores_[k].phys) {
      throw BoundsError("index out of range at mode " + std::to_string(k));
    }
  }
  RowVector v = cores_[0].slice(idx[0]);  // 1 x r_1
  for (Index k = 1; k < dims(); ++k) {
    v = v * cores_[k].slice(idx[k]);
  }
  return v[0];
}

TensorTrain right_left_orthogonalize(const TensorTrain& tt) {
  std::vector<TtCore> cores = tt.cores();
  const Index d = static_cast<Index>(cores.size());
  for (Index k = d - 1; k >= 1; --k) {
    TtCore& c = cores[k];
    // LQ of the left unfolding via QR of its transpose.
    Matrix ut = c.left_unfold().transpose();  // (phys*right) x left
    const Index rank = std::min(c.left, c.phys * c.right);
    Eigen::HouseholderQR<Matrix> qr(ut);
    Matrix thin_q = qr.householderQ() * Matrix::Identity(ut.rows(), rank);
    Matrix rfac = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();  // rank x left

    TtCore q_core(rank, c.phys, c.right);
    q_core.left_unfold() = thin_q.transpose();
    const Index old_left = c.left;
    cores[k] = std::move(q_core);

    // absorb L = rfac^T into the right leg of the predecessor
    TtCore& prev = cores[k - 1];
    Matrix folded = prev.right_unfold() * rfac.transpose();  // (left*phys) x rank
    TtCore new_prev(prev.left, prev.phys, rank);
    new_prev.right_unfold() = folded;
    (void)old_left;
    cores[k - 1] = std::move(new_prev);
  }
  for (const auto& c : cores) {
    if (!c.data.allFinite()) throw NumericError("orthogonalization produced non-finite values");
  }
  return TensorTrain(std::move(cores), Ortho::right_left);
}

double frobenius_norm(const TensorTrain& tt) {
  Matrix g = Matrix::Ones(1, 1);
  for (Index k = 0; k < tt.dims(); ++k) {
    const TtCore& c = tt.core(k);
    Matrix next = Matrix::Zero(c.right, c.right);
    for (Index i = 0; i < c.phys; ++i) {
      auto s = c.slice(i);
      next.noalias() += s.transpose() * g * s;
    }
    g = std::move(next);
  }
  return std::sqrt(std::max(0.0, g(0, 0)));
}

TensorTrain scale_first_core(const TensorTrain& tt, double c) {
  if (!std::isfinite(c)) throw NumericError("scale factor must be finite");
  std::vector<TtCore> cores = tt.cores();
  cores[0].data *= c;
  return TensorTrain(std::move(cores), tt.ortho());
}

double gram_residual(const TtCore& core) {
  auto u = core.left_unfold();
  Matrix gram = u * u.transpose();
  return (gram - Matrix::Identity(core.left, core.left)).cwiseAbs().maxCoeff();
}

// --------------------------------------------------------------------------
// serialization
// --------------------------------------------------------------------------
namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("truncated tensor train file");
  return v;
}

}  // namespace

void save_tensor_train(const TensorTrain& tt, std::ostream& os) {
  os.write("TTV1", 4);
  write_u64(os, static_cast<std::uint64_t>(tt.dims()));
  for (Index k = 0; k < tt.dims(); ++k) {
    const auto& c = tt.core(k);
    write_u64(os, static_cast<std::uint64_t>(c.left));
    write_u64(os, static_cast<std::uint64_t>(c.phys));
    write_u64(os, static_cast<std::uint64_t>(c.right));
  }
  for (Index k = 0; k < tt.dims(); ++k) {
    const auto& c = tt.core(k);
    os.write(reinterpret_cast<const char*>(c.data.data()),
             static_cast<std::streamsize>(sizeof(double) * c.data.size()));
  }
  if (!os) throw DataError("failed to write tensor train");
}

void save_tensor_train(const TensorTrain& tt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  save_tensor_train(tt, f);
}

TensorTrain load_tensor_train(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "TTV1") throw DataError("bad tensor train magic");
  const auto d = static_cast<Index>(read_u64(is));
  if (d < 1 || d > 1'000'000) throw DataError("implausible tensor train dimension");
  std::vector<TtCore> cores;
  cores.reserve(d);
  for (Index k = 0; k < d; ++k) {
    const auto l = static_cast<Index>(read_u64(is));
    const auto p = static_cast<Index>(read_u64(is));
    const auto r = static_cast<Index>(read_u64(is));
    cores.emplace_back(l, p, r);
  }
  for (auto& c : cores) {
    is.read(reinterpret_cast<char*>(c.data.data()),
            static_cast<std::streamsize>(sizeof(double) * c.data.size()));
    if (!is) throw DataError("truncated tensor train file");
  }
  return TensorTrain(std::move(cores));
}

TensorTrain load_tensor_train(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  return load_tensor_train(f);
}

}  // namespace ttvi
