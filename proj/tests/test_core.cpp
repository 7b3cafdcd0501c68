#include "ttvi/basis.hpp"
#include "ttvi/tensor_train.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace ttvi;
using namespace ttvi::test;

TEST_SUITE_BEGIN("tt_core");

namespace {

TensorTrain ones_train(Index d, Index n) {
  std::vector<TtCore> cores;
  for (Index k = 0; k < d; ++k) {
    TtCore c(1, n, 1);
    c.data.setOnes();
    cores.push_back(std::move(c));
  }
  return TensorTrain(std::move(cores));
}

}  // namespace

TEST_CASE("eval: rank-1 product of ones") {
  const TensorTrain tt = ones_train(3, 2);
  std::vector<int> idx{1, 0, 1};
  CHECK(tt.eval(idx) == 1.0);
}

TEST_CASE("eval: degenerate single-core train returns the entry") {
  TtCore c(1, 5, 1);
  for (Index i = 0; i < 5; ++i) c.at(0, i, 0) = 0.5 * static_cast<double>(i) - 1.0;
  const TensorTrain tt({c});
  for (int i = 0; i < 5; ++i) {
    std::vector<int> idx{i};
    CHECK(tt.eval(idx) == doctest::Approx(c.at(0, i, 0)).epsilon(1e-15));
  }
}

TEST_CASE("eval agrees with independent dense contraction") {
  Rng rng(11);
  const TensorTrain tt = random_tt(rng, 3, 4, 3);
  for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
    const double want = dense_eval(tt, idx);
    CHECK(rel_err(tt.eval(idx), want) <= 1e-12);
  });
}

TEST_CASE("eval: index out of range") {
  const TensorTrain tt = ones_train(2, 3);
  std::vector<int> bad{0, 3};
  CHECK_THROWS_AS((void)tt.eval(bad), BoundsError);
  std::vector<int> neg{-1, 0};
  CHECK_THROWS_AS((void)tt.eval(neg), BoundsError);
}

TEST_CASE("eval is linear in a single core") {
  Rng rng(21);
  const TensorTrain tt = random_tt(rng, 3, 3, 2);
  TensorTrain bumped = tt;
  TtCore delta = tt.core(1);
  for (Index i = 0; i < delta.data.size(); ++i) delta.data[i] = rng.uniform(-1.0, 1.0);
  const double alpha = 0.37;
  bumped.mutable_core(1).data += alpha * delta.data;
  TensorTrain delta_only = tt;
  delta_only.mutable_core(1) = delta;
  for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
    const double lhs = bumped.eval(idx);
    const double rhs = tt.eval(idx) + alpha * delta_only.eval(idx);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  });
}

TEST_CASE("orthogonalize: preserves values and satisfies the gram identity") {
  Rng rng(33);
  const TensorTrain tt = random_tt(rng, 4, 3, 2);
  const TensorTrain ortho = right_left_orthogonalize(tt);
  CHECK(ortho.ortho() == Ortho::right_left);
  for (Index k = 1; k < ortho.dims(); ++k) {
    CHECK(gram_residual(ortho.core(k)) <= 1e-10);
  }
  for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
    CHECK(rel_err(ortho.eval(idx), dense_eval(tt, idx)) <= 1e-10);
  });
}

TEST_CASE("orthogonalize: idempotent up to gauge") {
  Rng rng(44);
  const TensorTrain once = right_left_orthogonalize(random_tt(rng, 3, 3, 2));
  const TensorTrain twice = right_left_orthogonalize(once);
  for (Index k = 1; k < twice.dims(); ++k) CHECK(gram_residual(twice.core(k)) <= 1e-12);
  for_each_index(tt_shape(once), [&](const std::vector<int>& idx) {
    CHECK(rel_err(twice.eval(idx), once.eval(idx)) <= 1e-12);
  });
}

TEST_CASE("orthogonalize: norm collapses into the first core") {
  Rng rng(55);
  const TensorTrain tt = random_tt(rng, 4, 3, 3);
  const TensorTrain ortho = right_left_orthogonalize(tt);
  CHECK(rel_err(ortho.core(0).data.norm(), frobenius_norm(tt)) <= 1e-12);
}

TEST_CASE("orthogonalization preserves values over 100 random trains") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.below(3));
    const Index n = 2 + static_cast<Index>(rng.below(4));
    const Index r = 1 + static_cast<Index>(rng.below(4));
    const TensorTrain tt = random_tt(rng, d, n, r);
    const TensorTrain ortho = right_left_orthogonalize(tt);
    for (Index k = 1; k < ortho.dims(); ++k) CHECK(gram_residual(ortho.core(k)) <= 1e-10);
    double max_err = 0.0;
    for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
      max_err = std::max(max_err, rel_err(ortho.eval(idx), dense_eval(tt, idx)));
    });
    CHECK(max_err <= 1e-10);
  }
}

TEST_CASE("frobenius norm: zero, rank-1 unit, random vs dense") {
  TensorTrain zero = ones_train(3, 2);
  for (Index k = 0; k < 3; ++k) zero.mutable_core(k).data.setZero();
  CHECK(frobenius_norm(zero) == 0.0);

  // outer product of unit vectors
  TtCore a(1, 2, 1), b(1, 2, 1);
  a.at(0, 0, 0) = 1.0;
  a.at(0, 1, 0) = 0.0;
  b.at(0, 0, 0) = std::sqrt(0.5);
  b.at(0, 1, 0) = std::sqrt(0.5);
  CHECK(frobenius_norm(TensorTrain({a, b})) == doctest::Approx(1.0).epsilon(1e-14));

  Rng rng(66);
  const TensorTrain tt = random_tt(rng, 3, 4, 3);
  double ss = 0.0;
  for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
    const double v = dense_eval(tt, idx);
    ss += v * v;
  });
  CHECK(rel_err(frobenius_norm(tt), std::sqrt(ss)) <= 1e-12);
}

TEST_CASE("scale_first_core") {
  Rng rng(77);
  const TensorTrain tt = random_tt(rng, 3, 3, 2);

  const TensorTrain same = scale_first_core(tt, 1.0);
  for (Index k = 0; k < tt.dims(); ++k) {
    CHECK(same.core(k).data == tt.core(k).data);  // identical tensor, bitwise
  }

  const TensorTrain zero = scale_first_core(tt, 0.0);
  CHECK(frobenius_norm(zero) == 0.0);

  // scaling by two doubles every entry exactly (power-of-two scaling commutes
  // with every floating-point sum), so both evaluation routes double exactly
  const TensorTrain doubled = scale_first_core(tt, 2.0);
  for_each_index(tt_shape(tt), [&](const std::vector<int>& idx) {
    CHECK(doubled.eval(idx) == 2.0 * tt.eval(idx));
    CHECK(dense_eval(doubled, idx) == 2.0 * dense_eval(tt, idx));
  });

  const double c = -1.7;
  CHECK(rel_err(frobenius_norm(scale_first_core(tt, c)), std::abs(c) * frobenius_norm(tt)) <=
        1e-12);
  CHECK(scale_first_core(right_left_orthogonalize(tt), c).ortho() == Ortho::right_left);
  CHECK_THROWS_AS((void)scale_first_core(tt, std::nan("")), NumericError);
}

TEST_CASE("serialization round trip is bit exact") {
  Rng rng(88);
  const TensorTrain tt = random_tt(rng, 3, 4, 2);
  std::stringstream ss;
  save_tensor_train(tt, ss);

  // header layout: magic, d, then d triples of u64
  const std::string bytes = ss.str();
  REQUIRE(bytes.substr(0, 4) == "TTV1");
  std::uint64_t d = 0;
  std::memcpy(&d, bytes.data() + 4, 8);
  CHECK(d == 3);

  const TensorTrain back = load_tensor_train(ss);
  REQUIRE(back.dims() == tt.dims());
  for (Index k = 0; k < tt.dims(); ++k) {
    CHECK(back.core(k).left == tt.core(k).left);
    CHECK(back.core(k).phys == tt.core(k).phys);
    CHECK(back.core(k).right == tt.core(k).right);
    CHECK(back.core(k).data == tt.core(k).data);
  }
}

TEST_CASE("invalid trains are rejected") {
  TtCore a(1, 2, 3), b(2, 2, 1);  // bond mismatch 3 vs 2
  CHECK_THROWS_AS(TensorTrain({a, b}), DimensionError);
  TtCore c(2, 2, 1);  // left boundary rank != 1
  CHECK_THROWS_AS(TensorTrain({c}), DimensionError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("basis_quad");

TEST_CASE("legendre endpoint and constant values") {
  const Vector one = legendre_eval(1, 0.31);
  CHECK(one[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));

  const Vector at1 = legendre_eval(3, 1.0);
  CHECK(at1[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
  CHECK(at1[1] == doctest::Approx(std::sqrt(1.5)).epsilon(1e-14));
  CHECK(at1[2] == doctest::Approx(std::sqrt(2.5)).epsilon(1e-14));

  CHECK_THROWS_AS((void)legendre_eval(3, 1.1), DomainError);
}

TEST_CASE("discrete orthonormality via quadrature") {
  const Index n = 8, m = 20;
  const Basis basis(n);
  const Quadrature q = gauss_legendre(m);
  Matrix gram = Matrix::Zero(n, n);
  for (Index j = 0; j < m; ++j) {
    const Vector phi = basis.eval(q.nodes[j]);
    gram += q.weights[j] * phi * phi.transpose();
  }
  CHECK((gram - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("basis orthonormality at exact degree") {
  const Index n = 6;
  const Basis basis(n);
  const Quadrature q = gauss_legendre(n);
  Matrix gram = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    const Vector phi = basis.eval(q.nodes[j]);
    gram += q.weights[j] * phi * phi.transpose();
  }
  CHECK((gram - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gauss-legendre closed forms") {
  const Quadrature q1 = gauss_legendre(1);
  CHECK(q1.nodes[0] == 0.0);
  CHECK(q1.weights[0] == doctest::Approx(2.0).epsilon(1e-15));

  const Quadrature q2 = gauss_legendre(2);
  CHECK(q2.nodes[0] == doctest::Approx(-1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(q2.nodes[1] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(q2.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(q2.weights[1] == doctest::Approx(1.0).epsilon(1e-14));

  const Quadrature q5 = gauss_legendre(5);
  double quartic = 0.0;
  for (Index j = 0; j < 5; ++j) quartic += q5.weights[j] * std::pow(q5.nodes[j], 4);
  CHECK(quartic == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("quadrature invariants: positivity, symmetry, weight sum, exactness") {
  for (Index m : {1, 2, 3, 7, 16, 33, 100}) {
    const Quadrature q = gauss_legendre(m);
    CHECK(q.weights.minCoeff() > 0.0);
    CHECK(std::abs(q.weights.sum() - 2.0) <= 1e-12);
    for (Index j = 0; j < m; ++j) {
      CHECK(std::abs(q.nodes[j] + q.nodes[m - 1 - j]) <= 1e-12);
      if (m > 1) CHECK(std::abs(q.nodes[j]) < 1.0);
    }
    // exactness on monomials up to degree 2m-1
    for (Index p = 0; p <= std::min<Index>(2 * m - 1, 25); ++p) {
      double integral = 0.0;
      for (Index j = 0; j < m; ++j) integral += q.weights[j] * std::pow(q.nodes[j], p);
      const double exact = (p % 2 == 1) ? 0.0 : 2.0 / static_cast<double>(p + 1);
      CHECK(std::abs(integral - exact) <= 1e-10);
    }
  }
}

TEST_CASE("weight matrix is a discrete projector") {
  const Basis basis(4);
  const Quadrature q = gauss_legendre(12);
  const Matrix w = weight_matrix(basis, q);
  REQUIRE(w.rows() == 4);
  REQUIRE(w.cols() == 12);
  CHECK(w.allFinite());

  // first row = sqrt(1/2) * weights
  for (Index j = 0; j < 12; ++j) {
    CHECK(w(0, j) == doctest::Approx(std::sqrt(0.5) * q.weights[j]).epsilon(1e-14));
  }

  Matrix phi(4, 12);
  for (Index j = 0; j < 12; ++j) phi.col(j) = basis.eval(q.nodes[j]);
  CHECK((w * phi.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_SUITE_END();
