#pragma once

#include "ttvi/common.hpp"
#include "ttvi/energy.hpp"

#include <vector>

namespace ttvi {

// Reverse-mode autodiff over matrix-valued nodes, sized for the flow
// training graph: dense layers, batch norm, residual adds, the truncated
// log-det trace series, and energy terms. The backward pass visits each node
// exactly once in reverse creation order (creation order is topological).
class Tape {
 public:
  using Id = int;

  enum class Op {
    input,
    param,
    matmul,
    add,
    sub,
    add_rowvec,
    sub_rowvec,
    mul_rowvec,
    relu,
    gate,       // elementwise multiply by another node's stored relu mask
    cwise_mul,
    colmean,
    rsqrt_eps,  // (a + eps)^(-1/2), elementwise
    scale,
    rowdot,     // per-row dot product of two equally shaped matrices -> column
    mean_rows,  // mean of a column vector -> 1x1
    energy,     // per-row U(from_cube(x)) -> column; backward uses the model gradient
  };

  Id input(Matrix v) { return push(Op::input, std::move(v), -1, -1); }
  Id param(Matrix v) {
    const Id id = push(Op::param, std::move(v), -1, -1);
    params_.push_back(id);
    return id;
  }

  Id matmul(Id a, Id b) { return push(Op::matmul, val(a) * val(b), a, b); }
  Id add(Id a, Id b) { return push(Op::add, val(a) + val(b), a, b); }
  Id sub(Id a, Id b) { return push(Op::sub, val(a) - val(b), a, b); }

  Id add_rowvec(Id a, Id v) {
    Matrix out = val(a);
    out.rowwise() += RowVector(val(v).row(0));
    return push(Op::add_rowvec, std::move(out), a, v);
  }
  Id sub_rowvec(Id a, Id v) {
    Matrix out = val(a);
    out.rowwise() -= RowVector(val(v).row(0));
    return push(Op::sub_rowvec, std::move(out), a, v);
  }
  Id mul_rowvec(Id a, Id v) {
    Matrix out = val(a);
    out.array().rowwise() *= val(v).row(0).array();
    return push(Op::mul_rowvec, std::move(out), a, v);
  }

  Id relu(Id a) {
    const Id id = push(Op::relu, val(a).cwiseMax(0.0), a, -1);
    nodes_[id].aux = (val(a).array() > 0.0).cast<double>();
    return id;
  }
  Id gate(Id a, Id relu_node) {
    Matrix out = val(a).cwiseProduct(nodes_[relu_node].aux);
    return push(Op::gate, std::move(out), a, relu_node);
  }

  Id cwise_mul(Id a, Id b) { return push(Op::cwise_mul, val(a).cwiseProduct(val(b)), a, b); }

  Id colmean(Id a) {
    Matrix out = val(a).colwise().mean();
    return push(Op::colmean, std::move(out), a, -1);
  }
  Id rsqrt_eps(Id a, double eps) {
    Matrix out = (val(a).array() + eps).rsqrt();
    const Id id = push(Op::rsqrt_eps, std::move(out), a, -1);
    nodes_[id].scalar = eps;
    return id;
  }
  Id scale(Id a, double c) {
    const Id id = push(Op::scale, val(a) * c, a, -1);
    nodes_[id].scalar = c;
    return id;
  }
  Id rowdot(Id a, Id b) {
    Matrix out = val(a).cwiseProduct(val(b)).rowwise().sum();
    return push(Op::rowdot, std::move(out), a, b);
  }
  Id mean_rows(Id a) {
    Matrix out(1, 1);
    out(0, 0) = val(a).mean();
    return push(Op::mean_rows, std::move(out), a, -1);
  }

  // rows of `a` are cube points; value is U(from_cube(row)) per row.
  Id energy(Id a, const EnergyModel& model) {
    const Matrix& x = val(a);
    Matrix out(x.rows(), 1);
    Matrix native(x.rows(), x.cols());
    const auto& map = model.domain();
    for (Index s = 0; s < x.rows(); ++s) {
      native.row(s) = map.from_cube(x.row(s).transpose()).transpose();
      out(s, 0) = model.energy(native.row(s).transpose());
    }
    if (!out.allFinite()) {
      Index bad = 0;
      for (Index s = 0; s < out.rows(); ++s) {
        if (!std::isfinite(out(s, 0))) {
          bad = s;
          break;
        }
      }
      throw NumericError("non-finite energy at sample " + std::to_string(bad));
    }
    const Id id = push(Op::energy, std::move(out), a, -1);
    nodes_[id].aux = std::move(native);
    nodes_[id].model = &model;
    return id;
  }

  const Matrix& val(Id id) const { return nodes_[id].value; }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  const std::vector<Id>& params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Id loss);

  void clear() {
    nodes_.clear();
    params_.clear();
  }

 private:
  struct Node {
    Op op;
    Matrix value;
    Matrix grad;
    Matrix aux;
    Id a = -1, b = -1;
    double scalar = 0.0;
    bool grad_set = false;
    const EnergyModel* model = nullptr;
  };

  Id push(Op op, Matrix value, Id a, Id b) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.a = a;
    n.b = b;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  void accumulate(Id id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.grad_set) {
      n.grad = g;
      n.grad_set = true;
    } else {
      n.grad += g;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Id> params_;
};

}  // namespace ttvi
