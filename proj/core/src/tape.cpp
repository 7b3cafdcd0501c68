#include "ttvi/tape.hpp"

namespace ttvi {

void Tape::backward(Id loss) {
  if (nodes_[loss].value.size() != 1) throw DimensionError("backward seed must be scalar");
  for (auto& n : nodes_) {
    n.grad_set = false;
    n.grad.resize(0, 0);
  }
  accumulate(loss, Matrix::Ones(1, 1));

  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_set) continue;
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::input:
      case Op::param:
        break;
      case Op::matmul:
        accumulate(n.a, g * nodes_[n.b].value.transpose());
        accumulate(n.b, nodes_[n.a].value.transpose() * g);
        break;
      case Op::add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::add_rowvec:
        accumulate(n.a, g);
        accumulate(n.b, g.colwise().sum());
        break;
      case Op::sub_rowvec:
        accumulate(n.a, g);
        accumulate(n.b, -g.colwise().sum());
        break;
      case Op::mul_rowvec: {
        Matrix ga = g;
        ga.array().rowwise() *= nodes_[n.b].value.row(0).array();
        accumulate(n.a, ga);
        accumulate(n.b, g.cwiseProduct(nodes_[n.a].value).colwise().sum());
        break;
      }
      case Op::relu:
        accumulate(n.a, g.cwiseProduct(n.aux));
        break;
      case Op::gate:
        // the mask is treated as locally constant (a.e. derivative of relu)
        accumulate(n.a, g.cwiseProduct(nodes_[n.b].aux));
        break;
      case Op::cwise_mul:
        accumulate(n.a, g.cwiseProduct(nodes_[n.b].value));
        accumulate(n.b, g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::colmean: {
        const double inv = 1.0 / static_cast<double>(nodes_[n.a].value.rows());
        accumulate(n.a, (g * inv).replicate(nodes_[n.a].value.rows(), 1));
        break;
      }
      case Op::rsqrt_eps: {
        // d/da (a+eps)^(-1/2) = -0.5 (a+eps)^(-3/2) = -0.5 value^3
        Matrix da = g.cwiseProduct(n.value.array().cube().matrix()) * (-0.5);
        accumulate(n.a, da);
        break;
      }
      case Op::scale:
        accumulate(n.a, g * n.scalar);
        break;
      case Op::rowdot: {
        const Index cols = nodes_[n.a].value.cols();
        Matrix grep = g.replicate(1, cols);
        accumulate(n.a, grep.cwiseProduct(nodes_[n.b].value));
        accumulate(n.b, grep.cwiseProduct(nodes_[n.a].value));
        break;
      }
      case Op::mean_rows: {
        const double inv = g(0, 0) / static_cast<double>(nodes_[n.a].value.rows());
        accumulate(n.a, Matrix::Constant(nodes_[n.a].value.rows(), 1, inv));
        break;
      }
      case Op::energy: {
        const Matrix& native = n.aux;
        const auto& scale = n.model->domain().scale();
        Matrix gx(native.rows(), native.cols());
        for (Index s = 0; s < native.rows(); ++s) {
          const Vector gu = n.model->gradient(native.row(s).transpose());
          gx.row(s) = g(s, 0) * (gu.array() * scale.array()).transpose();
        }
        accumulate(n.a, gx);
        break;
      }
    }
  }
}

}  // namespace ttvi
