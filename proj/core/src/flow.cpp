#include "ttvi/flow.hpp"

#include <Eigen/LU>

#include <cmath>
#include <fstream>

namespace ttvi {

FlowModel init_flow(Index d, Index width, Index depth, Index flow_length, std::uint64_t seed) {
  if (d < 1 || width < 1 || depth < 0 || flow_length < 1) {
    throw ConfigError("invalid flow architecture");
  }
  FlowModel model;
  model.dim = d;
  Rng rng(mix_seed(seed, 0xf70f10));
  auto fill = [&rng](auto& m) {
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-0.25, 0.25);
    }
  };
  for (Index k = 0; k < flow_length; ++k) {
    ResidualLayer layer;
    std::vector<Index> sizes;
    sizes.push_back(d);
    for (Index l = 0; l < depth; ++l) sizes.push_back(width);
    sizes.push_back(d);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      Matrix w(sizes[l], sizes[l + 1]);
      RowVector b(sizes[l + 1]);
      fill(w);
      fill(b);
      layer.mlp.weights.push_back(std::move(w));
      layer.mlp.biases.push_back(std::move(b));
    }
    layer.bn.gamma = RowVector::Ones(d);
    layer.bn.beta = RowVector::Zero(d);
    layer.bn.running_mean = RowVector::Zero(d);
    layer.bn.running_var = RowVector::Ones(d);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void zero_mlp(FlowModel& model) {
  for (auto& layer : model.layers) {
    for (auto& w : layer.mlp.weights) w.setZero();
    for (auto& b : layer.mlp.biases) b.setZero();
  }
}

Matrix mlp_forward(const MlpParams& mlp, const Matrix& x) {
  Matrix h = x;
  const Index last = mlp.layer_count() - 1;
  for (Index l = 0; l <= last; ++l) {
    Matrix a = h * mlp.weights[l];
    a.rowwise() += mlp.biases[l];
    h = (l < last) ? a.cwiseMax(0.0) : std::move(a);
  }
  return h;
}

namespace {

struct BnScales {
  RowVector mean;
  RowVector scale;  // 1 / sqrt(max(var, 1) + eps)
};

BnScales bn_stats(const BatchNormState& bn, const Matrix& g, Mode mode) {
  BnScales s;
  if (mode == Mode::train) {
    if (g.rows() < 2) throw DimensionError("train-mode batch norm needs batch size >= 2");
    s.mean = g.colwise().mean();
    Matrix c = g.rowwise() - s.mean;
    RowVector var = c.array().square().colwise().mean();
    s.scale = bn_gain(var, bn.epsilon);
  } else {
    s.mean = bn.running_mean;
    s.scale = bn_gain(bn.running_var, bn.epsilon);
  }
  return s;
}

Matrix bn_apply(const BatchNormState& bn, const Matrix& g, const BnScales& s) {
  Matrix out = g.rowwise() - s.mean;
  out.array().rowwise() *= (s.scale.array() * bn.gamma.array());
  out.rowwise() += bn.beta;
  return out;
}

void bn_update_running(BatchNormState& bn, const Matrix& g, const BnScales& s) {
  const double b = static_cast<double>(g.rows());
  Matrix c = g.rowwise() - s.mean;
  RowVector var = c.array().square().colwise().mean();
  const RowVector unbiased = var * (b / std::max(1.0, b - 1.0));
  bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * s.mean;
  bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbiased;
}

// forward pass retaining the pre-activation sign masks for JVPs
struct MlpTrace {
  std::vector<Matrix> masks;  // per hidden layer, 0/1
  Matrix output;
};

MlpTrace mlp_forward_trace(const MlpParams& mlp, const Matrix& x) {
  MlpTrace tr;
  Matrix h = x;
  const Index last = mlp.layer_count() - 1;
  for (Index l = 0; l <= last; ++l) {
    Matrix a = h * mlp.weights[l];
    a.rowwise() += mlp.biases[l];
    if (l < last) {
      tr.masks.push_back((a.array() > 0.0).cast<double>());
      h = a.cwiseMax(0.0);
    } else {
      tr.output = std::move(a);
    }
  }
  return tr;
}

// u <- (DG) u for a batch of tangent rows, given the primal trace and the
// batch-norm scale row (gamma * rsqrt(var + eps), frozen statistics).
Matrix mlp_jvp(const MlpParams& mlp, const MlpTrace& tr, const Matrix& u,
               const RowVector* bn_row) {
  Matrix t = u;
  const Index last = mlp.layer_count() - 1;
  for (Index l = 0; l <= last; ++l) {
    t = t * mlp.weights[l];
    if (l < last) t.array() *= tr.masks[l].array();
  }
  if (bn_row != nullptr) t.array().rowwise() *= bn_row->array();
  return t;
}

}  // namespace

RowVector bn_gain(const RowVector& var, double eps) {
  return (var.array().max(1.0) + eps).rsqrt();
}

std::uint64_t logdet_probe_seed(const LogdetConfig& cfg, const Matrix& x, Index s, int p) {
  std::uint64_t key;
  if (cfg.content_keyed_probes) {
    const RowVector row = x.row(s);
    key = fnv1a64(row.data(), sizeof(double) * static_cast<std::size_t>(row.size()));
  } else {
    key = 1315423911ULL * static_cast<std::uint64_t>(s);
  }
  return mix_seed(cfg.seed, 0xbeef + key + static_cast<std::uint64_t>(p));
}

Matrix layer_forward(ResidualLayer& layer, const Matrix& x, Mode mode) {
  if (x.rows() == 0) throw DimensionError("empty batch");
  Matrix g = mlp_forward(layer.mlp, x);
  if (!g.allFinite()) throw NumericError("non-finite activations in residual branch");
  if (!layer.has_bn) return x + g;
  const BnScales s = bn_stats(layer.bn, g, mode);
  if (mode == Mode::train) bn_update_running(layer.bn, g, s);
  return x + bn_apply(layer.bn, g, s);
}

Matrix layer_forward_const(const ResidualLayer& layer, const Matrix& x, Mode mode) {
  if (mode == Mode::train) throw ConfigError("train-mode forward requires a mutable layer");
  Matrix g = mlp_forward(layer.mlp, x);
  if (!g.allFinite()) throw NumericError("non-finite activations in residual branch");
  if (!layer.has_bn) return x + g;
  const BnScales s = bn_stats(layer.bn, g, mode);
  return x + bn_apply(layer.bn, g, s);
}

Vector logdet_series(const ResidualLayer& layer, const Matrix& x, Mode mode,
                     const LogdetConfig& cfg, const Matrix* probe_key) {
  if (cfg.order < 1 || cfg.probes < 1) throw ConfigError("log-det series needs M, P >= 1");
  const Index batch = x.rows(), d = x.cols();
  const Matrix& key = probe_key ? *probe_key : x;
  const MlpTrace tr = mlp_forward_trace(layer.mlp, x);
  RowVector bn_row;
  const RowVector* bn_ptr = nullptr;
  if (layer.has_bn) {
    const BnScales s = bn_stats(layer.bn, tr.output, mode);
    bn_row = s.scale.array() * layer.bn.gamma.array();
    bn_ptr = &bn_row;
  }
  Vector acc = Vector::Zero(batch);
  for (int p = 0; p < cfg.probes; ++p) {
    Matrix v(batch, d);
    for (Index s = 0; s < batch; ++s) {
      Rng rng(logdet_probe_seed(cfg, key, s, p));
      for (Index j = 0; j < d; ++j) v(s, j) = rng.rademacher();
    }
    Matrix u = v;
    double sign = 1.0;
    for (int m = 1; m <= cfg.order; ++m) {
      u = mlp_jvp(layer.mlp, tr, u, bn_ptr);
      acc += (sign / static_cast<double>(m)) * (v.array() * u.array()).rowwise().sum().matrix();
      sign = -sign;
    }
  }
  return acc / static_cast<double>(cfg.probes);
}

Vector logdet_exact(const ResidualLayer& layer, const Matrix& x, Mode mode) {
  const Index batch = x.rows(), d = x.cols();
  const MlpTrace tr = mlp_forward_trace(layer.mlp, x);
  RowVector bn_row;
  const RowVector* bn_ptr = nullptr;
  if (layer.has_bn) {
    const BnScales s = bn_stats(layer.bn, tr.output, mode);
    bn_row = s.scale.array() * layer.bn.gamma.array();
    bn_ptr = &bn_row;
  }
  // columns of DG for all samples at once
  std::vector<Matrix> cols(d);
  for (Index j = 0; j < d; ++j) {
    Matrix e = Matrix::Zero(batch, d);
    e.col(j).setOnes();
    cols[j] = mlp_jvp(layer.mlp, tr, e, bn_ptr);
  }
  Vector out(batch);
  Matrix jac(d, d);
  for (Index s = 0; s < batch; ++s) {
    for (Index j = 0; j < d; ++j) jac.col(j) = cols[j].row(s).transpose();
    jac += Matrix::Identity(d, d);
    Eigen::PartialPivLU<Matrix> lu(jac);
    const double det = lu.determinant();
    if (det == 0.0 || !std::isfinite(det)) {
      throw SingularityError("singular layer Jacobian at sample " + std::to_string(s));
    }
    out[s] = std::log(std::abs(det));
  }
  return out;
}

namespace {

template <typename Layers, typename LayerFwd>
FlowForwardResult flow_forward_impl(Layers& layers, const Matrix& z,
                                    Mode mode, const LogdetConfig& cfg, LayerFwd&& fwd) {
  FlowForwardResult res;
  res.x = z;
  res.logdet = Vector::Zero(z.rows());
  const bool exact = cfg.exact_if_small && z.cols() <= kExactLogdetMaxDim;
  LogdetConfig layer_cfg = cfg;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layer_cfg.seed = mix_seed(cfg.seed, 0x1a7e5 + k);
    if (exact) {
      res.logdet += logdet_exact(layers[k], res.x, mode);
    } else {
      res.logdet += logdet_series(layers[k], res.x, mode, layer_cfg, &z);
    }
    res.x = fwd(layers[k], res.x);
  }
  return res;
}

}  // namespace

FlowForwardResult flow_forward(FlowModel& model, const Matrix& z, Mode mode,
                               const LogdetConfig& cfg) {
  if (z.cols() != model.dim) throw DimensionError("flow input width mismatch");
  return flow_forward_impl(model.layers, z, mode, cfg,
                           [mode](ResidualLayer& l, const Matrix& x) {
                             return layer_forward(l, x, mode);
                           });
}

FlowForwardResult flow_forward_const(const FlowModel& model, const Matrix& z, Mode mode,
                                     const LogdetConfig& cfg) {
  if (z.cols() != model.dim) throw DimensionError("flow input width mismatch");
  if (mode == Mode::train) throw ConfigError("const flow forward is inference-only");
  return flow_forward_impl(model.layers, z, mode, cfg,
                           [mode](const ResidualLayer& l, const Matrix& x) {
                             return layer_forward_const(l, x, mode);
                           });
}

double lipschitz_upper_bound(const FlowModel& model) {
  double worst = 0.0;
  for (const auto& layer : model.layers) {
    double prod = 1.0;
    for (const auto& w : layer.mlp.weights) {
      // power iteration on W^T W
      Vector v = Vector::Ones(w.cols()) / std::sqrt(static_cast<double>(w.cols()));
      double sigma = 0.0;
      for (int it = 0; it < 30; ++it) {
        Vector u = w * v;
        sigma = u.norm();
        if (sigma == 0.0) break;
        v = w.transpose() * u / sigma;
        const double nv = v.norm();
        if (nv == 0.0) break;
        v /= nv;
      }
      prod *= sigma;
    }
    if (layer.has_bn) {
      const RowVector scale =
          bn_gain(layer.bn.running_var, layer.bn.epsilon).array() * layer.bn.gamma.array().abs();
      prod *= scale.maxCoeff();
    }
    worst = std::max(worst, prod);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------
namespace {

void write_u64f(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64f(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("truncated flow checkpoint");
  return v;
}

void write_block(std::ostream& os, const double* p, Index n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(sizeof(double) * n));
}

void read_block(std::istream& is, double* p, Index n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(sizeof(double) * n));
  if (!is) throw DataError("truncated flow checkpoint");
}

}  // namespace

void save_flow(const FlowModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write("TFV1", 4);
  const auto& first = model.layers.front().mlp;
  const Index depth = first.layer_count() - 1;
  const Index width = depth > 0 ? first.weights[0].cols() : model.dim;
  write_u64f(f, static_cast<std::uint64_t>(model.dim));
  write_u64f(f, static_cast<std::uint64_t>(width));
  write_u64f(f, static_cast<std::uint64_t>(depth));
  write_u64f(f, static_cast<std::uint64_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    for (Index l = 0; l < layer.mlp.layer_count(); ++l) {
      // weights in row-major declaration order
      const Matrix& w = layer.mlp.weights[l];
      for (Index i = 0; i < w.rows(); ++i) {
        for (Index j = 0; j < w.cols(); ++j) {
          const double v = w(i, j);
          write_block(f, &v, 1);
        }
      }
      write_block(f, layer.mlp.biases[l].data(), layer.mlp.biases[l].size());
    }
    write_block(f, layer.bn.gamma.data(), layer.bn.gamma.size());
    write_block(f, layer.bn.beta.data(), layer.bn.beta.size());
    write_block(f, layer.bn.running_mean.data(), layer.bn.running_mean.size());
    write_block(f, layer.bn.running_var.data(), layer.bn.running_var.size());
  }
  if (!f) throw DataError("failed writing flow checkpoint");
}

FlowModel load_flow(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "TFV1") throw DataError("bad flow checkpoint magic");
  const auto d = static_cast<Index>(read_u64f(f));
  const auto width = static_cast<Index>(read_u64f(f));
  const auto depth = static_cast<Index>(read_u64f(f));
  const auto flow_len = static_cast<Index>(read_u64f(f));
  FlowModel model = init_flow(d, width, depth, flow_len, 0);
  for (auto& layer : model.layers) {
    for (Index l = 0; l < layer.mlp.layer_count(); ++l) {
      Matrix& w = layer.mlp.weights[l];
      for (Index i = 0; i < w.rows(); ++i) {
        for (Index j = 0; j < w.cols(); ++j) read_block(f, &w(i, j), 1);
      }
      read_block(f, layer.mlp.biases[l].data(), layer.mlp.biases[l].size());
    }
    read_block(f, layer.bn.gamma.data(), layer.bn.gamma.size());
    read_block(f, layer.bn.beta.data(), layer.bn.beta.size());
    read_block(f, layer.bn.running_mean.data(), layer.bn.running_mean.size());
    read_block(f, layer.bn.running_var.data(), layer.bn.running_var.size());
  }
  return model;
}

}  // namespace ttvi
