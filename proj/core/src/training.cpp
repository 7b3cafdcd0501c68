#include "ttvi/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace ttvi {

std::vector<ParamRef> collect_params(FlowModel& model) {
  std::vector<ParamRef> out;
  for (auto& layer : model.layers) {
    for (Index l = 0; l < layer.mlp.layer_count(); ++l) {
      out.push_back({layer.mlp.weights[l].data(), layer.mlp.weights[l].size()});
      out.push_back({layer.mlp.biases[l].data(), layer.mlp.biases[l].size()});
    }
    if (layer.has_bn) {
      out.push_back({layer.bn.gamma.data(), layer.bn.gamma.size()});
      out.push_back({layer.bn.beta.data(), layer.bn.beta.size()});
    }
  }
  return out;
}

double vi_loss(const FlowModel& model, const Matrix& points, const Vector& log_p0,
               const EnergyModel& energy, const LogdetConfig& cfg, Vector* per_sample) {
  if (points.rows() != log_p0.size()) throw DimensionError("vi_loss: batch size mismatch");
  if (points.rows() == 0) throw DimensionError("vi_loss: empty batch");
  const FlowForwardResult fwd = flow_forward_const(model, points, Mode::inference, cfg);
  const auto& map = energy.domain();
  Vector u(points.rows());
  for (Index s = 0; s < points.rows(); ++s) {
    const Vector native = map.from_cube(fwd.x.row(s).transpose());
    u[s] = energy.energy(native);
    if (!std::isfinite(u[s])) {
      throw NumericError("non-finite energy at sample " + std::to_string(s));
    }
  }
  Vector loss = log_p0 - fwd.logdet + u;
  loss.array() -= map.log_jacobian();
  if (per_sample) *per_sample = loss;
  return loss.mean();
}

namespace {

struct TapedLayerRefs {
  std::vector<Tape::Id> weights;
  std::vector<Tape::Id> biases;
  Tape::Id gamma = -1;
  Tape::Id beta = -1;
};

struct GraphResult {
  Tape::Id loss = -1;
  std::vector<TapedLayerRefs> layers;
  // batch-norm batch statistics, for the running-stat side update
  std::vector<RowVector> bn_means;
  std::vector<RowVector> bn_vars;
};

// Builds: x -> K residual layers (train-mode batch norm on the tape) with the
// per-layer series log-det, then the energy term and the scalar mean loss.
GraphResult build_loss_graph(Tape& tape, FlowModel& model, const Matrix& points,
                             const Vector& log_p0, const EnergyModel& energy,
                             const LogdetConfig& cfg) {
  GraphResult gr;
  const Index batch = points.rows();
  const Index d = points.cols();

  Tape::Id x = tape.input(points);
  Tape::Id logdet_sum = tape.input(Matrix::Zero(batch, 1));

  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& layer = model.layers[k];
    TapedLayerRefs refs;

    // primal MLP
    Tape::Id h = x;
    std::vector<Tape::Id> relu_nodes;
    const Index last = layer.mlp.layer_count() - 1;
    for (Index l = 0; l <= last; ++l) {
      refs.weights.push_back(tape.param(layer.mlp.weights[l]));
      refs.biases.push_back(tape.param(layer.mlp.biases[l]));
      Tape::Id a = tape.add_rowvec(tape.matmul(h, refs.weights[l]), refs.biases[l]);
      if (l < last) {
        Tape::Id r = tape.relu(a);
        relu_nodes.push_back(r);
        h = r;
      } else {
        h = a;
      }
    }
    if (!tape.val(h).allFinite()) {
      throw NumericError("non-finite activations in layer " + std::to_string(k));
    }

    Tape::Id branch = h;
    Tape::Id scale_vec = -1;  // gamma / sqrt(var + eps) as a tape node
    if (layer.has_bn) {
      refs.gamma = tape.param(Matrix(layer.bn.gamma));
      refs.beta = tape.param(Matrix(layer.bn.beta));
      // The training loss applies the running (inference) statistics: batch
      // statistics would rescale the branch to unit variance, driving ||DG||
      // far outside the log-det series' convergence region. Running stats are
      // constants on the tape; they are updated from the batch statistics as
      // a side effect after the step.
      Tape::Id mean = tape.input(Matrix(layer.bn.running_mean));
      Tape::Id s = tape.input(Matrix(bn_gain(layer.bn.running_var, layer.bn.epsilon)));
      Tape::Id centered = tape.sub_rowvec(h, mean);
      scale_vec = tape.cwise_mul(s, refs.gamma);
      branch = tape.add_rowvec(tape.mul_rowvec(centered, scale_vec), refs.beta);
      const RowVector batch_mean = tape.val(h).colwise().mean();
      const Matrix c = tape.val(h).rowwise() - batch_mean;
      gr.bn_means.push_back(batch_mean);
      gr.bn_vars.push_back(c.array().square().colwise().mean());
    } else {
      gr.bn_means.emplace_back();
      gr.bn_vars.emplace_back();
    }

    // series log-det at the layer input; probes follow flow.cpp's derivation
    // (per-layer seed, keyed by the original base samples) so taped and raw
    // losses agree and the loss stays smooth in the parameters
    LogdetConfig layer_cfg = cfg;
    layer_cfg.seed = mix_seed(cfg.seed, 0x1a7e5 + k);
    Matrix probes(batch, d);
    for (int p = 0; p < cfg.probes; ++p) {
      for (Index s = 0; s < batch; ++s) {
        Rng rng(logdet_probe_seed(layer_cfg, points, s, p));
        for (Index j = 0; j < d; ++j) probes(s, j) = rng.rademacher();
      }
      Tape::Id v = tape.input(probes);
      Tape::Id u = v;
      double sign = 1.0;
      for (int m = 1; m <= cfg.order; ++m) {
        for (Index l = 0; l <= last; ++l) {
          u = tape.matmul(u, refs.weights[l]);
          if (l < last) u = tape.gate(u, relu_nodes[l]);
        }
        if (scale_vec >= 0) u = tape.mul_rowvec(u, scale_vec);
        Tape::Id term = tape.scale(tape.rowdot(v, u), sign / (static_cast<double>(m) *
                                                              static_cast<double>(cfg.probes)));
        logdet_sum = tape.add(logdet_sum, term);
        sign = -sign;
      }
    }

    x = tape.add(x, branch);
    gr.layers.push_back(std::move(refs));
  }

  Tape::Id u_col = tape.energy(x, energy);
  Matrix base = log_p0;
  base.array() -= energy.domain().log_jacobian();
  Tape::Id loss_col = tape.add(tape.sub(tape.input(std::move(base)), logdet_sum), u_col);
  gr.loss = tape.mean_rows(loss_col);
  return gr;
}

}  // namespace

LossAndGrad loss_gradient(FlowModel& model, const Matrix& points, const Vector& log_p0,
                          const EnergyModel& energy, const LogdetConfig& cfg,
                          bool update_bn_running) {
  Tape tape;
  GraphResult gr = build_loss_graph(tape, model, points, log_p0, energy, cfg);
  tape.backward(gr.loss);

  LossAndGrad out;
  out.loss = tape.val(gr.loss)(0, 0);
  for (const Tape::Id id : tape.params()) {
    const Matrix& g = tape.grad(id);
    if (g.size() == 0) {
      out.grads.emplace_back(Vector::Zero(tape.val(id).size()));
    } else {
      Matrix gc = g;
      out.grads.emplace_back(Eigen::Map<Vector>(gc.data(), gc.size()));
    }
  }

  if (update_bn_running) {
    const double b = static_cast<double>(points.rows());
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      auto& bn = model.layers[k].bn;
      if (!model.layers[k].has_bn) continue;
      const RowVector unbiased = gr.bn_vars[k] * (b / std::max(1.0, b - 1.0));
      bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * gr.bn_means[k];
      bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbiased;
    }
  }
  return out;
}

double taped_loss_value(FlowModel& model, const Matrix& points, const Vector& log_p0,
                        const EnergyModel& energy, const LogdetConfig& cfg) {
  Tape tape;
  GraphResult gr = build_loss_graph(tape, model, points, log_p0, energy, cfg);
  return tape.val(gr.loss)(0, 0);
}

AdamState make_adam_state(const std::vector<ParamRef>& params) {
  AdamState st;
  for (const auto& p : params) {
    st.m.emplace_back(Vector::Zero(p.size));
    st.v.emplace_back(Vector::Zero(p.size));
  }
  return st;
}

void adam_step(std::vector<ParamRef>& params, const std::vector<Vector>& grads, AdamState& state,
               double lr, double clip) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam: parameter/gradient group mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vector> p(params[i].data, params[i].size);
    Vector g = grads[i].cwiseMax(-clip).cwiseMin(clip);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Vector mhat = state.m[i] / bc1;
    const Vector vhat = state.v[i] / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + state.epsilon);
  }
}

namespace {

double holdout_eval(const FlowModel& model, const Matrix& pts, const Vector& logp0,
                    const EnergyModel& energy, LogdetConfig cfg, std::uint64_t eval_seed,
                    Vector* per_sample = nullptr) {
  cfg.seed = eval_seed;
  return vi_loss(model, pts, logp0, energy, cfg, per_sample);
}

}  // namespace

RunReport train(FlowModel model, const SampleBatch& corpus, const EnergyModel& energy,
                const TrainConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  if (corpus.count() < cfg.s_train + cfg.s_holdout) {
    throw ConfigError("corpus smaller than S_train + S_holdout");
  }
  RunReport rep;
  rep.seed = cfg.seed;

  const Matrix train_pts = corpus.points.topRows(cfg.s_train);
  const Vector train_logp0 = corpus.log_density.head(cfg.s_train);
  const Matrix hold_pts = corpus.points.middleRows(cfg.s_train, cfg.s_holdout);
  const Vector hold_logp0 = corpus.log_density.segment(cfg.s_train, cfg.s_holdout);

  const std::uint64_t eval_seed = mix_seed(cfg.seed, 0xe7a1);
  const Index d = model.dim;
  const bool small_d = d <= kExactLogdetMaxDim;

  // curve evaluation protocol: full holdout + exact log-det when d is small,
  // fixed subset + reduced probes otherwise
  const Index curve_n = small_d ? cfg.s_holdout : std::min(cfg.curve_subset, cfg.s_holdout);
  const Matrix curve_pts = hold_pts.topRows(curve_n);
  const Vector curve_logp0 = hold_logp0.head(curve_n);
  LogdetConfig curve_cfg = cfg.eval_logdet;
  if (!small_d) curve_cfg.probes = cfg.curve_probes;

  Vector per_sample;
  rep.start_loss = holdout_eval(model, hold_pts, hold_logp0, energy, cfg.eval_logdet, eval_seed,
                                &per_sample);
  rep.start_loss_se = std::sqrt((per_sample.array() - rep.start_loss).square().sum() /
                                static_cast<double>(per_sample.size() - 1) /
                                static_cast<double>(per_sample.size()));

  rep.best_model = model;
  double best_curve = holdout_eval(model, curve_pts, curve_logp0, energy, curve_cfg, eval_seed);
  rep.best_epoch = 0;

  std::vector<ParamRef> params = collect_params(model);
  AdamState adam = make_adam_state(params);
  double lr = cfg.learning_rate;
  const Index steps_per_epoch = cfg.s_train / cfg.batch_size;
  if (cfg.epochs > 0 && steps_per_epoch == 0) {
    throw ConfigError("batch size exceeds S_train");
  }

  std::vector<Index> order(cfg.s_train);
  std::iota(order.begin(), order.end(), Index{0});
  Matrix batch_pts(cfg.batch_size, d);
  Vector batch_logp0(cfg.batch_size);

  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // per-epoch shuffle, identical across arms for a given run seed
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5affe + static_cast<std::uint64_t>(epoch)));
    for (Index i = cfg.s_train - 1; i > 0; --i) {
      const Index j = static_cast<Index>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
    try {
      for (Index b = 0; b < steps_per_epoch; ++b) {
        for (Index i = 0; i < cfg.batch_size; ++i) {
          const Index src = order[b * cfg.batch_size + i];
          batch_pts.row(i) = train_pts.row(src);
          batch_logp0[i] = train_logp0[src];
        }
        LogdetConfig step_cfg = cfg.train_logdet;
        step_cfg.seed = mix_seed(cfg.seed, 0x57e9 + static_cast<std::uint64_t>(step));
        const LossAndGrad lg = loss_gradient(model, batch_pts, batch_logp0, energy, step_cfg,
                                             /*update_bn_running=*/true);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
        adam_step(params, lg.grads, adam, lr, cfg.clip);
        lr *= cfg.lr_decay;
        ++step;
      }
    } catch (const Error& e) {
      rep.status = std::string("numeric_error@step ") + std::to_string(step) + ": " + e.what();
      break;
    }
    const double curve_loss =
        holdout_eval(model, curve_pts, curve_logp0, energy, curve_cfg, eval_seed);
    rep.holdout_curve.push_back(curve_loss);
    rep.lipschitz.push_back(lipschitz_upper_bound(model));
    if (curve_loss < best_curve) {
      best_curve = curve_loss;
      rep.best_model = model;
      rep.best_epoch = epoch;
    }
  }
  rep.steps_run = step;
  rep.final_lr = lr;

  rep.final_loss = holdout_eval(rep.best_model, hold_pts, hold_logp0, energy, cfg.eval_logdet,
                                eval_seed, &per_sample);
  rep.final_loss_se = std::sqrt((per_sample.array() - rep.final_loss).square().sum() /
                                static_cast<double>(per_sample.size() - 1) /
                                static_cast<double>(per_sample.size()));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

}  // namespace ttvi
