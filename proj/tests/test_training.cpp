#include "ttvi/training.hpp"

#include "ttvi/basis.hpp"
#include "ttvi/sampler.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace ttvi;
using namespace ttvi::test;

TEST_SUITE_BEGIN("training");

namespace {

// identity-box quartic chain target for small-d tests
Gl1dEnergy small_target(Index d, double beta = 1.0) {
  return Gl1dEnergy(Gl1dSpec{d, 1.0 / static_cast<double>(d + 1), 0.1, beta, 1.0});
}

SampleBatch uniform_corpus(Index count, Index d, std::uint64_t seed) {
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(count, d);
  batch.log_density.resize(count);
  for (Index s = 0; s < count; ++s) {
    Rng rng(mix_seed(seed, s));
    for (Index k = 0; k < d; ++k) batch.points(s, k) = rng.uniform(-1.0, 1.0);
    batch.log_density[s] = -static_cast<double>(d) * std::log(2.0);
  }
  return batch;
}

// single-linear-branch residual layer without batch norm (depth-0 mlp)
FlowModel plain_linear_flow(Index d) {
  FlowModel model;
  model.dim = d;
  ResidualLayer layer;
  layer.mlp.weights = {Matrix::Zero(d, d)};
  layer.mlp.biases = {RowVector::Zero(d)};
  layer.has_bn = false;
  model.layers = {layer};
  return model;
}

}  // namespace

TEST_CASE("vi_loss: identity flow reduces to mean(logp0 + U) - logJ") {
  const Index d = 3;
  const auto energy = small_target(d);
  FlowModel model = init_flow(d, 4, 1, 2, 3);
  zero_mlp(model);
  const SampleBatch batch = uniform_corpus(64, d, 5);
  LogdetConfig cfg{10, 1, 7, true};
  const double loss = vi_loss(model, batch.points, batch.log_density, energy, cfg, nullptr);
  double want = 0.0;
  for (Index s = 0; s < 64; ++s) {
    want += batch.log_density[s] + energy.energy(batch.points.row(s).transpose());
  }
  want /= 64.0;
  CHECK(loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("vi_loss: invariant to batch order") {
  const Index d = 2;
  const auto energy = small_target(d);
  FlowModel model = init_flow(d, 6, 2, 2, 9);
  const SampleBatch batch = uniform_corpus(32, d, 8);
  LogdetConfig cfg{10, 1, 11, true};  // exact log-det: per-sample, order-free
  const double a = vi_loss(model, batch.points, batch.log_density, energy, cfg);
  Matrix rev_pts = batch.points.colwise().reverse();
  Vector rev_lp = batch.log_density.reverse();
  const double b = vi_loss(model, rev_pts, rev_lp, energy, cfg);
  CHECK(a == doctest::Approx(b).epsilon(1e-13));
}

TEST_CASE("vi_loss: d=1 analytic case hits -log Z by quadrature") {
  // p0 equals the target exactly (dense projection at high n); with the
  // identity flow the population loss is -log Z; evaluate the expectation by
  // quadrature rather than sampling
  const Index d = 1, n = 40;
  Gl1dEnergy energy(Gl1dSpec{1, 0.5, 0.15, 1.0, 1.0});
  const double z = integrate_1d([&](double x) {
    Vector p(1);
    p << x;
    return std::exp(-energy.energy(p));
  }, -1.0, 1.0, 80);

  Vector coef(n);
  for (Index i = 0; i < n; ++i) {
    coef[i] = integrate_1d(
        [&](double x) {
          Vector p(1);
          p << x;
          return std::exp(-0.5 * energy.energy(p)) * legendre_eval(n, x)[i];
        },
        -1.0, 1.0, 80);
  }
  coef /= coef.norm();
  const double loss = integrate_1d(
      [&](double x) {
        Vector p(1);
        p << x;
        const double q0 = coef.dot(legendre_eval(n, x));
        const double p0 = q0 * q0;
        return p0 * (std::log(p0) + energy.energy(p));
      },
      -1.0, 1.0, 80);
  CHECK(std::abs(loss - (-std::log(z))) <= 1e-6);
}

TEST_CASE("loss_gradient: residual bias gradient is the batch mean of grad U") {
  const Index d = 4;
  const auto energy = small_target(d);
  FlowModel model = plain_linear_flow(d);
  // symmetric batch +-z
  Matrix pts(6, d);
  Rng rng(10);
  for (Index s = 0; s < 3; ++s) {
    for (Index k = 0; k < d; ++k) pts(s, k) = rng.uniform(-0.9, 0.9);
    pts.row(s + 3) = -pts.row(s);
  }
  Vector logp0 = Vector::Zero(6);
  LogdetConfig cfg{10, 1, 13, false};
  const LossAndGrad lg = loss_gradient(model, pts, logp0, energy, cfg);
  // params: weight then bias
  REQUIRE(lg.grads.size() == 2);
  Vector mean_grad_u = Vector::Zero(d);
  for (Index s = 0; s < 6; ++s) {
    mean_grad_u += energy.gradient(pts.row(s).transpose()) / 6.0;
  }
  CHECK((lg.grads[1] - mean_grad_u).cwiseAbs().maxCoeff() <= 1e-12);
  // and the symmetric batch of the even energy makes that mean vanish
  CHECK(mean_grad_u.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("loss_gradient: central finite differences across all parameter groups") {
  const Index d = 3;
  const auto energy = small_target(d);
  FlowModel model = init_flow(d, 8, 2, 2, 17);
  const SampleBatch batch = uniform_corpus(16, d, 21);
  LogdetConfig cfg{10, 1, 23, false};

  const LossAndGrad lg = loss_gradient(model, batch.points, batch.log_density, energy, cfg);

  std::vector<ParamRef> params = collect_params(model);
  REQUIRE(params.size() == lg.grads.size());
  Rng pick(31);
  const double h = 1e-5;
  for (std::size_t g = 0; g < params.size(); ++g) {
    Vector fd(params[g].size);
    const Index n_checked = std::min<Index>(params[g].size, 20);
    double num = 0.0, den = 0.0;
    for (Index t = 0; t < n_checked; ++t) {
      const Index i = (params[g].size <= 20)
                          ? t
                          : static_cast<Index>(pick.below(params[g].size));
      double* slot = params[g].data + i;
      const double saved = *slot;
      *slot = saved + h;
      const double up = taped_loss_value(model, batch.points, batch.log_density, energy, cfg);
      *slot = saved - h;
      const double dn = taped_loss_value(model, batch.points, batch.log_density, energy, cfg);
      *slot = saved;
      const double fd_i = (up - dn) / (2.0 * h);
      num += (fd_i - lg.grads[g][i]) * (fd_i - lg.grads[g][i]);
      den += fd_i * fd_i;
    }
    // relative per group; structurally zero gradients (e.g. the last mlp bias
    // under batch norm) are compared at the fd noise floor instead
    const double abs_err = std::sqrt(num), ref = std::sqrt(den);
    if (ref > 1e-6) {
      CHECK(abs_err <= 1e-4 * ref);
    } else {
      CHECK(abs_err <= 1e-7);
    }
  }
}

TEST_CASE("loss_gradient: duplicating the batch leaves the gradient unchanged") {
  const Index d = 2;
  const auto energy = small_target(d);
  FlowModel model = init_flow(d, 4, 1, 1, 41);
  model.layers[0].has_bn = false;  // batch statistics would couple the copies
  const SampleBatch batch = uniform_corpus(8, d, 43);
  Matrix doubled(16, d);
  doubled << batch.points, batch.points;
  Vector doubled_lp(16);
  doubled_lp << batch.log_density, batch.log_density;

  LogdetConfig cfg{6, 1, 47, false, true};  // content-keyed probes
  FlowModel m1 = model, m2 = model;
  const LossAndGrad a = loss_gradient(m1, batch.points, batch.log_density, energy, cfg);
  const LossAndGrad b = loss_gradient(m2, doubled, doubled_lp, energy, cfg);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  for (std::size_t g = 0; g < a.grads.size(); ++g) {
    CHECK((a.grads[g] - b.grads[g]).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("taped loss equals the raw series loss on a bn-free model") {
  const Index d = 3;
  const auto energy = small_target(d);
  FlowModel model;
  model.dim = d;
  Rng rng(51);
  for (int k = 0; k < 2; ++k) {
    ResidualLayer layer;
    Matrix w1(d, 5), w2(5, d);
    for (Index i = 0; i < w1.size(); ++i) w1.data()[i] = rng.uniform(-0.2, 0.2);
    for (Index i = 0; i < w2.size(); ++i) w2.data()[i] = rng.uniform(-0.2, 0.2);
    RowVector b1 = RowVector::Zero(5), b2 = RowVector::Zero(d);
    layer.mlp.weights = {w1, w2};
    layer.mlp.biases = {b1, b2};
    layer.has_bn = false;
    model.layers.push_back(layer);
  }
  const SampleBatch batch = uniform_corpus(12, d, 53);
  LogdetConfig cfg{8, 2, 59, false, true};
  const double taped = taped_loss_value(model, batch.points, batch.log_density, energy, cfg);
  const double raw = vi_loss(model, batch.points, batch.log_density, energy, cfg);
  CHECK(taped == doctest::Approx(raw).epsilon(1e-13));
}

TEST_CASE("adam: zero gradient, first-step closed form, clipping") {
  FlowModel model = plain_linear_flow(2);
  std::vector<ParamRef> params = collect_params(model);
  AdamState st = make_adam_state(params);

  std::vector<Vector> zero{Vector::Zero(4), Vector::Zero(2)};
  Matrix w_before = model.layers[0].mlp.weights[0];
  adam_step(params, zero, st, 0.1, 1e4);
  CHECK(st.t == 1);
  CHECK(model.layers[0].mlp.weights[0] == w_before);

  // constant gradient g: first step moves by -lr * g / (|g| + eps)
  std::vector<Vector> g{Vector::Constant(4, 0.5), Vector::Constant(2, -2.0)};
  AdamState st2 = make_adam_state(params);
  FlowModel m2 = plain_linear_flow(2);
  std::vector<ParamRef> p2 = collect_params(m2);
  adam_step(p2, g, st2, 0.01, 1e4);
  for (Index i = 0; i < 4; ++i) {
    const double want = -0.01 * 0.5 / (0.5 + st2.epsilon);
    CHECK(std::abs(m2.layers[0].mlp.weights[0].data()[i] - want) <= 1e-10);
  }
  for (Index i = 0; i < 2; ++i) {
    const double want = 0.01 * 2.0 / (2.0 + st2.epsilon);
    CHECK(std::abs(m2.layers[0].mlp.biases[0][i] - want) <= 1e-10);
  }

  // gradient 1e9 clips to 1e4 before the moment updates
  FlowModel m3 = plain_linear_flow(2);
  std::vector<ParamRef> p3 = collect_params(m3);
  AdamState st3 = make_adam_state(p3);
  std::vector<Vector> huge{Vector::Constant(4, 1e9), Vector::Constant(2, 1e9)};
  adam_step(p3, huge, st3, 0.5, 1e4);
  CHECK(std::abs(st3.m[0][0] - 0.1 * 1e4) <= 1e-9);  // clipped before the first moment
  CHECK(std::abs(st3.v[0][0] - 0.001 * 1e8) <= 1e-1);

  // clipping idempotence
  Vector raw = Vector::Constant(3, 2e4);
  Vector once = raw.cwiseMax(-1e4).cwiseMin(1e4);
  Vector twice = once.cwiseMax(-1e4).cwiseMin(1e4);
  CHECK(once == twice);
}

TEST_CASE("train: epochs=0 reports the start loss and leaves the model unchanged") {
  const Index d = 2;
  const auto energy = small_target(d);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 0;
  cfg.s_train = 32;
  cfg.s_holdout = 32;
  cfg.seed = 3;
  const SampleBatch corpus = uniform_corpus(64, d, 5);
  FlowModel model = init_flow(d, 4, 1, 1, 7);
  const Matrix w_before = model.layers[0].mlp.weights[0];
  const RunReport rep = train(model, corpus, energy, cfg);
  CHECK(rep.holdout_curve.empty());
  CHECK(rep.best_epoch == 0);
  CHECK(rep.status == "ok");
  CHECK(rep.final_loss == doctest::Approx(rep.start_loss).epsilon(1e-12));
  CHECK(rep.best_model.layers[0].mlp.weights[0] == w_before);
}

TEST_CASE("train: bitwise deterministic loss series for equal seeds") {
  const Index d = 2;
  const auto energy = small_target(d);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.s_train = 32;
  cfg.s_holdout = 16;
  cfg.learning_rate = 1e-3;
  cfg.seed = 11;
  const SampleBatch corpus = uniform_corpus(48, d, 13);
  const RunReport a = train(init_flow(d, 4, 1, 2, 15), corpus, energy, cfg);
  const RunReport b = train(init_flow(d, 4, 1, 2, 15), corpus, energy, cfg);
  REQUIRE(a.holdout_curve.size() == b.holdout_curve.size());
  for (std::size_t e = 0; e < a.holdout_curve.size(); ++e) {
    CHECK(a.holdout_curve[e] == b.holdout_curve[e]);
  }
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.final_lr == doctest::Approx(cfg.learning_rate *
                                      std::pow(cfg.lr_decay, static_cast<double>(a.steps_run)))
                          .epsilon(1e-12));
}

TEST_CASE("train: loss improves on a structured 2-d target") {
  const Index d = 2;
  Gl1dEnergy energy(Gl1dSpec{2, 1.0 / 3.0, 0.1, 1.5, 1.0});
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 30;
  cfg.s_train = 512;
  cfg.s_holdout = 512;
  cfg.learning_rate = 1e-3;
  cfg.seed = 17;
  const SampleBatch corpus = uniform_corpus(1024, d, 19);
  const RunReport rep = train(init_flow(d, 8, 2, 2, 21), corpus, energy, cfg);
  CHECK(rep.status == "ok");
  CHECK(rep.final_loss < rep.start_loss);
  // lower bound: population loss >= -log Z
  const double z = integrate_2d(
      [&](double x, double y) {
        Vector p(2);
        p << x, y;
        return std::exp(-energy.energy(p));
      },
      -1.0, 1.0, 60);
  CHECK(rep.final_loss >= -std::log(z) - 3.0 * rep.final_loss_se);
}

TEST_SUITE_END();
