#include "ttvi/flow.hpp"
#include "ttvi/sampler.hpp"
#include "ttvi/tensor_train.hpp"
#include "ttvi/training.hpp"
#include "ttvi/tt_cross.hpp"

#include <benchmark/benchmark.h>

using namespace ttvi;

namespace {

TensorTrain make_train(Index d, Index n, Index r, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TtCore> cores;
  for (Index k = 0; k < d; ++k) {
    TtCore c(k == 0 ? 1 : r, n, k == d - 1 ? 1 : r);
    for (Index i = 0; i < c.data.size(); ++i) c.data[i] = rng.uniform(-1.0, 1.0);
    cores.push_back(std::move(c));
  }
  return TensorTrain(std::move(cores));
}

CoefficientTT make_base(Index d, Index n, Index r) {
  TensorTrain ortho = right_left_orthogonalize(make_train(d, n, r, 7));
  const double norm = ortho.core(0).data.norm();
  return CoefficientTT(scale_first_core(ortho, 1.0 / norm), Basis(n));
}

}  // namespace

static void BM_TtEval(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  const TensorTrain tt = make_train(d, 16, 8, 3);
  std::vector<int> idx(d, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tt.eval(idx));
  }
}
BENCHMARK(BM_TtEval)->Arg(8)->Arg(32)->Arg(64);

static void BM_Orthogonalize(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  const TensorTrain tt = make_train(d, 24, 12, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(right_left_orthogonalize(tt));
  }
}
BENCHMARK(BM_Orthogonalize)->Arg(8)->Arg(32);

static void BM_DrawSamples(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  const CoefficientTT base = make_base(d, 24, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(draw_samples(base, 64, 11, 1024, 1));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_DrawSamples)->Arg(8)->Arg(16)->Arg(32);

static void BM_CrossSweep(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  const Index m = 32;
  for (auto _ : state) {
    GridOracle oracle(d, m, [](std::span<const int> idx) {
      double s = 0.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        s += 0.01 * static_cast<double>(idx[k] * idx[k]);
      }
      return std::exp(-s);
    });
    CrossConfig cfg;
    cfg.max_rank = 4;
    cfg.n_sweeps = 2;
    benchmark::DoNotOptimize(cross_approximate(oracle, cfg));
  }
}
BENCHMARK(BM_CrossSweep)->Arg(8)->Arg(24);

static void BM_FlowForwardLogdet(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  FlowModel model = init_flow(d, 32, 5, 12, 9);
  Rng rng(13);
  Matrix z(256, d);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-1.0, 1.0);
  LogdetConfig cfg{10, 1, 3, false};
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow_forward_const(model, z, Mode::inference, cfg));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FlowForwardLogdet)->Arg(16)->Arg(35);

static void BM_TrainStep(benchmark::State& state) {
  const auto d = static_cast<Index>(state.range(0));
  Gl1dEnergy energy(Gl1dSpec{d, 1.0 / static_cast<double>(d + 1), 0.04, 6.25e-2, 1.0});
  FlowModel model = init_flow(d, 32, 5, 12, 21);
  Rng rng(17);
  Matrix pts(256, d);
  Vector logp0 = Vector::Zero(256);
  for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.uniform(-1.0, 1.0);
  std::vector<ParamRef> params = collect_params(model);
  AdamState adam = make_adam_state(params);
  LogdetConfig cfg{10, 1, 0, false, true};
  std::uint64_t step = 0;
  for (auto _ : state) {
    cfg.seed = mix_seed(3, step++);
    const LossAndGrad lg = loss_gradient(model, pts, logp0, energy, cfg);
    adam_step(params, lg.grads, adam, 5e-4, 1e4);
    benchmark::DoNotOptimize(lg.loss);
  }
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(35);

BENCHMARK_MAIN();
