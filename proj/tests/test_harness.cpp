#include "ttvi/harness.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>

using namespace ttvi;
using namespace ttvi::test;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli_harness");

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ttvi_test_" + std::to_string(Rng(std::random_device{}()).next_u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json small_mixture_config() {
  return json{{"model", {{"type", "mixture"}, {"d", 3}}},
              {"basis", {{"n", 20}, {"m", 40}}},
              {"tt", {{"rank", 1}}},
              {"reference", {{"samples", 2000}}},
              {"seed", 5}};
}

}  // namespace

TEST_CASE("config parsing applies model defaults and validates") {
  json j{{"model", {{"type", "gl1d"}}}};
  const ExperimentConfig cfg = parse_config(j);
  CHECK(cfg.model.d == 35);
  CHECK(cfg.model.h == doctest::Approx(1.0 / 36.0).epsilon(1e-15));
  CHECK(cfg.model.beta == doctest::Approx(6.25e-2).epsilon(1e-15));
  CHECK(cfg.basis_n == 50);
  CHECK(cfg.quad_m == 100);
  CHECK(cfg.tt_rank == 2);
  CHECK(cfg.flow_length == 12);
  CHECK(cfg.train.batch_size == 256);
  CHECK(cfg.train.learning_rate == doctest::Approx(5e-4).epsilon(1e-15));

  json mix{{"model", {{"type", "mixture"}}}};
  const ExperimentConfig mcfg = parse_config(mix);
  CHECK(mcfg.model.d == 30);
  CHECK(mcfg.basis_n == 512);
  CHECK(mcfg.flow_length == 10);
  CHECK(mcfg.train.batch_size == 128);

  json bad{{"model", {{"type", "nope"}}}};
  CHECK_THROWS_AS((void)parse_config(bad), ConfigError);
  json bad2{{"model", {{"type", "gl2d"}, {"d", 10}}}};
  CHECK_THROWS_AS((void)parse_config(bad2), ConfigError);
}

TEST_CASE("config hashing: conditions hash ignores the baseline") {
  ExperimentConfig a = parse_config(small_mixture_config());
  ExperimentConfig b = a;
  b.baseline = "gaussian";
  CHECK(config_hash(a) != config_hash(b));
  CHECK(conditions_hash(a) == conditions_hash(b));
}

TEST_CASE("build_base: caches by config hash; rerun costs zero oracle calls") {
  TempDir dir;
  const ExperimentConfig cfg = parse_config(small_mixture_config());
  const BaseBuild first = build_base(cfg, dir.path.string());
  CHECK_FALSE(first.cache_hit);
  CHECK(first.oracle_evals > 0);
  CHECK(fs::exists(first.path));

  const BaseBuild again = build_base(cfg, dir.path.string());
  CHECK(again.cache_hit);
  CHECK(again.oracle_evals == 0);

  // reload preserves unit norm
  const TensorTrain raw = load_tensor_train(first.path);
  const TensorTrain tagged(raw.cores(), Ortho::right_left);
  CHECK(std::abs(frobenius_norm(tagged) - 1.0) <= 1e-12);
}

TEST_CASE("build_base: separable gaussian target reproduces analytic moments") {
  TempDir dir;
  // isotropic gaussian, exactly separable: rank 1 suffices
  json j{{"model", {{"type", "mixture"}, {"d", 3}}},
         {"basis", {{"n", 24}, {"m", 48}}},
         {"tt", {{"rank", 1}}},
         {"seed", 11}};
  // the d=3 mixture's first coordinate is a centered normal with var 0.4
  const ExperimentConfig cfg = parse_config(j);
  const BaseBuild build = build_base(cfg, dir.path.string());
  const SampleBatch batch = draw_samples(build.base, 20000, 3, 1024, 2);
  const auto energy = make_energy(cfg.model);
  // native first coordinate: mean 0, sd sqrt(0.4)
  Vector native0(batch.count());
  for (Index s = 0; s < batch.count(); ++s) {
    native0[s] = energy->domain().from_cube(batch.points.row(s).transpose())[0];
  }
  const double mean = native0.mean();
  const double sd = std::sqrt((native0.array() - mean).square().mean());
  CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(20000.0));
  CHECK(std::abs(sd - std::sqrt(0.4)) <= 0.02);
}

TEST_CASE("estimate_logz_true: d=1 double well matches quadrature") {
  TempDir dir;
  // box 2: the wells (at |u| = 1.086) are interior, so -log Z is insensitive
  // to the confinement wall and the quadrature reference is exact
  json j{{"model",
          {{"type", "gl1d"}, {"d", 1}, {"beta", 1.0}, {"delta", 0.15}, {"h", 0.5}, {"box", 2.0}}},
         {"basis", {{"n", 40}, {"m", 80}}},
         {"reference", {{"samples", 20000}}},
         {"seed", 3}};
  const ExperimentConfig cfg = parse_config(j);
  const ReferenceResult ref = estimate_logz_true(cfg, dir.path.string());

  Gl1dEnergy energy(Gl1dSpec{1, 0.5, 0.15, 1.0, 2.0});
  const double z = integrate_1d(
      [&](double x) {
        Vector p(1);
        p << x;
        return std::exp(-energy.energy(p));
      },
      -2.0, 2.0, 120);
  CHECK(std::abs(ref.logz - std::log(z)) <= 1e-4);
  CHECK(ref.se < 1e-4);
}

TEST_CASE("estimate_logz_true: d=2 mixture slice within 3 se of quadrature") {
  TempDir dir;
  json j{{"model", {{"type", "mixture"}, {"d", 2}}},
         {"basis", {{"n", 48}, {"m", 96}}},
         {"reference", {{"samples", 4000}, {"max_rank", 60}}},
         {"seed", 7}};
  const ExperimentConfig cfg = parse_config(j);
  const ReferenceResult ref = estimate_logz_true(cfg, dir.path.string());

  MixtureEnergy energy(GaussianMixtureSpec{2, 6.0});
  const double z = integrate_2d(
      [&](double x, double y) {
        Vector p(2);
        p << x, y;
        return std::exp(-energy.energy(p));
      },
      -6.0, 6.0, 80);
  CHECK(std::abs(ref.logz - std::log(z)) <= 3.0 * ref.se + 1e-3);

  // consistency: doubling the sample count moves the estimate by < 2 se
  ExperimentConfig more = cfg;
  more.ref_samples *= 2;
  const ReferenceResult ref2 = estimate_logz_true(more, dir.path.string());
  CHECK(std::abs(ref2.logz - ref.logz) <= 2.0 * (ref.se + ref2.se));
}

TEST_CASE("error_ratio: reported table values and edge cases") {
  // mixture row
  const ErrorRatioResult mix = error_ratio(-20.1794, -20.1952, -20.7634);
  CHECK(mix.valid);
  CHECK(mix.ratio == doctest::Approx(0.0271).epsilon(2e-3));

  // 1-d lattice row
  const ErrorRatioResult gl = error_ratio(208.014, 202.756, 172.069);
  CHECK(gl.valid);
  CHECK(gl.ratio == doctest::Approx(0.146).epsilon(2e-3));

  const ErrorRatioResult equal = error_ratio(10.0, 8.0, 8.0);
  CHECK(equal.valid);
  CHECK(equal.ratio == doctest::Approx(1.0).epsilon(1e-12));

  const ErrorRatioResult bad = error_ratio(10.0, 11.0, 8.0);
  CHECK_FALSE(bad.valid);
  CHECK(bad.numerator == doctest::Approx(-1.0));
  CHECK(bad.denominator == doctest::Approx(2.0));
}

TEST_CASE("marginal histogram: flat data, exact normalization") {
  Rng rng(9);
  Matrix samples(80000, 2);
  for (Index i = 0; i < samples.size(); ++i) samples.data()[i] = rng.uniform(-1.0, 1.0);
  const Matrix h = marginal_histogram(samples, 0, 1, 10, -1.0, 1.0, -1.0, 1.0);

  // density integrates to exactly one
  const double cell = (2.0 / 10) * (2.0 / 10);
  CHECK(std::abs(h.sum() * cell - 1.0) <= 1e-12);

  // flat within multinomial noise: expected density 1/4
  for (Index i = 0; i < 10; ++i) {
    for (Index j = 0; j < 10; ++j) {
      CHECK(std::abs(h(i, j) - 0.25) <= 0.05);
    }
  }
  CHECK_THROWS_AS((void)marginal_histogram(samples, 0, 0, 10, -1, 1, -1, 1), ConfigError);
}

TEST_CASE("moment grid: constant sampler stub and concentration sanity") {
  Matrix constant(50, 9);
  for (Index i = 0; i < 50; ++i) {
    for (Index j = 0; j < 9; ++j) constant(i, j) = static_cast<double>(j);
  }
  const Matrix grid = moment_grid(constant, 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      CHECK(grid(i, j) == doctest::Approx(static_cast<double>(i * 3 + j)).epsilon(1e-15));
    }
  }

  // two disjoint half-corpora agree within 4/sqrt(S/2) per site (|u| <= 1)
  Rng rng(13);
  const Index s_count = 8000;
  Matrix field(s_count, 4);
  for (Index i = 0; i < field.size(); ++i) field.data()[i] = rng.uniform(-1.0, 1.0);
  const Matrix a = moment_grid(field.topRows(s_count / 2), 2);
  const Matrix b = moment_grid(field.bottomRows(s_count / 2), 2);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 4.0 / std::sqrt(static_cast<double>(s_count / 2)));
}

TEST_CASE("moment grid: d=4 toy lattice matches dense quadrature within 3 se") {
  TempDir dir;
  json j{{"model", {{"type", "gl2d"}, {"d", 4}, {"beta", 0.4}, {"delta", 0.3}, {"h", 0.5}}},
         {"basis", {{"n", 16}, {"m", 32}}},
         {"tt", {{"rank", 3}}},
         {"seed", 17}};
  const ExperimentConfig cfg = parse_config(j);
  const BaseBuild build = build_base(cfg, dir.path.string());
  const Index count = 20000;
  const SampleBatch batch = draw_samples(build.base, count, 19, 1024, 2);
  const auto energy = make_energy(cfg.model);
  Matrix native(count, 4);
  for (Index s = 0; s < count; ++s) {
    native.row(s) = energy->domain().from_cube(batch.points.row(s).transpose()).transpose();
  }
  const Matrix grid = moment_grid(native, 2);

  // dense-quadrature expectation of each site under p0 = q0^2 (cube coords)
  const Quadrature q = gauss_legendre(20);
  double z = 0.0;
  Vector mean = Vector::Zero(4);
  std::vector<int> shape(4, 20);
  for_each_index(shape, [&](const std::vector<int>& idx) {
    Vector p(4);
    double w = 1.0;
    for (Index k = 0; k < 4; ++k) {
      p[k] = q.nodes[idx[k]];
      w *= q.weights[idx[k]];
    }
    const double q0 = build.base.q0_eval(p);
    const double density = q0 * q0;
    z += w * density;
    mean += w * density * p;
  });
  mean /= z;
  const Vector native_mean = energy->domain().from_cube(mean);
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) {
      const double se = 1.0 / std::sqrt(static_cast<double>(count));  // sd <= box half width
      CHECK(std::abs(grid(i, j) - native_mean[i * 2 + j]) <= 3.0 * 2.0 * se);
    }
  }
}

TEST_CASE("run_single smoke: tiny gaussian-baseline training writes a sane report") {
  TempDir dir;
  json j{{"model", {{"type", "gl1d"}, {"d", 2}, {"beta", 1.0}, {"delta", 0.1}}},
         {"basis", {{"n", 12}, {"m", 24}}},
         {"tt", {{"rank", 2}}},
         {"flow", {{"width", 6}, {"depth", 1}, {"length", 2}}},
         {"train",
          {{"batch", 16}, {"lr", 1e-3}, {"epochs", 2}, {"s_train", 64}, {"s_holdout", 64}}},
         {"baseline", "gaussian"},
         {"seed", 23}};
  const ExperimentConfig cfg = parse_config(j);
  const RunReport rep = run_single(cfg, dir.path.string(), 99);
  CHECK(rep.status == "ok");
  CHECK(rep.holdout_curve.size() == 2);
  CHECK(std::isfinite(rep.start_loss));
  CHECK(std::isfinite(rep.final_loss));
}

TEST_SUITE_END();
