#include "ttvi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace ttvi {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Index side_of(Index d) {
  const auto s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(d))));
  if (s * s != d) throw ConfigError("gl2d dimension must be a perfect square, got " +
                                    std::to_string(d));
  return s;
}

void apply_model_defaults(ModelConfig& m) {
  if (m.type == "mixture") {
    if (m.d == 0) m.d = 30;
    if (m.box_half_width == 0.0) m.box_half_width = 6.0;
  } else if (m.type == "gl1d") {
    if (m.d == 0) m.d = 35;
    if (m.h == 0.0) m.h = 1.0 / static_cast<double>(m.d + 1);
    if (m.delta == 0.0) m.delta = 0.04;
    if (m.beta == 0.0) m.beta = 6.25e-2;
    if (m.box_half_width == 0.0) m.box_half_width = 1.0;
  } else if (m.type == "gl2d") {
    if (m.d == 0) m.d = 64;
    const Index side = side_of(m.d);
    if (m.h == 0.0) m.h = 1.0 / static_cast<double>(side + 1);
    if (m.delta == 0.0) m.delta = 0.04;
    if (m.beta == 0.0) m.beta = 0.2;
    if (m.box_half_width == 0.0) m.box_half_width = 2.0;
  } else {
    throw ConfigError("unknown model type: " + m.type);
  }
}

void apply_experiment_defaults(ExperimentConfig& cfg) {
  const std::string& t = cfg.model.type;
  if (cfg.basis_n == 0) cfg.basis_n = (t == "mixture") ? 512 : (t == "gl1d" ? 50 : 30);
  if (cfg.quad_m == 0) cfg.quad_m = 2 * cfg.basis_n;
  if (cfg.tt_rank == 0) cfg.tt_rank = (t == "gl2d") ? 3 : 2;
  if (cfg.flow_width == 0) cfg.flow_width = (t == "gl2d") ? 64 : 32;
  if (cfg.flow_depth == 0) cfg.flow_depth = 5;
  if (cfg.flow_length == 0) cfg.flow_length = (t == "mixture") ? 10 : 12;
  if (cfg.train.batch_size == 0) {
    cfg.train.batch_size = (t == "mixture") ? 128 : (t == "gl1d" ? 256 : 64);
  }
  if (cfg.train.learning_rate == 0.0) cfg.train.learning_rate = (t == "gl2d") ? 3e-5 : 5e-4;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.train.batch_size = 0;     // filled from the model defaults when absent
  cfg.train.learning_rate = 0.0;
  try {
    const json& jm = j.at("model");
    cfg.model.type = jm.at("type").get<std::string>();
    cfg.model.d = jm.value("d", Index{0});
    cfg.model.beta = jm.value("beta", 0.0);
    cfg.model.delta = jm.value("delta", 0.0);
    cfg.model.h = jm.value("h", 0.0);
    cfg.model.box_half_width = jm.value("box", 0.0);
    apply_model_defaults(cfg.model);

    if (j.contains("basis")) {
      cfg.basis_n = j["basis"].value("n", Index{0});
      cfg.quad_m = j["basis"].value("m", Index{0});
    }
    if (j.contains("tt")) {
      cfg.tt_rank = j["tt"].value("rank", Index{0});
      cfg.tt_sweeps = j["tt"].value("sweeps", 4);
      cfg.tt_tol = j["tt"].value("tol", 1e-6);
    }
    if (j.contains("reference")) {
      cfg.ref_tol = j["reference"].value("tol", 1e-10);
      cfg.ref_max_rank = j["reference"].value("max_rank", Index{200});
      cfg.ref_samples = j["reference"].value("samples", Index{10000});
    }
    if (j.contains("flow")) {
      cfg.flow_width = j["flow"].value("width", Index{0});
      cfg.flow_depth = j["flow"].value("depth", Index{5});
      cfg.flow_length = j["flow"].value("length", Index{0});
    }
    if (j.contains("train")) {
      const json& jt = j["train"];
      cfg.train.batch_size = jt.value("batch", Index{0});
      cfg.train.learning_rate = jt.value("lr", 0.0);
      cfg.train.epochs = jt.value("epochs", 200);
      cfg.train.lr_decay = jt.value("lr_decay", 0.9999);
      cfg.train.clip = jt.value("clip", 1e4);
      cfg.train.s_train = jt.value("s_train", Index{10000});
      cfg.train.s_holdout = jt.value("s_holdout", Index{10000});
      cfg.train.train_logdet.order = jt.value("train_logdet_order", 10);
      cfg.train.train_logdet.probes = jt.value("train_logdet_probes", 1);
      cfg.train.eval_logdet.order = jt.value("eval_logdet_order", 20);
      cfg.train.eval_logdet.probes = jt.value("eval_logdet_probes", 64);
      cfg.train.curve_subset = jt.value("curve_subset", Index{2048});
      cfg.train.curve_probes = jt.value("curve_probes", 4);
    }
    cfg.baseline = j.value("baseline", std::string("tt"));
    if (cfg.baseline != "tt" && cfg.baseline != "gaussian") {
      throw ConfigError("baseline must be tt or gaussian");
    }
    cfg.gaussian_var = j.value("gaussian_var", 0.2);
    if (j.contains("sampler")) cfg.sampler_grid = j["sampler"].value("grid", Index{1024});
    cfg.seed = j.value("seed", std::uint64_t{7});
    cfg.runs = j.value("runs", 10);
    cfg.threads = j.value("threads", 2);
    apply_experiment_defaults(cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (cfg.tt_rank < 1) throw ConfigError("tt rank must be >= 1");
  if (cfg.runs < 1) throw ConfigError("runs must be >= 1");
  if (cfg.quad_m < cfg.tt_rank) throw ConfigError("quadrature size must be >= tt rank");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid json: ") + e.what());
  }
  return parse_config(j);
}

std::unique_ptr<EnergyModel> make_energy(const ModelConfig& m) {
  if (m.type == "mixture") {
    return std::make_unique<MixtureEnergy>(GaussianMixtureSpec{m.d, m.box_half_width});
  }
  if (m.type == "gl1d") {
    return std::make_unique<Gl1dEnergy>(Gl1dSpec{m.d, m.h, m.delta, m.beta, m.box_half_width});
  }
  if (m.type == "gl2d") {
    return std::make_unique<Gl2dEnergy>(
        Gl2dSpec{side_of(m.d), m.h, m.delta, m.beta, m.box_half_width});
  }
  throw ConfigError("unknown model type: " + m.type);
}

namespace {

json model_json(const ModelConfig& m) {
  return json{{"type", m.type}, {"d", m.d},          {"beta", m.beta},
              {"delta", m.delta}, {"h", m.h},        {"box", m.box_half_width}};
}

json base_relevant_json(const ExperimentConfig& cfg) {
  return json{{"model", model_json(cfg.model)},
              {"n", cfg.basis_n},
              {"m", cfg.quad_m},
              {"rank", cfg.tt_rank},
              {"sweeps", cfg.tt_sweeps},
              {"tol", cfg.tt_tol},
              {"seed", cfg.seed}};
}

json reference_relevant_json(const ExperimentConfig& cfg) {
  return json{{"model", model_json(cfg.model)},
              {"n", cfg.basis_n},
              {"m", cfg.quad_m},
              {"ref_tol", cfg.ref_tol},
              {"ref_max_rank", cfg.ref_max_rank},
              {"seed", cfg.seed}};
}

json full_json(const ExperimentConfig& cfg, bool with_baseline) {
  json j = base_relevant_json(cfg);
  j["flow"] = {{"width", cfg.flow_width}, {"depth", cfg.flow_depth}, {"length", cfg.flow_length}};
  j["train"] = {{"batch", cfg.train.batch_size},
                {"lr", cfg.train.learning_rate},
                {"epochs", cfg.train.epochs},
                {"lr_decay", cfg.train.lr_decay},
                {"clip", cfg.train.clip},
                {"s_train", cfg.train.s_train},
                {"s_holdout", cfg.train.s_holdout}};
  j["sampler_grid"] = cfg.sampler_grid;
  j["gaussian_var"] = cfg.gaussian_var;
  j["runs"] = cfg.runs;
  if (with_baseline) j["baseline"] = cfg.baseline;
  return j;
}

}  // namespace

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(full_json(cfg, true).dump()); }
std::uint64_t base_config_hash(const ExperimentConfig& cfg) {
  return fnv1a64(base_relevant_json(cfg).dump());
}
std::uint64_t reference_config_hash(const ExperimentConfig& cfg) {
  return fnv1a64(reference_relevant_json(cfg).dump());
}
std::uint64_t conditions_hash(const ExperimentConfig& cfg) {
  return fnv1a64(full_json(cfg, false).dump());
}

GridOracle make_sqrt_density_oracle(const EnergyModel& energy, const Quadrature& quad) {
  const Vector nodes = quad.nodes;
  const EnergyModel* model = &energy;
  return GridOracle(energy.dims(), quad.size(), [model, nodes](std::span<const int> idx) {
    Vector z(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) z[static_cast<Index>(k)] = nodes[idx[k]];
    const Vector native = model->domain().from_cube(z);
    return std::exp(-0.5 * model->energy(native));
  });
}

namespace {

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

CoefficientTT load_coefficient(const std::string& path, Basis basis) {
  TensorTrain raw = load_tensor_train(path);
  TensorTrain tagged(raw.cores(), Ortho::right_left);
  // integrity: unit norm and orthogonal gauge must have survived the disk trip
  const double norm = frobenius_norm(tagged);
  if (std::abs(norm - 1.0) > 1e-8) throw DataError("cached base is not unit norm: " + path);
  return CoefficientTT(std::move(tagged), std::move(basis));
}

}  // namespace

BaseBuild build_base(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto energy = make_energy(cfg.model);
  Basis basis(cfg.basis_n);
  const Quadrature quad = gauss_legendre(cfg.quad_m);

  fs::create_directories(fs::path(out_dir) / "cache");
  const std::uint64_t h = base_config_hash(cfg);
  const fs::path tt_path = fs::path(out_dir) / "cache" / ("base_" + hex64(h) + ".ttv");
  const fs::path meta_path = fs::path(out_dir) / "cache" / ("base_" + hex64(h) + ".json");

  if (fs::exists(tt_path) && fs::exists(meta_path)) {
    BaseBuild out{load_coefficient(tt_path.string(), std::move(basis)), true, 0, tt_path.string()};
    return out;
  }

  GridOracle oracle = make_sqrt_density_oracle(*energy, quad);
  CrossConfig ccfg;
  ccfg.max_rank = cfg.tt_rank;
  ccfg.n_sweeps = cfg.tt_sweeps;
  ccfg.rel_tol = cfg.tt_tol;
  ccfg.seed = cfg.seed;
  CrossResult cross = cross_approximate(oracle, ccfg);

  const Matrix w = weight_matrix(basis, quad);
  CoefficientTT base = build_coefficient_tt(cross.tt, w, basis);
  save_tensor_train(base.train(), tt_path.string());
  json meta{{"config", base_relevant_json(cfg)},
            {"oracle_evals", cross.oracle_evals},
            {"sweeps", cross.sweeps_run},
            {"converged", cross.converged},
            {"ranks", cross.ranks}};
  std::ofstream(meta_path) << meta.dump(2) << "\n";
  append_manifest(out_dir, tt_path.string(), h);

  BaseBuild out{std::move(base), false, cross.oracle_evals, tt_path.string()};
  return out;
}

ReferenceResult estimate_logz_true(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto energy = make_energy(cfg.model);
  Basis basis(cfg.basis_n);
  const Quadrature quad = gauss_legendre(cfg.quad_m);

  fs::create_directories(fs::path(out_dir) / "cache");
  const std::uint64_t h = reference_config_hash(cfg);
  const fs::path tt_path = fs::path(out_dir) / "cache" / ("ref_" + hex64(h) + ".ttv");
  const fs::path meta_path = fs::path(out_dir) / "cache" / ("ref_" + hex64(h) + ".json");

  ReferenceResult res;
  res.path = tt_path.string();
  std::optional<CoefficientTT> ref;
  if (fs::exists(tt_path) && fs::exists(meta_path)) {
    ref.emplace(load_coefficient(tt_path.string(), basis));
    json meta;
    std::ifstream(meta_path) >> meta;
    res.cap_warning = meta.value("cap_warning", false);
    res.max_rank = meta.value("max_rank", Index{0});
    res.cache_hit = true;
  } else {
    GridOracle oracle = make_sqrt_density_oracle(*energy, quad);
    CrossResult cross = reference_cross(oracle, cfg.ref_tol, cfg.ref_max_rank,
                                        mix_seed(cfg.seed, 0x4ef), 40);
    res.cap_warning = cross.rank_cap_hit;
    res.max_rank = cross.tt.max_rank();
    const Matrix w = weight_matrix(basis, quad);
    ref.emplace(build_coefficient_tt(cross.tt, w, basis));
    save_tensor_train(ref->train(), tt_path.string());
    json meta{{"config", reference_relevant_json(cfg)},
              {"cap_warning", res.cap_warning},
              {"max_rank", res.max_rank},
              {"oracle_evals", cross.oracle_evals},
              {"converged", cross.converged}};
    std::ofstream(meta_path) << meta.dump(2) << "\n";
    append_manifest(out_dir, tt_path.string(), h);
  }

  const SampleBatch batch = draw_samples(*ref, cfg.ref_samples, mix_seed(cfg.seed, 0x10f2),
                                         cfg.sampler_grid, cfg.threads);
  Vector loss(batch.count());
  for (Index s = 0; s < batch.count(); ++s) {
    const Vector native = energy->domain().from_cube(batch.points.row(s).transpose());
    loss[s] = batch.log_density[s] + energy->energy(native) - energy->domain().log_jacobian();
  }
  const double mean = loss.mean();
  res.logz = -mean;
  res.se = std::sqrt((loss.array() - mean).square().sum() /
                     static_cast<double>(loss.size() - 1) / static_cast<double>(loss.size()));
  return res;
}

ErrorRatioResult error_ratio(double logz_true, double logz_tf, double logz_nf) {
  ErrorRatioResult r;
  r.numerator = logz_true - logz_tf;
  r.denominator = logz_true - logz_nf;
  if (r.numerator > 0.0 && r.denominator > 0.0) {
    r.valid = true;
    r.ratio = r.numerator / r.denominator;
  }
  return r;
}

SampleBatch make_corpus(const ExperimentConfig& cfg, const std::string& baseline,
                        const CoefficientTT* base, Index count, std::uint64_t seed) {
  if (baseline == "tt") {
    if (base == nullptr) throw ConfigError("tt baseline requires a built base");
    return draw_samples(*base, count, seed, cfg.sampler_grid, cfg.threads);
  }
  if (baseline != "gaussian") throw ConfigError("unknown baseline: " + baseline);
  const Index d = cfg.model.d;
  const double var = cfg.gaussian_var;
  SampleBatch batch;
  batch.seed = seed;
  batch.points.resize(count, d);
  batch.log_density.resize(count);
  const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * var);
  for (Index s = 0; s < count; ++s) {
    Rng rng(mix_seed(seed, 0x6a55 + static_cast<std::uint64_t>(s)));
    double q = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double z = rng.normal() * std::sqrt(var);
      batch.points(s, k) = z;
      q += z * z;
    }
    batch.log_density[s] = log_norm - 0.5 * q / var;
  }
  return batch;
}

RunReport run_single(const ExperimentConfig& cfg, const std::string& out_dir,
                     std::uint64_t run_seed, FlowModel* out_model) {
  const auto energy = make_energy(cfg.model);
  std::optional<BaseBuild> base;
  if (cfg.baseline == "tt") base = build_base(cfg, out_dir);

  const Index corpus_n = cfg.train.s_train + cfg.train.s_holdout;
  const SampleBatch corpus = make_corpus(cfg, cfg.baseline, base ? &base->base : nullptr,
                                         corpus_n, mix_seed(cfg.seed, fnv1a64(cfg.baseline)));
  FlowModel model = init_flow(cfg.model.d, cfg.flow_width, cfg.flow_depth, cfg.flow_length,
                              mix_seed(run_seed, 0x1f10));
  TrainConfig tcfg = cfg.train;
  tcfg.seed = run_seed;
  RunReport rep = train(std::move(model), corpus, *energy, tcfg);
  if (out_model) *out_model = rep.best_model;
  return rep;
}

CompareReport run_comparison(const ExperimentConfig& cfg, const std::string& out_dir) {
  CompareReport rep;
  rep.cfg = cfg;

  // identical-conditions guarantee: both arms share everything but the baseline
  {
    ExperimentConfig tf_cfg = cfg, nf_cfg = cfg;
    tf_cfg.baseline = "tt";
    nf_cfg.baseline = "gaussian";
    if (conditions_hash(tf_cfg) != conditions_hash(nf_cfg)) {
      throw ConfigError("internal: arm configurations diverge beyond the baseline");
    }
  }

  const auto energy = make_energy(cfg.model);
  BaseBuild base = build_base(cfg, out_dir);
  rep.reference = estimate_logz_true(cfg, out_dir);

  const Index corpus_n = cfg.train.s_train + cfg.train.s_holdout;
  const SampleBatch tf_corpus =
      make_corpus(cfg, "tt", &base.base, corpus_n, mix_seed(cfg.seed, fnv1a64("tt")));
  const SampleBatch nf_corpus =
      make_corpus(cfg, "gaussian", nullptr, corpus_n, mix_seed(cfg.seed, fnv1a64("gaussian")));

  struct Job {
    int arm;  // 0 = tf, 1 = nf
    int run;
  };
  std::vector<Job> jobs;
  for (int r = 0; r < cfg.runs; ++r) {
    jobs.push_back({0, r});
    jobs.push_back({1, r});
  }
  std::vector<RunReport> results(jobs.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, cfg.threads);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        const Job job = jobs[i];
        const std::uint64_t run_seed = mix_seed(cfg.seed, 0x2a0 + job.run);
        RunReport r;
        try {
          FlowModel model = init_flow(cfg.model.d, cfg.flow_width, cfg.flow_depth,
                                      cfg.flow_length, mix_seed(run_seed, 0x1f10));
          TrainConfig tcfg = cfg.train;
          tcfg.seed = run_seed;
          r = train(std::move(model), job.arm == 0 ? tf_corpus : nf_corpus, *energy, tcfg);
        } catch (const std::exception& e) {
          r.seed = run_seed;
          r.status = std::string("failed: ") + e.what();
        }
        results[i] = std::move(r);
      }
    });
  }
  for (auto& t : pool) t.join();

  auto gather = [&](int arm, const char* name) {
    ArmReport a;
    a.arm = name;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].arm == arm) a.runs.push_back(results[i]);
    }
    int surv = 0;
    double fin = 0.0, start = 0.0;
    std::size_t max_len = 0;
    for (const auto& r : a.runs) {
      if (r.status == "ok") {
        ++surv;
        fin += r.final_loss;
        start += r.start_loss;
        max_len = std::max(max_len, r.holdout_curve.size());
      }
    }
    a.surviving = surv;
    if (surv > 0) {
      a.mean_final = fin / surv;
      a.mean_start = start / surv;
      a.mean_curve.assign(max_len, 0.0);
      for (std::size_t e = 0; e < max_len; ++e) {
        int cnt = 0;
        double acc = 0.0;
        for (const auto& r : a.runs) {
          if (r.status == "ok" && e < r.holdout_curve.size()) {
            acc += r.holdout_curve[e];
            ++cnt;
          }
        }
        a.mean_curve[e] = acc / std::max(1, cnt);
      }
    }
    return a;
  };
  rep.tf = gather(0, "tf");
  rep.nf = gather(1, "nf");

  const int need = std::min(3, cfg.runs);
  if (rep.tf.surviving < need || rep.nf.surviving < need) {
    throw NumericError("comparison aborted: fewer than " + std::to_string(need) +
                       " surviving runs per arm (tf=" + std::to_string(rep.tf.surviving) +
                       ", nf=" + std::to_string(rep.nf.surviving) + ")");
  }

  rep.ratio = error_ratio(rep.reference.logz, -rep.tf.mean_final, -rep.nf.mean_final);
  return rep;
}

namespace {

json run_json(const RunReport& r) {
  return json{{"seed", r.seed},
              {"status", r.status},
              {"start_loss", r.start_loss},
              {"start_loss_se", r.start_loss_se},
              {"final_loss", r.final_loss},
              {"final_loss_se", r.final_loss_se},
              {"best_epoch", r.best_epoch},
              {"steps", r.steps_run},
              {"holdout_curve", r.holdout_curve},
              {"lipschitz", r.lipschitz}};
}

json arm_json(const ArmReport& a) {
  json runs = json::array();
  for (const auto& r : a.runs) runs.push_back(run_json(r));
  return json{{"arm", a.arm},          {"surviving", a.surviving},
              {"mean_start", a.mean_start}, {"mean_final", a.mean_final},
              {"mean_curve", a.mean_curve}, {"runs", runs}};
}

}  // namespace

json compare_report_json(const CompareReport& rep) {
  json j;
  j["config_hash"] = hex64(config_hash(rep.cfg));
  j["conditions_hash"] = hex64(conditions_hash(rep.cfg));
  j["model"] = rep.cfg.model.type;
  j["d"] = rep.cfg.model.d;
  j["logz_true"] = {{"value", rep.reference.logz},
                    {"se", rep.reference.se},
                    {"cap_warning", rep.reference.cap_warning},
                    {"max_rank", rep.reference.max_rank}};
  j["arms"] = {{"tf", arm_json(rep.tf)}, {"nf", arm_json(rep.nf)}};
  if (rep.ratio.valid) {
    j["error_ratio"] = rep.ratio.ratio;
  } else {
    j["ordering_violation"] = {{"numerator", rep.ratio.numerator},
                               {"denominator", rep.ratio.denominator}};
  }
  return j;
}

void write_compare_outputs(const CompareReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::uint64_t h = config_hash(rep.cfg);

  const fs::path report_path = fs::path(out_dir) / "report.json";
  std::ofstream(report_path) << compare_report_json(rep).dump(2) << "\n";
  append_manifest(out_dir, report_path.string(), h);

  const fs::path curves_path = fs::path(out_dir) / "curves.csv";
  {
    std::ofstream f(curves_path);
    f << "epoch,loss_tf,loss_nf\n";
    f.precision(17);
    const std::size_t n = std::max(rep.tf.mean_curve.size(), rep.nf.mean_curve.size());
    for (std::size_t e = 0; e < n; ++e) {
      f << (e + 1) << ",";
      if (e < rep.tf.mean_curve.size()) f << rep.tf.mean_curve[e];
      f << ",";
      if (e < rep.nf.mean_curve.size()) f << rep.nf.mean_curve[e];
      f << "\n";
    }
  }
  append_manifest(out_dir, curves_path.string(), h);

  // wall-clock timings live outside report.json so reports stay bitwise
  // reproducible
  json timings = json::object();
  for (const auto* a : {&rep.tf, &rep.nf}) {
    json arr = json::array();
    for (const auto& r : a->runs) arr.push_back(r.seconds);
    timings[a->arm] = arr;
  }
  std::ofstream(fs::path(out_dir) / "timings.json") << timings.dump(2) << "\n";
}

Matrix moment_grid(const Matrix& native_samples, Index side) {
  if (native_samples.cols() != side * side) {
    throw DimensionError("moment grid needs side^2 columns");
  }
  const RowVector mean = native_samples.colwise().mean();
  Matrix grid(side, side);
  for (Index i = 0; i < side; ++i) {
    for (Index j = 0; j < side; ++j) grid(i, j) = mean[i * side + j];
  }
  return grid;
}

Matrix marginal_histogram(const Matrix& s, Index dim_i, Index dim_j, Index bins, double lo_i,
                          double hi_i, double lo_j, double hi_j) {
  if (dim_i < 0 || dim_j < 0 || dim_i >= s.cols() || dim_j >= s.cols() || dim_i == dim_j) {
    throw ConfigError("invalid histogram dimensions");
  }
  Matrix h = Matrix::Zero(bins, bins);
  long long inside = 0;
  const double wi = (hi_i - lo_i) / static_cast<double>(bins);
  const double wj = (hi_j - lo_j) / static_cast<double>(bins);
  for (Index r = 0; r < s.rows(); ++r) {
    const double x = s(r, dim_i), y = s(r, dim_j);
    if (x < lo_i || x >= hi_i || y < lo_j || y >= hi_j) continue;
    const auto bi = static_cast<Index>((x - lo_i) / wi);
    const auto bj = static_cast<Index>((y - lo_j) / wj);
    h(std::min(bi, bins - 1), std::min(bj, bins - 1)) += 1.0;
    ++inside;
  }
  if (inside == 0) throw DataError("no samples inside the histogram box");
  h /= static_cast<double>(inside) * wi * wj;
  return h;
}

std::vector<Index> nearest_mode_counts(const Matrix& s, const std::vector<Vector>& means) {
  std::vector<Index> counts(means.size(), 0);
  const Index d = s.cols();
  for (Index r = 0; r < s.rows(); ++r) {
    const double x = s(r, d - 2), y = s(r, d - 1);
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < means.size(); ++m) {
      const Index md = means[m].size();
      const double dx = x - means[m][md - 2], dy = y - means[m][md - 1];
      const double dist = dx * dx + dy * dy;
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<Index>(m);
      }
    }
    counts[best] += 1;
  }
  return counts;
}

void save_matrix_csv(const Matrix& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.precision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      f << m(i, j);
      if (j + 1 < m.cols()) f << ",";
    }
    f << "\n";
  }
}

void append_manifest(const std::string& out_dir, const std::string& file_path,
                     std::uint64_t cfg_hash) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const fs::path manifest = fs::path(out_dir) / "manifest.txt";
  std::map<std::string, std::string> lines;
  if (fs::exists(manifest)) {
    std::ifstream f(manifest);
    std::string line;
    while (std::getline(f, line)) {
      const auto tab = line.find('\t');
      if (tab != std::string::npos) lines[line.substr(0, tab)] = line;
    }
  }
  std::ifstream in(file_path, std::ios::binary);
  std::ostringstream content;
  content << in.rdbuf();
  const std::uint64_t file_hash = fnv1a64(content.str());
  const std::string rel = fs::relative(file_path, out_dir).string();
  lines[rel] = rel + "\t" + hex64(file_hash) + "\t" + hex64(cfg_hash);
  std::ofstream out(manifest, std::ios::trunc);
  for (const auto& [k, v] : lines) out << v << "\n";
}

}  // namespace ttvi
