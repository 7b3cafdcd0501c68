#pragma once

#include "ttvi/basis.hpp"
#include "ttvi/energy.hpp"
#include "ttvi/sampler.hpp"
#include "ttvi/training.hpp"
#include "ttvi/tt_cross.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ttvi {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON). Missing fields take the model's defaults.
// ---------------------------------------------------------------------------
struct ModelConfig {
  std::string type;  // mixture | gl1d | gl2d
  Index d = 0;
  double beta = 0.0;
  double delta = 0.0;
  double h = 0.0;
  double box_half_width = 0.0;
};

struct ExperimentConfig {
  ModelConfig model;
  // zero means "use the model type's default"
  Index basis_n = 0;
  Index quad_m = 0;
  Index tt_rank = 0;
  int tt_sweeps = 4;
  double tt_tol = 1e-6;
  double ref_tol = 1e-10;
  Index ref_max_rank = 200;
  Index ref_samples = 10000;
  Index flow_width = 0;
  Index flow_depth = 5;
  Index flow_length = 0;
  TrainConfig train;
  std::string baseline = "tt";  // tt | gaussian; `compare` runs both
  double gaussian_var = 0.2;
  Index sampler_grid = 1024;
  std::uint64_t seed = 7;
  int runs = 10;
  int threads = 2;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
std::unique_ptr<EnergyModel> make_energy(const ModelConfig& m);

// hash of the canonical serialized config; `base` variants cover only the
// fields the cached artifact depends on
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::uint64_t base_config_hash(const ExperimentConfig& cfg);
std::uint64_t reference_config_hash(const ExperimentConfig& cfg);
// identical-conditions hash: everything except the baseline selection
std::uint64_t conditions_hash(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Base distribution construction with on-disk caching.
// ---------------------------------------------------------------------------
struct BaseBuild {
  CoefficientTT base;
  bool cache_hit = false;
  long long oracle_evals = 0;
  std::string path;
};

GridOracle make_sqrt_density_oracle(const EnergyModel& energy, const Quadrature& quad);
BaseBuild build_base(const ExperimentConfig& cfg, const std::string& out_dir);

struct ReferenceResult {
  double logz = 0.0;  // logZ_true estimate (loss = -logz at the optimum)
  double se = 0.0;
  bool cap_warning = false;
  Index max_rank = 0;
  bool cache_hit = false;
  std::string path;
};

ReferenceResult estimate_logz_true(const ExperimentConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Comparison runs.
// ---------------------------------------------------------------------------
struct ErrorRatioResult {
  bool valid = false;
  double ratio = 0.0;
  double numerator = 0.0;    // logZ_true - logZ_TF
  double denominator = 0.0;  // logZ_true - logZ_NF
};

// (logZ_true - logZ_TF) / (logZ_true - logZ_NF); Monte Carlo noise can break
// the sign preconditions, in which case the signed parts are reported and
// `valid` stays false (never clamped).
ErrorRatioResult error_ratio(double logz_true, double logz_tf, double logz_nf);

struct ArmReport {
  std::string arm;  // "tf" | "nf"
  std::vector<RunReport> runs;
  std::vector<double> mean_curve;
  double mean_final = 0.0;
  double mean_start = 0.0;
  int surviving = 0;
};

struct CompareReport {
  ExperimentConfig cfg;
  ReferenceResult reference;
  ArmReport tf;
  ArmReport nf;
  ErrorRatioResult ratio;
};

// Generates the per-arm corpora (TT base vs N(0, gaussian_var I) on the
// cube), trains `runs` seeds per arm under identical conditions on a worker
// pool, and aggregates. Aborts when fewer than min(3, runs) runs survive in
// either arm.
CompareReport run_comparison(const ExperimentConfig& cfg, const std::string& out_dir);

// single-arm corpus + training, honoring cfg.baseline
RunReport run_single(const ExperimentConfig& cfg, const std::string& out_dir,
                     std::uint64_t run_seed, FlowModel* out_model = nullptr);

SampleBatch make_corpus(const ExperimentConfig& cfg, const std::string& baseline,
                        const CoefficientTT* base, Index count, std::uint64_t seed);

// Writes report.json, curves.csv (epoch,loss_tf,loss_nf), timings.json and
// manifest.txt under out_dir. Timings are kept out of report.json so repeated
// runs of the same config produce bitwise-identical reports.
void write_compare_outputs(const CompareReport& rep, const std::string& out_dir);

nlohmann::json compare_report_json(const CompareReport& rep);

// ---------------------------------------------------------------------------
// Plot-data helpers.
// ---------------------------------------------------------------------------

// Per-site sample means reshaped to side x side (row-major sites).
Matrix moment_grid(const Matrix& native_samples, Index side);

// 2-D histogram density over [lo_i,hi_i] x [lo_j,hi_j]; out-of-range samples
// are dropped and the density integrates to exactly 1 over the box.
Matrix marginal_histogram(const Matrix& native_samples, Index dim_i, Index dim_j, Index bins,
                          double lo_i, double hi_i, double lo_j, double hi_j);

// nearest-mean assignment counts over the trailing two coordinates
std::vector<Index> nearest_mode_counts(const Matrix& native_samples,
                                       const std::vector<Vector>& means);

void save_matrix_csv(const Matrix& m, const std::string& path);

// manifest line: <path>\t<fnv1a64 of content>\t<producing config hash>
void append_manifest(const std::string& out_dir, const std::string& file_path,
                     std::uint64_t cfg_hash);

}  // namespace ttvi
