// Command-line driver: builds tensor-train base distributions, draws samples,
// trains tensorizing/normalizing flows and emits comparison reports.

#include "ttvi/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitOrdering = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> threads;
};

ttvi::ExperimentConfig load_with_overrides(const CommonOpts& o) {
  ttvi::ExperimentConfig cfg = ttvi::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.threads) cfg.threads = *o.threads;
  cfg.train.seed = cfg.seed;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config (json)")->required();
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "override config seed");
  cmd->add_option("--runs", o.runs, "override number of runs per arm");
  cmd->add_option("--threads", o.threads, "worker threads");
}

int cmd_build_base(const CommonOpts& o) {
  const auto cfg = load_with_overrides(o);
  const auto build = ttvi::build_base(cfg, o.out_dir);
  std::cout << (build.cache_hit ? "cache hit: " : "built: ") << build.path << "\n"
            << "oracle evaluations: " << build.oracle_evals << "\n";
  return kExitOk;
}

int cmd_sample(const CommonOpts& o, long long count, const std::string& model_ckpt) {
  const auto cfg = load_with_overrides(o);
  const auto build = ttvi::build_base(cfg, o.out_dir);
  const auto n = static_cast<ttvi::Index>(count);
  ttvi::SampleBatch batch =
      ttvi::draw_samples(build.base, n, ttvi::mix_seed(cfg.seed, 0x5a3), cfg.sampler_grid,
                         cfg.threads);
  fs::create_directories(o.out_dir);
  if (!model_ckpt.empty()) {
    const ttvi::FlowModel model = ttvi::load_flow(model_ckpt);
    ttvi::LogdetConfig ld = cfg.train.eval_logdet;
    ld.seed = ttvi::mix_seed(cfg.seed, 0xe7a1);
    const auto fwd = ttvi::flow_forward_const(model, batch.points, ttvi::Mode::inference, ld);
    batch.points = fwd.x;
    batch.log_density -= fwd.logdet;
  }
  const std::string path = (fs::path(o.out_dir) / "samples.csv").string();
  ttvi::save_samples_csv(batch, path);
  ttvi::append_manifest(o.out_dir, path, ttvi::config_hash(cfg));
  std::cout << "wrote " << batch.count() << " samples to " << path << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& o) {
  const auto cfg = load_with_overrides(o);
  fs::create_directories(o.out_dir);
  ttvi::FlowModel best;
  const ttvi::RunReport rep =
      ttvi::run_single(cfg, o.out_dir, ttvi::mix_seed(cfg.seed, 0x2a0), &best);

  const std::string ckpt = (fs::path(o.out_dir) / "model.tfv").string();
  ttvi::save_flow(best, ckpt);
  json j{{"baseline", cfg.baseline},
         {"status", rep.status},
         {"start_loss", rep.start_loss},
         {"final_loss", rep.final_loss},
         {"final_loss_se", rep.final_loss_se},
         {"best_epoch", rep.best_epoch},
         {"holdout_curve", rep.holdout_curve},
         {"lipschitz", rep.lipschitz}};
  const std::string rep_path = (fs::path(o.out_dir) / "train_report.json").string();
  std::ofstream(rep_path) << j.dump(2) << "\n";
  ttvi::append_manifest(o.out_dir, rep_path, ttvi::config_hash(cfg));
  ttvi::append_manifest(o.out_dir, ckpt, ttvi::config_hash(cfg));
  std::cout << "start loss " << rep.start_loss << ", final loss " << rep.final_loss << " ("
            << rep.status << ")\n";
  return rep.status == "ok" ? kExitOk : kExitNumeric;
}

int cmd_compare(const CommonOpts& o) {
  const auto cfg = load_with_overrides(o);
  const ttvi::CompareReport rep = ttvi::run_comparison(cfg, o.out_dir);
  ttvi::write_compare_outputs(rep, o.out_dir);
  std::cout << "tf: start " << rep.tf.mean_start << " final " << rep.tf.mean_final << " ("
            << rep.tf.surviving << " runs)\n"
            << "nf: start " << rep.nf.mean_start << " final " << rep.nf.mean_final << " ("
            << rep.nf.surviving << " runs)\n"
            << "-logZ_true " << -rep.reference.logz << " +- " << rep.reference.se << "\n";
  if (rep.ratio.valid) {
    std::cout << "error ratio " << rep.ratio.ratio << "\n";
    return kExitOk;
  }
  std::cout << "ordering violation: numerator " << rep.ratio.numerator << ", denominator "
            << rep.ratio.denominator << "\n";
  return kExitOrdering;
}

int cmd_report(const CommonOpts& o, const std::string& samples_csv, int hist_i, int hist_j,
               int bins, int moment_side) {
  const auto cfg = load_with_overrides(o);
  const fs::path report_path = fs::path(o.out_dir) / "report.json";
  if (fs::exists(report_path)) {
    json j;
    std::ifstream(report_path) >> j;
    std::cout << "model: " << j.value("model", std::string("?")) << "\n";
    if (j.contains("logz_true")) {
      std::cout << "-logZ_true: " << -j["logz_true"]["value"].get<double>() << " +- "
                << j["logz_true"]["se"].get<double>() << "\n";
    }
    for (const char* arm : {"tf", "nf"}) {
      if (j.contains("arms") && j["arms"].contains(arm)) {
        const auto& a = j["arms"][arm];
        std::cout << arm << ": start " << a["mean_start"].get<double>() << " final "
                  << a["mean_final"].get<double>() << " (" << a["surviving"].get<int>()
                  << " runs)\n";
      }
    }
    if (j.contains("error_ratio")) {
      std::cout << "error ratio: " << j["error_ratio"].get<double>() << "\n";
    } else if (j.contains("ordering_violation")) {
      std::cout << "ordering violation recorded\n";
    }
  } else {
    std::cout << "no report.json under " << o.out_dir << "\n";
  }

  if (!samples_csv.empty()) {
    // load csv (header x1..xd,logp0)
    std::ifstream f(samples_csv);
    if (!f) throw ttvi::DataError("cannot open samples: " + samples_csv);
    std::string line;
    std::getline(f, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ttvi::DataError("empty samples file");
    const auto d = static_cast<ttvi::Index>(rows[0].size()) - 1;
    ttvi::Matrix pts(static_cast<ttvi::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (ttvi::Index k = 0; k < d; ++k) pts(static_cast<ttvi::Index>(r), k) = rows[r][k];
    }
    const auto energy = ttvi::make_energy(cfg.model);
    ttvi::Matrix native(pts.rows(), d);
    for (ttvi::Index r = 0; r < pts.rows(); ++r) {
      native.row(r) = energy->domain().from_cube(pts.row(r).transpose()).transpose();
    }
    if (hist_i > 0 && hist_j > 0) {
      const double b = cfg.model.box_half_width;
      const ttvi::Matrix h = ttvi::marginal_histogram(native, hist_i - 1, hist_j - 1, bins, -b,
                                                      b, -b, b);
      const std::string path = (fs::path(o.out_dir) / "hist.csv").string();
      ttvi::save_matrix_csv(h, path);
      ttvi::append_manifest(o.out_dir, path, ttvi::config_hash(cfg));
      std::cout << "wrote " << path << "\n";
    }
    if (moment_side > 0) {
      const ttvi::Matrix g = ttvi::moment_grid(native, moment_side);
      const std::string path = (fs::path(o.out_dir) / "moments.csv").string();
      ttvi::save_matrix_csv(g, path);
      ttvi::append_manifest(o.out_dir, path, ttvi::config_hash(cfg));
      std::cout << "wrote " << path << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tensor-train base distributions + residual flows for variational inference"};
  app.require_subcommand(1);

  CommonOpts base_o, sample_o, train_o, compare_o, report_o;
  long long sample_count = 10000;
  std::string sample_model;
  std::string report_samples;
  int hist_i = 0, hist_j = 0, bins = 40, moment_side = 0;

  add_common(app.add_subcommand("build-base", "build and cache the TT base distribution"),
             base_o);
  auto* sample_cmd =
      app.add_subcommand("sample", "draw base (or pushforward) samples with densities");
  add_common(sample_cmd, sample_o);
  sample_cmd->add_option("--count", sample_count, "number of samples");
  sample_cmd->add_option("--model", sample_model, "flow checkpoint to push samples through");
  add_common(app.add_subcommand("train", "train a single arm selected by the config baseline"),
             train_o);
  add_common(app.add_subcommand("compare", "train TF and NF under identical conditions"),
             compare_o);
  auto* report_cmd = app.add_subcommand("report", "summarize outputs; emit plot csv grids");
  add_common(report_cmd, report_o);
  report_cmd->add_option("--samples", report_samples, "samples csv for histograms/moments");
  report_cmd->add_option("--hist-i", hist_i, "first histogram dimension (1-based)");
  report_cmd->add_option("--hist-j", hist_j, "second histogram dimension (1-based)");
  report_cmd->add_option("--bins", bins, "histogram bins per side");
  report_cmd->add_option("--moments", moment_side, "emit side x side moment grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("build-base")) return cmd_build_base(base_o);
    if (app.got_subcommand("sample")) return cmd_sample(sample_o, sample_count, sample_model);
    if (app.got_subcommand("train")) return cmd_train(train_o);
    if (app.got_subcommand("compare")) return cmd_compare(compare_o);
    if (app.got_subcommand("report")) {
      return cmd_report(report_o, report_samples, hist_i, hist_j, bins, moment_side);
    }
  } catch (const ttvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ttvi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitConfig;
}
