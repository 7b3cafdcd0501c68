#pragma once

#include "ttvi/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ttvi {

enum class Mode { train, inference };

// Feed-forward ReLU network G: R^d -> R^d with `depth` hidden layers of
// uniform width. weights[l] maps layer l input (rows) to output (cols);
// biases are row vectors.
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<RowVector> biases;

  Index input_dim() const { return weights.front().rows(); }
  Index output_dim() const { return weights.back().cols(); }
  Index layer_count() const { return static_cast<Index>(weights.size()); }
};

struct BatchNormState {
  RowVector gamma;
  RowVector beta;
  RowVector running_mean;
  RowVector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// One residual map F(x) = x + BN(G(x)). The batch norm sits inside the
// residual branch, so zero MLP output makes the layer exactly the identity;
// its Jacobian flows through DG in the log-det series (no separate term).
// layer_forward's train mode normalizes by batch statistics (classic batch
// norm); the training loss itself applies the running scales so the branch
// stays a perturbation whose log-det series converges (see training.cpp).
struct ResidualLayer {
  MlpParams mlp;
  BatchNormState bn;
  bool has_bn = true;
};

struct FlowModel {
  std::vector<ResidualLayer> layers;
  Index dim = 0;

  Index depth() const { return static_cast<Index>(layers.size()); }
};

struct LogdetConfig {
  int order = 10;            // truncation M of the trace series
  int probes = 1;            // Hutchinson probes P per sample
  std::uint64_t seed = 0;    // probe stream seed
  bool exact_if_small = true;  // use the dense Jacobian when d <= 16
  // key the probe stream by the sample's content instead of its batch index;
  // the training path uses this so the loss is a pure mean over samples
  bool content_keyed_probes = false;
};

constexpr Index kExactLogdetMaxDim = 16;

// All MLP weights and biases i.i.d. uniform on [-0.25, 0.25]; batch norm at
// gamma = 1, beta = 0, running stats (0, 1).
FlowModel init_flow(Index d, Index width, Index depth, Index flow_length, std::uint64_t seed);

// Zero all MLP parameters (layers become exact identities); used by tests.
void zero_mlp(FlowModel& model);

// MLP output for a batch (rows are samples).
Matrix mlp_forward(const MlpParams& mlp, const Matrix& x);

// y = x + BN(G(x)). Train mode normalizes by batch statistics and updates the
// running stats; inference mode uses the running stats and mutates nothing.
Matrix layer_forward(ResidualLayer& layer, const Matrix& x, Mode mode);
Matrix layer_forward_const(const ResidualLayer& layer, const Matrix& x, Mode mode);

// Normalizer gain 1/sqrt(max(var, 1) + eps): the gain is floored at one so a
// small-variance branch is never amplified. Amplification would push the
// residual Jacobian outside the invertible region and outside the log-det
// series' convergence disc.
RowVector bn_gain(const RowVector& var, double eps);

// Probe stream derivation shared by the inference series and the training
// tape, so the two loss paths agree bitwise on identical configurations.
std::uint64_t logdet_probe_seed(const LogdetConfig& cfg, const Matrix& x, Index sample,
                                int probe);

// Per-sample truncated-series log|det DF| estimates at inputs x (batch):
//   sum_{m=1..M} (-1)^{m+1}/m * (1/P) sum_p v^T (DG)^m v,
// Rademacher probes, Jacobian-vector products only. Batch-norm scales use the
// statistics the forward pass would apply in `mode`. Content-keyed probe
// streams hash `probe_key` rows (the flow keys by the original base samples);
// defaults to x.
Vector logdet_series(const ResidualLayer& layer, const Matrix& x, Mode mode,
                     const LogdetConfig& cfg, const Matrix* probe_key = nullptr);

// Dense log|det(I + DG)| per sample via d Jacobian-vector products and LU.
// Testing oracle; also the evaluation path for d <= 16 runs.
Vector logdet_exact(const ResidualLayer& layer, const Matrix& x, Mode mode);

struct FlowForwardResult {
  Matrix x;        // pushed batch
  Vector logdet;   // per-sample accumulated log|det DT|
};

FlowForwardResult flow_forward(FlowModel& model, const Matrix& z, Mode mode,
                               const LogdetConfig& cfg);
FlowForwardResult flow_forward_const(const FlowModel& model, const Matrix& z, Mode mode,
                                     const LogdetConfig& cfg);

// Product over layers of (prod_l ||W_l||_2) * max_f |gamma_f| / sqrt(var_f + eps),
// a cheap upper-bound monitor for the residual branch Lipschitz constant.
double lipschitz_upper_bound(const FlowModel& model);

// Checkpoint format "TFV1": magic | u64 d, width, depth, K | per layer, f64:
// W_1, b_1, ..., W_L, b_L, gamma, beta, running_mean, running_var.
void save_flow(const FlowModel& model, const std::string& path);
FlowModel load_flow(const std::string& path);

}  // namespace ttvi
