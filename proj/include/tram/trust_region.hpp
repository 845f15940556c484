#pragma once

// Trust-region distance estimates between predictive distributions, the
// differentiable penalty nodes used by the trust-region regularizers, the
// EMA shadow state, and the diagonal empirical Fisher.
//
// Two roles for the same distances:
//   - as a radius estimate d the value is a plain double, treated as a
//     constant by the optimizers;
//   - as a regularization penalty the divergence is built out of tape ops so
//     its gradient flows into the parameters.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tram/autodiff.hpp"
#include "tram/models.hpp"
#include "tram/params.hpp"
#include "tram/rng.hpp"
#include "tram/tensor.hpp"

namespace tram {

enum class TrKind { kThetaPrev, kTheta0, kInputNoise };
enum class Metric { kForwardKl, kReverseKl, kSymmetricKl, kMmd, kL2 };
enum class KlDirection { kForward, kReverse };

const char* tr_kind_name(TrKind kind);
const char* metric_name(Metric metric);
Metric parse_metric(const std::string& name);

struct TrustRegionEstimate {
  double d = 0.0;  // >= 0, finite
  TrKind kind = TrKind::kThetaPrev;
  Metric metric = Metric::kForwardKl;
};

struct NoiseConfig {
  double sigma = 0.1;  // > 0
};

struct EmaState {
  ParameterSet shadow;
  double decay = 0.999;  // in (0, 1)
};

struct DiagFisher {
  std::map<std::string, Tensor> diag;  // entries >= 0, shapes match params
};

// Batch-mean divergence between two predictive distributions on the same
// batch. Forward direction treats the first argument as the target:
// kl_divergence(p, q, kForward) = mean_i KL(p_i || q_i).
double kl_divergence(const PredictiveDistribution& p, const PredictiveDistribution& q,
                     KlDirection direction);

// Squared MMD with the inverse multiquadratic kernel k(a,b) = 1/(1+||a-b||^2)
// over probability rows, biased V-statistic, clamped at 0.
double mmd_distance(const PredictiveDistribution& p, const PredictiveDistribution& q);

// Batch-mean Euclidean distance between probability rows.
double l2_distance(const PredictiveDistribution& p, const PredictiveDistribution& q);

// Dispatch on metric; the first argument is the target for KL directions.
double distribution_distance(const PredictiveDistribution& p, const PredictiveDistribution& q,
                             Metric metric);

// d from a reference parameter snapshot: distance(p_ref -> p_cur), both
// evaluated on the same batch by the caller.
TrustRegionEstimate estimate_d_theta(const PredictiveDistribution& p_ref,
                                     const PredictiveDistribution& p_cur,
                                     TrKind kind = TrKind::kThetaPrev,
                                     Metric metric = Metric::kForwardKl);

// d from input noise: one z ~ N(0, sigma^2) per input element, then
// distance(p(x+z) -> p(x)). Runs two forward passes (noised and clean).
TrustRegionEstimate estimate_d_x(const MLPConfig& cfg, const ParameterSet& params,
                                 const Tensor& batch_x, const NoiseConfig& noise, Rng& rng,
                                 Counters* counters = nullptr,
                                 Metric metric = Metric::kForwardKl);

// Same, reusing an already-computed clean distribution: one extra forward.
TrustRegionEstimate estimate_d_x(const MLPConfig& cfg, const ParameterSet& params,
                                 const Tensor& batch_x, const PredictiveDistribution& clean,
                                 const NoiseConfig& noise, Rng& rng,
                                 Counters* counters = nullptr,
                                 Metric metric = Metric::kForwardKl);

// x + sigma * N(0, 1), one draw per element.
Tensor add_input_noise(const Tensor& x, double sigma, Rng& rng);

// Differentiable forward KL against a frozen reference:
// mean_i sum_c P_ref[i,c] * (log P_ref[i,c] - cur_log_probs[i,c]).
// The reference is a constant; gradients flow through cur_log_probs only.
Tensor kl_to_reference_node(const PredictiveDistribution& ref, const Tensor& cur_log_probs);

// Differentiable forward KL between two live distributions on one tape:
// mean_i sum_c exp(noised[i,c]) * (noised[i,c] - clean[i,c]).
// Gradients flow through both arguments.
Tensor kl_both_sides_node(const Tensor& noised_log_probs, const Tensor& clean_log_probs);

// base_loss + lambda * d as a tape node; lambda == 0 returns base_loss
// unchanged.
Tensor penalized_loss(const Tensor& base_loss, const Tensor& d_node, double lambda);

// shadow <- decay * shadow + (1 - decay) * params, elementwise.
void ema_update(EmaState& state, const ParameterSet& params);

struct FisherSweep {
  DiagFisher fisher;   // batch mean of squared per-example gradients
  GradMap mean_grad;   // gradient of the batch-mean NLL
  double mean_nll = 0.0;
};

// One pass over the batch computing the diagonal empirical Fisher, the mean
// gradient, and the mean NLL together. Counted as one forward and one
// backward batch pass.
FisherSweep fisher_sweep(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                         const std::vector<std::size_t>& labels, Counters* counters = nullptr);

// Fisher only, at clean inputs or at x + z.
DiagFisher fisher_diag(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                       const std::vector<std::size_t>& labels, Counters* counters = nullptr);
DiagFisher fisher_diag(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                       const std::vector<std::size_t>& labels, const NoiseConfig& noise,
                       Rng& rng, Counters* counters = nullptr);

}  // namespace tram
