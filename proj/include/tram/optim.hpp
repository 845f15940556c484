#pragma once

// The optimizer family: plain SGD/Adam, sharpness-aware ascent-descent
// variants (SAM, ASAM, FSAM), trust-region regularizers (TRPO-style, noised
// consistency, EMA anchor), their naive combinations, and the trust-region
// aware steps that substitute an estimated radius d for the fixed rho.
//
// Every step function performs a fixed number of forward and backward batch
// passes and asserts its own counter deltas:
//
//   descent_step            1 forward, 1 backward
//   sam_family_step         2 forwards, 2 backwards
//   tr_regularized_step     2 forwards, 1 backward
//   tram_step               3 forwards, 2 backwards
//   tram_fisher_step        2 forwards, 2 backwards
//   combined_step           3 forwards, 2 backwards
//
// A violated contract throws std::logic_error.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "tram/autodiff.hpp"
#include "tram/data.hpp"
#include "tram/models.hpp"
#include "tram/params.hpp"
#include "tram/rng.hpp"
#include "tram/trust_region.hpp"

namespace tram {

enum class Algo {
  kSgd,
  kAdam,
  kSam,
  kAsam,
  kFsam,
  kTrpo,
  kR3f,
  kMesa,
  kTramThetaPrev,
  kTramTheta0,
  kTramX,
  kTramFisher,
  kAsamTrpo,
  kAsamR3f,
  kAsamMesa,
};

enum class SamVariant { kSam, kAsam, kFsam };
enum class TrMethod { kTrpo, kR3f, kMesa };

Algo parse_algo(const std::string& tag);
const char* algo_name(Algo algo);
bool algo_uses_ema(Algo algo);

struct SamConfig {
  double rho = 0.5;                // ascent radius for SAM/ASAM
  std::optional<double> rho_cap;   // optional clip applied to the estimated d
};

struct FsamConfig {
  double gamma = 0.1;  // radius scale, > 0
  double eta = 0.1;    // Fisher damping, >= 0
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double lr = 1e-3;
  double weight_decay = 0.0;  // L2 pull added to the gradient; off by default
};

struct Perturbation {
  std::map<std::string, Tensor> eps;
  double radius = 0.0;      // the rho/gamma/d actually used
  bool degenerate = false;  // zero gradient or zero radius: eps is all zeros
};

struct StepReport {
  double loss_before = 0.0;  // task loss at the incoming parameters
  double loss_after = 0.0;   // loss whose gradient drove the descent
  double d = 0.0;            // trust-region estimate, 0 where not applicable
  double eps_norm = 0.0;     // global L2 norm of the applied perturbation
  std::uint64_t forwards = 0;
  std::uint64_t backwards = 0;
  double wall_ms = 0.0;
  bool degenerate = false;
};

struct StepConfig {
  SamConfig sam;
  FsamConfig fsam;
  NoiseConfig noise;
  double lambda = 0.1;                 // trust-region penalty weight
  Metric metric = Metric::kForwardKl;  // distance used for d estimates
  std::optional<double> force_d;       // test hook: overrides the estimated d
                                       // value; the estimation pass still runs
};

struct OptimizerState {
  MLPConfig model;
  AdamState adam;
  ParameterSet theta_prev;  // parameters from the start of the previous step
  ParameterSet theta_0;     // immutable snapshot of the initial parameters
  std::optional<EmaState> ema;
  Counters counters;
  Rng noise;  // stream for input-noise draws
  bool use_sgd = false;
};

OptimizerState make_optimizer(const MLPConfig& model, const ParameterSet& params, Algo algo,
                              const AdamState& adam, const Rng& noise_stream,
                              double ema_decay = 0.999);

// Raw parameter updates. Moment tensors are created on first use.
void adam_step(AdamState& state, const GradMap& grads, ParameterSet& params);
void sgd_step(AdamState& state, const GradMap& grads, ParameterSet& params);

// Ascent direction constructors. All norms are global over the concatenation
// of every parameter tensor.
//   sam:  eps = rho * g / ||g||
//   asam: eps = rho * theta^2 g / ||theta g||
//   fsam: eps = gamma * (F+eta I)^-1 g / sqrt(g' (F+eta I)^-1 g)
//   tram: asam with rho replaced by the estimated d (optionally capped)
Perturbation sam_epsilon(const GradMap& grads, double rho);
Perturbation asam_epsilon(const ParameterSet& params, const GradMap& grads, double rho);
Perturbation fsam_epsilon(const GradMap& grads, const DiagFisher& fisher, double gamma,
                          double eta);
Perturbation tram_epsilon(const ParameterSet& params, const GradMap& grads,
                          const TrustRegionEstimate& d, std::optional<double> rho_cap);

// One optimization step each; see the counter table above.
StepReport descent_step(OptimizerState& opt, ParameterSet& params, const Batch& batch);
StepReport sam_family_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                           SamVariant variant, const StepConfig& cfg);
StepReport tr_regularized_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                               TrMethod method, const StepConfig& cfg);
StepReport tram_step(OptimizerState& opt, ParameterSet& params, const Batch& batch, TrKind kind,
                     const StepConfig& cfg);
StepReport tram_fisher_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                            const StepConfig& cfg);
StepReport combined_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                         TrMethod method, const StepConfig& cfg);

// Dispatch on the algorithm tag.
StepReport optimizer_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                          Algo algo, const StepConfig& cfg);

// Linear warmup to base over `warmup` steps, then polynomial decay to 0 at
// `total`. `step` is 1-based.
double scheduled_lr(double base, std::uint64_t step, std::uint64_t warmup, std::uint64_t total,
                    double power = 1.0);

}  // namespace tram
