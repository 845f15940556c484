#pragma once

// Measurement instruments: box-constrained loss sharpness, linear CKA
// between feature matrices, Pearson correlation with significance, paired
// Wilcoxon and two-sample KS tests, and least-squares line fits.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tram/data.hpp"
#include "tram/models.hpp"
#include "tram/params.hpp"
#include "tram/rng.hpp"

namespace tram {

struct SharpnessConfig {
  double epsilon = 1e-5;      // box scale: |z_i| <= epsilon * (|theta_i| + 1)
  double ascent_lr = 8e-5;
  std::size_t ascent_steps = 20;
  std::size_t batch_size = 32;
  std::size_t accum_steps = 4;
  std::uint64_t seed = 0;
};

using LossFn = std::function<double(const ParameterSet&)>;
using GradFn = std::function<GradMap(const ParameterSet&)>;
// Called after the initial placement (step 0) and after every ascent update
// with the shifted parameters and their loss.
using SharpnessObserver =
    std::function<void(std::size_t step, const ParameterSet& shifted, double loss)>;

// Projected gradient ascent of loss_fn inside the box around params. The
// returned score is 100 * (max_loss - base_loss) / (1 + base_loss); params
// are never modified. grad_fn supplies the ascent direction at the shifted
// parameters and may be stochastic.
double sharpness_ascent(const ParameterSet& params, const LossFn& loss_fn, const GradFn& grad_fn,
                        const SharpnessConfig& cfg, Rng& rng,
                        const SharpnessObserver& observer = nullptr);

// Model-loss specialization: the base and max losses are the mean NLL over
// the full dataset; ascent gradients come from accum_steps sampled batches
// of batch_size per update. Deterministic in cfg.seed.
double epsilon_sharpness(const MLPConfig& model, const ParameterSet& params, const Dataset& data,
                         const SharpnessConfig& cfg);

// Linear CKA between two feature matrices with the same row count (>= 2).
// Columns are centered internally. Zero-variance input has no defined
// similarity and yields nullopt rather than NaN.
std::optional<double> cka(const FeatureMatrix& x, const FeatureMatrix& y);

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, Student-t reference distribution
};

// Sample Pearson correlation; needs n >= 3 and nonzero variance in both
// arguments.
Correlation pearson(const std::vector<double>& xs, const std::vector<double>& ys);

enum class SigTest { kWilcoxon, kKs };

// Paired two-sided Wilcoxon signed-rank test. Zero differences are dropped;
// ties get average ranks. Exact tail enumeration up to 25 informative pairs,
// normal approximation with tie correction beyond. All-zero differences
// give p = 1.
double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// Two-sample KS statistic sup |F_a - F_b| and its asymptotic p-value.
double ks_statistic(const std::vector<double>& a, const std::vector<double>& b);
double ks_test(const std::vector<double>& a, const std::vector<double>& b);

double significance(const std::vector<double>& a, const std::vector<double>& b, SigTest test);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Ordinary least squares; needs n >= 2 and nonconstant xs.
LinearFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys);

// (mean, sample standard deviation); std is 0 for n < 2.
std::pair<double, double> mean_std(const std::vector<double>& xs);

// Regularized incomplete beta I_x(a, b), exposed for direct verification.
double regularized_incomplete_beta(double a, double b, double x);

// Per-domain instrument results, filled by the harness.
struct SharpnessReport {
  std::map<std::string, double> phi;
  double in_domain_phi = 0.0;
};

struct CkaReport {
  std::map<std::string, std::optional<double>> scores;
  double zero_shot_mean = 0.0;
  double zero_shot_std = 0.0;
};

}  // namespace tram
