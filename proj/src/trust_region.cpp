#include "tram/trust_region.hpp"

#include <cmath>
#include <stdexcept>

namespace tram {

namespace {

void check_same_shape(const PredictiveDistribution& p, const PredictiveDistribution& q,
                      const char* what) {
  if (!p.log_probs.same_shape(q.log_probs)) {
    throw std::invalid_argument(std::string(what) + ": distribution shapes differ, " +
                                p.log_probs.shape_str() + " vs " + q.log_probs.shape_str());
  }
}

// mean_i KL(target_i || other_i) from log-probability rows; exact 0 when the
// arrays are bitwise equal, clamped at 0 against rounding in near-equal cases
double mean_kl(const Tensor& target_lp, const Tensor& other_lp) {
  const std::size_t n = target_lp.rows();
  const std::size_t c = target_lp.cols();
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double lp = target_lp[r * c + j];
      acc += std::exp(lp) * (lp - other_lp[r * c + j]);
    }
  }
  const double d = acc / static_cast<double>(n);
  return d > 0.0 ? d : 0.0;
}

double imq_kernel(const double* a, const double* b, std::size_t c) {
  double d2 = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double t = a[j] - b[j];
    d2 += t * t;
  }
  return 1.0 / (1.0 + d2);
}

void check_finite_d(double d, const char* what) {
  if (!std::isfinite(d)) {
    throw std::runtime_error(std::string(what) + ": distance is not finite");
  }
}

}  // namespace

const char* tr_kind_name(TrKind kind) {
  switch (kind) {
    case TrKind::kThetaPrev: return "theta_prev";
    case TrKind::kTheta0: return "theta_0";
    case TrKind::kInputNoise: return "input_noise";
  }
  return "?";
}

const char* metric_name(Metric metric) {
  switch (metric) {
    case Metric::kForwardKl: return "forward_kl";
    case Metric::kReverseKl: return "reverse_kl";
    case Metric::kSymmetricKl: return "symmetric_kl";
    case Metric::kMmd: return "mmd";
    case Metric::kL2: return "l2";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  if (name == "forward_kl") return Metric::kForwardKl;
  if (name == "reverse_kl") return Metric::kReverseKl;
  if (name == "symmetric_kl") return Metric::kSymmetricKl;
  if (name == "mmd") return Metric::kMmd;
  if (name == "l2") return Metric::kL2;
  throw std::invalid_argument("parse_metric: unknown metric " + name);
}

double kl_divergence(const PredictiveDistribution& p, const PredictiveDistribution& q,
                     KlDirection direction) {
  check_same_shape(p, q, "kl_divergence");
  return direction == KlDirection::kForward ? mean_kl(p.log_probs, q.log_probs)
                                            : mean_kl(q.log_probs, p.log_probs);
}

double mmd_distance(const PredictiveDistribution& p, const PredictiveDistribution& q) {
  check_same_shape(p, q, "mmd_distance");
  const Tensor pp = p.probs();
  const Tensor qp = q.probs();
  const std::size_t n = pp.rows();
  const std::size_t c = pp.cols();
  double kpp = 0.0, kqq = 0.0, kpq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      kpp += imq_kernel(pp.values.data() + i * c, pp.values.data() + j * c, c);
      kqq += imq_kernel(qp.values.data() + i * c, qp.values.data() + j * c, c);
      kpq += imq_kernel(pp.values.data() + i * c, qp.values.data() + j * c, c);
    }
  }
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  const double d = (kpp + kqq - 2.0 * kpq) / n2;
  return d > 0.0 ? d : 0.0;
}

double l2_distance(const PredictiveDistribution& p, const PredictiveDistribution& q) {
  check_same_shape(p, q, "l2_distance");
  const Tensor pp = p.probs();
  const Tensor qp = q.probs();
  const std::size_t n = pp.rows();
  const std::size_t c = pp.cols();
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = pp[r * c + j] - qp[r * c + j];
      d2 += t * t;
    }
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(n);
}

double distribution_distance(const PredictiveDistribution& p, const PredictiveDistribution& q,
                             Metric metric) {
  switch (metric) {
    case Metric::kForwardKl: return kl_divergence(p, q, KlDirection::kForward);
    case Metric::kReverseKl: return kl_divergence(p, q, KlDirection::kReverse);
    case Metric::kSymmetricKl:
      return 0.5 * (kl_divergence(p, q, KlDirection::kForward) +
                    kl_divergence(p, q, KlDirection::kReverse));
    case Metric::kMmd: return mmd_distance(p, q);
    case Metric::kL2: return l2_distance(p, q);
  }
  throw std::logic_error("distribution_distance: unknown metric");
}

TrustRegionEstimate estimate_d_theta(const PredictiveDistribution& p_ref,
                                     const PredictiveDistribution& p_cur, TrKind kind,
                                     Metric metric) {
  TrustRegionEstimate est;
  est.d = distribution_distance(p_ref, p_cur, metric);
  est.kind = kind;
  est.metric = metric;
  check_finite_d(est.d, "estimate_d_theta");
  return est;
}

Tensor add_input_noise(const Tensor& x, double sigma, Rng& rng) {
  if (sigma <= 0.0) throw std::invalid_argument("add_input_noise: sigma must be > 0");
  Tensor out = x.detached();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sigma * rng.normal();
  return out;
}

TrustRegionEstimate estimate_d_x(const MLPConfig& cfg, const ParameterSet& params,
                                 const Tensor& batch_x, const NoiseConfig& noise, Rng& rng,
                                 Counters* counters, Metric metric) {
  const PredictiveDistribution clean = forward(cfg, params, batch_x, nullptr, counters).dist;
  return estimate_d_x(cfg, params, batch_x, clean, noise, rng, counters, metric);
}

TrustRegionEstimate estimate_d_x(const MLPConfig& cfg, const ParameterSet& params,
                                 const Tensor& batch_x, const PredictiveDistribution& clean,
                                 const NoiseConfig& noise, Rng& rng, Counters* counters,
                                 Metric metric) {
  const Tensor noised_x = add_input_noise(batch_x, noise.sigma, rng);
  const PredictiveDistribution noised = forward(cfg, params, noised_x, nullptr, counters).dist;
  TrustRegionEstimate est;
  est.d = distribution_distance(noised, clean, metric);
  est.kind = TrKind::kInputNoise;
  est.metric = metric;
  check_finite_d(est.d, "estimate_d_x");
  return est;
}

Tensor kl_to_reference_node(const PredictiveDistribution& ref, const Tensor& cur_log_probs) {
  if (!ref.log_probs.same_shape(cur_log_probs)) {
    throw std::invalid_argument("kl_to_reference_node: shapes differ, " +
                                ref.log_probs.shape_str() + " vs " + cur_log_probs.shape_str());
  }
  const std::size_t n = ref.log_probs.rows();
  const Tensor ref_p = ref.probs();
  double ref_entropy_term = 0.0;  // sum_ic P * log P, a constant
  for (std::size_t i = 0; i < ref_p.numel(); ++i) {
    ref_entropy_term += ref_p[i] * ref.log_probs[i];
  }
  // KL = (1/n) * (sum P log P - sum P * cur_lp)
  Tensor cross = sum(mul(ref_p, cur_log_probs));
  Tensor kl = scalar_mul(add(Tensor::scalar(ref_entropy_term), scalar_mul(cross, -1.0)),
                         1.0 / static_cast<double>(n));
  return kl;
}

Tensor kl_both_sides_node(const Tensor& noised_log_probs, const Tensor& clean_log_probs) {
  if (!noised_log_probs.same_shape(clean_log_probs)) {
    throw std::invalid_argument("kl_both_sides_node: shapes differ, " +
                                noised_log_probs.shape_str() + " vs " +
                                clean_log_probs.shape_str());
  }
  const std::size_t n = noised_log_probs.rows();
  Tensor diff = add(noised_log_probs, scalar_mul(clean_log_probs, -1.0));
  Tensor kl = scalar_mul(sum(mul(exp(noised_log_probs), diff)), 1.0 / static_cast<double>(n));
  return kl;
}

Tensor penalized_loss(const Tensor& base_loss, const Tensor& d_node, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("penalized_loss: lambda must be >= 0");
  if (base_loss.numel() != 1 || d_node.numel() != 1) {
    throw std::invalid_argument("penalized_loss: loss and d must be scalars");
  }
  if (lambda == 0.0) return base_loss;
  return add(base_loss, scalar_mul(d_node, lambda));
}

void ema_update(EmaState& state, const ParameterSet& params) {
  if (state.decay <= 0.0 || state.decay >= 1.0) {
    throw std::invalid_argument("ema_update: decay must lie in (0, 1)");
  }
  if (state.shadow.size() != params.size()) {
    throw std::invalid_argument("ema_update: shadow and params differ in parameter count");
  }
  for (auto& [name, shadow] : state.shadow) {
    const Tensor& live = params.at(name);
    if (!shadow.same_shape(live)) {
      throw std::invalid_argument("ema_update: shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < shadow.numel(); ++i) {
      shadow[i] = state.decay * shadow[i] + (1.0 - state.decay) * live[i];
    }
  }
}

FisherSweep fisher_sweep(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                         const std::vector<std::size_t>& labels, Counters* counters) {
  const std::size_t n = batch_x.rows();
  if (n == 0) throw std::invalid_argument("fisher_sweep: empty batch");
  if (labels.size() != n) {
    throw std::invalid_argument("fisher_sweep: label count does not match batch");
  }
  const std::size_t dim = batch_x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  FisherSweep out;
  for (const auto& [name, t] : params) {
    out.fisher.diag.emplace(name, Tensor(t.shape));
    out.mean_grad.emplace(name, Tensor(t.shape));
  }

  // per-example gradients of the example's NLL; squaring drops the sign so
  // this is the gradient of the log-likelihood squared, as required
  for (std::size_t i = 0; i < n; ++i) {
    Tensor xi({1, dim});
    for (std::size_t c = 0; c < dim; ++c) xi.at(0, c) = batch_x.at(i, c);
    Tape tape;
    auto fwd = forward(cfg, params, xi, &tape, nullptr);
    Tensor nll = cross_entropy(fwd.dist, {labels[i]});
    out.mean_nll += nll.scalar_value() * inv_n;
    GradMap g = backward(tape, nll);
    for (const auto& [name, grad] : g) {
      Tensor& f = out.fisher.diag.at(name);
      Tensor& m = out.mean_grad.at(name);
      for (std::size_t j = 0; j < grad.numel(); ++j) {
        f[j] += grad[j] * grad[j] * inv_n;
        m[j] += grad[j] * inv_n;
      }
    }
  }

  // the whole sweep touches each example once; batch-pass accounting
  if (counters != nullptr) {
    counters->forwards += 1;
    counters->backwards += 1;
  }
  return out;
}

DiagFisher fisher_diag(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                       const std::vector<std::size_t>& labels, Counters* counters) {
  return fisher_sweep(cfg, params, batch_x, labels, counters).fisher;
}

DiagFisher fisher_diag(const MLPConfig& cfg, const ParameterSet& params, const Tensor& batch_x,
                       const std::vector<std::size_t>& labels, const NoiseConfig& noise,
                       Rng& rng, Counters* counters) {
  const Tensor noised = add_input_noise(batch_x, noise.sigma, rng);
  return fisher_sweep(cfg, params, noised, labels, counters).fisher;
}

}  // namespace tram
