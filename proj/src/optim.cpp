#include "tram/optim.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace tram {

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

const Tensor& grad_for(const GradMap& grads, const std::string& name, const Tensor& param,
                       const char* what) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    throw std::invalid_argument(std::string(what) + ": missing gradient for " + name);
  }
  if (!it->second.same_shape(param)) {
    throw std::invalid_argument(std::string(what) + ": gradient shape " +
                                it->second.shape_str() + " does not match parameter " +
                                param.shape_str() + " for " + name);
  }
  return it->second;
}

void add_perturbation(ParameterSet& params, const Perturbation& pert) {
  for (const auto& [name, e] : pert.eps) {
    Tensor& th = params.at(name);
    for (std::size_t i = 0; i < th.numel(); ++i) th[i] += e[i];
  }
}

double perturbation_norm(const Perturbation& pert) {
  double acc = 0.0;
  for (const auto& [name, e] : pert.eps) {
    for (std::size_t i = 0; i < e.numel(); ++i) acc += e[i] * e[i];
  }
  return std::sqrt(acc);
}

void check_counter_delta(const Counters& before, const Counters& after, std::uint64_t df,
                         std::uint64_t db, const char* what) {
  const std::uint64_t gf = after.forwards - before.forwards;
  const std::uint64_t gb = after.backwards - before.backwards;
  if (gf != df || gb != db) {
    throw std::logic_error(std::string(what) + ": pass-count contract violated, got (" +
                           std::to_string(gf) + " fwd, " + std::to_string(gb) + " bwd), want (" +
                           std::to_string(df) + " fwd, " + std::to_string(db) + " bwd)");
  }
}

void apply_descent(OptimizerState& opt, const GradMap& grads, ParameterSet& params) {
  if (opt.use_sgd) {
    sgd_step(opt.adam, grads, params);
  } else {
    adam_step(opt.adam, grads, params);
  }
}

StepReport base_report(const Timer& timer, const Counters& before, const Counters& after) {
  StepReport r;
  r.forwards = after.forwards - before.forwards;
  r.backwards = after.backwards - before.backwards;
  r.wall_ms = timer.ms();
  return r;
}

const ParameterSet& tr_reference(const OptimizerState& opt, TrMethod method) {
  if (method == TrMethod::kTrpo) return opt.theta_prev;
  if (!opt.ema.has_value()) {
    throw std::logic_error("mesa step requires an optimizer built with EMA state");
  }
  return opt.ema->shadow;
}

}  // namespace

Algo parse_algo(const std::string& tag) {
  if (tag == "sgd") return Algo::kSgd;
  if (tag == "adam") return Algo::kAdam;
  if (tag == "sam") return Algo::kSam;
  if (tag == "asam") return Algo::kAsam;
  if (tag == "fsam") return Algo::kFsam;
  if (tag == "trpo") return Algo::kTrpo;
  if (tag == "r3f") return Algo::kR3f;
  if (tag == "mesa") return Algo::kMesa;
  if (tag == "tram_theta_prev") return Algo::kTramThetaPrev;
  if (tag == "tram_theta_0") return Algo::kTramTheta0;
  if (tag == "tram_x") return Algo::kTramX;
  if (tag == "tram_fisher") return Algo::kTramFisher;
  if (tag == "asam_trpo") return Algo::kAsamTrpo;
  if (tag == "asam_r3f") return Algo::kAsamR3f;
  if (tag == "asam_mesa") return Algo::kAsamMesa;
  throw std::invalid_argument("parse_algo: unknown algorithm tag " + tag);
}

const char* algo_name(Algo algo) {
  switch (algo) {
    case Algo::kSgd: return "sgd";
    case Algo::kAdam: return "adam";
    case Algo::kSam: return "sam";
    case Algo::kAsam: return "asam";
    case Algo::kFsam: return "fsam";
    case Algo::kTrpo: return "trpo";
    case Algo::kR3f: return "r3f";
    case Algo::kMesa: return "mesa";
    case Algo::kTramThetaPrev: return "tram_theta_prev";
    case Algo::kTramTheta0: return "tram_theta_0";
    case Algo::kTramX: return "tram_x";
    case Algo::kTramFisher: return "tram_fisher";
    case Algo::kAsamTrpo: return "asam_trpo";
    case Algo::kAsamR3f: return "asam_r3f";
    case Algo::kAsamMesa: return "asam_mesa";
  }
  return "?";
}

bool algo_uses_ema(Algo algo) { return algo == Algo::kMesa || algo == Algo::kAsamMesa; }

OptimizerState make_optimizer(const MLPConfig& model, const ParameterSet& params, Algo algo,
                              const AdamState& adam, const Rng& noise_stream, double ema_decay) {
  OptimizerState opt{model,        adam,       params.snapshot(), params.snapshot(),
                     std::nullopt, Counters{}, noise_stream,      algo == Algo::kSgd};
  if (algo_uses_ema(algo)) opt.ema = EmaState{params.snapshot(), ema_decay};
  return opt;
}

void adam_step(AdamState& state, const GradMap& grads, ParameterSet& params) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, theta] : params) {
    const Tensor& g = grad_for(grads, name, theta, "adam_step");
    Tensor& m = state.m.try_emplace(name, Tensor(theta.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(theta.shape)).first->second;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double gi = g[i] + state.weight_decay * theta[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      theta[i] -= state.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
    }
  }
}

void sgd_step(AdamState& state, const GradMap& grads, ParameterSet& params) {
  state.t += 1;
  for (auto& [name, theta] : params) {
    const Tensor& g = grad_for(grads, name, theta, "sgd_step");
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      theta[i] -= state.lr * (g[i] + state.weight_decay * theta[i]);
    }
  }
}

Perturbation sam_epsilon(const GradMap& grads, double rho) {
  if (rho < 0.0 || !std::isfinite(rho)) {
    throw std::invalid_argument("sam_epsilon: rho must be finite and >= 0");
  }
  double norm2 = 0.0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.numel(); ++i) norm2 += g[i] * g[i];
  }
  Perturbation p;
  p.radius = rho;
  p.degenerate = rho == 0.0 || norm2 == 0.0;
  const double scale = p.degenerate ? 0.0 : rho / std::sqrt(norm2);
  for (const auto& [name, g] : grads) {
    Tensor e(g.shape);
    if (!p.degenerate) {
      for (std::size_t i = 0; i < g.numel(); ++i) e[i] = scale * g[i];
    }
    p.eps.emplace(name, std::move(e));
  }
  return p;
}

Perturbation asam_epsilon(const ParameterSet& params, const GradMap& grads, double rho) {
  if (rho < 0.0 || !std::isfinite(rho)) {
    throw std::invalid_argument("asam_epsilon: rho must be finite and >= 0");
  }
  double norm2 = 0.0;
  for (const auto& [name, g] : grads) {
    const Tensor& th = params.at(name);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double tg = th[i] * g[i];
      norm2 += tg * tg;
    }
  }
  Perturbation p;
  p.radius = rho;
  p.degenerate = rho == 0.0 || norm2 == 0.0;
  const double scale = p.degenerate ? 0.0 : rho / std::sqrt(norm2);
  for (const auto& [name, g] : grads) {
    const Tensor& th = params.at(name);
    Tensor e(g.shape);
    if (!p.degenerate) {
      for (std::size_t i = 0; i < g.numel(); ++i) e[i] = scale * (th[i] * th[i] * g[i]);
    }
    p.eps.emplace(name, std::move(e));
  }
  return p;
}

Perturbation fsam_epsilon(const GradMap& grads, const DiagFisher& fisher, double gamma,
                          double eta) {
  if (gamma <= 0.0 || !std::isfinite(gamma)) {
    throw std::invalid_argument("fsam_epsilon: gamma must be finite and > 0");
  }
  if (eta < 0.0) throw std::invalid_argument("fsam_epsilon: eta must be >= 0");
  GradMap h;  // (F + eta I)^-1 g
  double quad = 0.0;
  for (const auto& [name, g] : grads) {
    const Tensor& f = fisher.diag.at(name);
    Tensor hv(g.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      hv[i] = g[i] / (f[i] + eta);
      quad += g[i] * hv[i];
    }
    h.emplace(name, std::move(hv));
  }
  Perturbation p;
  p.radius = gamma;
  p.degenerate = !(quad > 0.0) || !std::isfinite(quad);
  const double scale = p.degenerate ? 0.0 : gamma / std::sqrt(quad);
  for (auto& [name, hv] : h) {
    Tensor e(hv.shape);
    if (!p.degenerate) {
      for (std::size_t i = 0; i < hv.numel(); ++i) e[i] = scale * hv[i];
    }
    p.eps.emplace(name, std::move(e));
  }
  return p;
}

Perturbation tram_epsilon(const ParameterSet& params, const GradMap& grads,
                          const TrustRegionEstimate& d, std::optional<double> rho_cap) {
  if (d.d < 0.0 || !std::isfinite(d.d)) {
    throw std::invalid_argument("tram_epsilon: d must be finite and >= 0");
  }
  double radius = d.d;
  if (rho_cap.has_value()) {
    if (*rho_cap <= 0.0) throw std::invalid_argument("tram_epsilon: rho_cap must be > 0");
    radius = std::min(radius, *rho_cap);
  }
  return asam_epsilon(params, grads, radius);
}

StepReport descent_step(OptimizerState& opt, ParameterSet& params, const Batch& batch) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet incoming = params.snapshot();

  Tape tape;
  auto fwd = forward(opt.model, params, batch.x, &tape, &opt.counters);
  Tensor loss = cross_entropy(fwd.dist, batch.y);
  GradMap g = backward(tape, loss);
  opt.counters.backwards += 1;

  apply_descent(opt, g, params);
  opt.theta_prev = std::move(incoming);
  check_counter_delta(c0, opt.counters, 1, 1, "descent_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = loss.scalar_value();
  r.loss_after = r.loss_before;
  return r;
}

StepReport sam_family_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                           SamVariant variant, const StepConfig& cfg) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet saved = params.snapshot();

  double loss_before = 0.0;
  Perturbation pert;
  if (variant == SamVariant::kFsam) {
    FisherSweep sweep = fisher_sweep(opt.model, params, batch.x, batch.y, &opt.counters);
    loss_before = sweep.mean_nll;
    pert = fsam_epsilon(sweep.mean_grad, sweep.fisher, cfg.fsam.gamma, cfg.fsam.eta);
  } else {
    Tape tape;
    auto fwd = forward(opt.model, params, batch.x, &tape, &opt.counters);
    Tensor loss = cross_entropy(fwd.dist, batch.y);
    GradMap g1 = backward(tape, loss);
    opt.counters.backwards += 1;
    loss_before = loss.scalar_value();
    pert = variant == SamVariant::kSam ? sam_epsilon(g1, cfg.sam.rho)
                                       : asam_epsilon(params, g1, cfg.sam.rho);
  }

  if (!pert.degenerate) add_perturbation(params, pert);
  Tape tape2;
  auto fwd2 = forward(opt.model, params, batch.x, &tape2, &opt.counters);
  Tensor loss2 = cross_entropy(fwd2.dist, batch.y);
  GradMap g2 = backward(tape2, loss2);
  opt.counters.backwards += 1;

  params = saved;
  apply_descent(opt, g2, params);
  opt.theta_prev = std::move(saved);
  check_counter_delta(c0, opt.counters, 2, 2, "sam_family_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = loss_before;
  r.loss_after = loss2.scalar_value();
  r.eps_norm = perturbation_norm(pert);
  r.degenerate = pert.degenerate;
  return r;
}

StepReport tr_regularized_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                               TrMethod method, const StepConfig& cfg) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet incoming = params.snapshot();

  Tape tape;
  Tensor ce;
  Tensor total;
  double d_val = 0.0;
  if (method == TrMethod::kR3f) {
    const Tensor noised_x = add_input_noise(batch.x, cfg.noise.sigma, opt.noise);
    auto clean = forward(opt.model, params, batch.x, &tape, &opt.counters);
    auto noised = forward(opt.model, params, noised_x, &tape, &opt.counters);
    ce = cross_entropy(clean.dist, batch.y);
    Tensor kl = kl_both_sides_node(noised.dist.log_probs, clean.dist.log_probs);
    d_val = kl.scalar_value();
    total = penalized_loss(ce, kl, cfg.lambda);
  } else {
    const ParameterSet& ref_params = tr_reference(opt, method);
    auto ref = forward(opt.model, ref_params, batch.x, nullptr, &opt.counters);
    auto cur = forward(opt.model, params, batch.x, &tape, &opt.counters);
    ce = cross_entropy(cur.dist, batch.y);
    Tensor kl = kl_to_reference_node(ref.dist, cur.dist.log_probs);
    d_val = kl.scalar_value();
    total = penalized_loss(ce, kl, cfg.lambda);
  }
  GradMap g = backward(tape, total);
  opt.counters.backwards += 1;

  apply_descent(opt, g, params);
  if (method == TrMethod::kMesa) ema_update(*opt.ema, params);
  opt.theta_prev = std::move(incoming);
  check_counter_delta(c0, opt.counters, 2, 1, "tr_regularized_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = ce.scalar_value();
  r.loss_after = total.scalar_value();
  r.d = d_val > 0.0 ? d_val : 0.0;
  return r;
}

StepReport tram_step(OptimizerState& opt, ParameterSet& params, const Batch& batch, TrKind kind,
                     const StepConfig& cfg) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet saved = params.snapshot();

  Tape tape;
  auto fwd = forward(opt.model, params, batch.x, &tape, &opt.counters);
  Tensor loss = cross_entropy(fwd.dist, batch.y);
  GradMap g1 = backward(tape, loss);
  opt.counters.backwards += 1;

  TrustRegionEstimate d;
  switch (kind) {
    case TrKind::kThetaPrev: {
      auto ref = forward(opt.model, opt.theta_prev, batch.x, nullptr, &opt.counters);
      d = estimate_d_theta(ref.dist, fwd.dist, kind, cfg.metric);
      break;
    }
    case TrKind::kTheta0: {
      auto ref = forward(opt.model, opt.theta_0, batch.x, nullptr, &opt.counters);
      d = estimate_d_theta(ref.dist, fwd.dist, kind, cfg.metric);
      break;
    }
    case TrKind::kInputNoise: {
      d = estimate_d_x(opt.model, params, batch.x, fwd.dist, cfg.noise, opt.noise,
                       &opt.counters, cfg.metric);
      break;
    }
  }
  if (cfg.force_d.has_value()) d.d = *cfg.force_d;

  Perturbation pert = tram_epsilon(params, g1, d, cfg.sam.rho_cap);
  if (!pert.degenerate) add_perturbation(params, pert);
  Tape tape2;
  auto fwd2 = forward(opt.model, params, batch.x, &tape2, &opt.counters);
  Tensor loss2 = cross_entropy(fwd2.dist, batch.y);
  GradMap g2 = backward(tape2, loss2);
  opt.counters.backwards += 1;

  params = saved;
  apply_descent(opt, g2, params);
  opt.theta_prev = std::move(saved);
  check_counter_delta(c0, opt.counters, 3, 2, "tram_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = loss.scalar_value();
  r.loss_after = loss2.scalar_value();
  r.d = d.d;
  r.eps_norm = perturbation_norm(pert);
  r.degenerate = pert.degenerate;
  return r;
}

StepReport tram_fisher_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                            const StepConfig& cfg) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet saved = params.snapshot();

  const Tensor noised_x = add_input_noise(batch.x, cfg.noise.sigma, opt.noise);
  FisherSweep sweep = fisher_sweep(opt.model, params, noised_x, batch.y, &opt.counters);
  Perturbation pert = fsam_epsilon(sweep.mean_grad, sweep.fisher, cfg.fsam.gamma, cfg.fsam.eta);

  if (!pert.degenerate) add_perturbation(params, pert);
  Tape tape2;
  auto fwd2 = forward(opt.model, params, batch.x, &tape2, &opt.counters);
  Tensor loss2 = cross_entropy(fwd2.dist, batch.y);
  GradMap g2 = backward(tape2, loss2);
  opt.counters.backwards += 1;

  params = saved;
  apply_descent(opt, g2, params);
  opt.theta_prev = std::move(saved);
  check_counter_delta(c0, opt.counters, 2, 2, "tram_fisher_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = sweep.mean_nll;
  r.loss_after = loss2.scalar_value();
  r.eps_norm = perturbation_norm(pert);
  r.degenerate = pert.degenerate;
  return r;
}

StepReport combined_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                         TrMethod method, const StepConfig& cfg) {
  Timer timer;
  const Counters c0 = opt.counters;
  ParameterSet saved = params.snapshot();

  // frozen penalty reference for both passes of this step
  PredictiveDistribution ref;
  if (method == TrMethod::kR3f) {
    const Tensor noised_x = add_input_noise(batch.x, cfg.noise.sigma, opt.noise);
    ref = forward(opt.model, params, noised_x, nullptr, &opt.counters).dist;
  } else {
    ref = forward(opt.model, tr_reference(opt, method), batch.x, nullptr, &opt.counters).dist;
  }

  auto penalized_pass = [&](Tape& tape, Tensor* ce_out, double* d_out) {
    auto fwd = forward(opt.model, params, batch.x, &tape, &opt.counters);
    Tensor ce = cross_entropy(fwd.dist, batch.y);
    Tensor kl = kl_to_reference_node(ref, fwd.dist.log_probs);
    if (d_out != nullptr) *d_out = kl.scalar_value();
    if (ce_out != nullptr) *ce_out = ce;
    Tensor total = penalized_loss(ce, kl, cfg.lambda);
    GradMap g = backward(tape, total);
    opt.counters.backwards += 1;
    return std::make_pair(std::move(g), total.scalar_value());
  };

  Tape tape1;
  Tensor ce1;
  double d_val = 0.0;
  auto [g1, total1] = penalized_pass(tape1, &ce1, &d_val);
  (void)total1;

  Perturbation pert = asam_epsilon(params, g1, cfg.sam.rho);
  if (!pert.degenerate) add_perturbation(params, pert);

  Tape tape2;
  auto [g2, total2] = penalized_pass(tape2, nullptr, nullptr);

  params = saved;
  apply_descent(opt, g2, params);
  if (method == TrMethod::kMesa) ema_update(*opt.ema, params);
  opt.theta_prev = std::move(saved);
  check_counter_delta(c0, opt.counters, 3, 2, "combined_step");

  StepReport r = base_report(timer, c0, opt.counters);
  r.loss_before = ce1.scalar_value();
  r.loss_after = total2;
  r.d = d_val > 0.0 ? d_val : 0.0;
  r.eps_norm = perturbation_norm(pert);
  r.degenerate = pert.degenerate;
  return r;
}

StepReport optimizer_step(OptimizerState& opt, ParameterSet& params, const Batch& batch,
                          Algo algo, const StepConfig& cfg) {
  switch (algo) {
    case Algo::kSgd:
    case Algo::kAdam:
      return descent_step(opt, params, batch);
    case Algo::kSam:
      return sam_family_step(opt, params, batch, SamVariant::kSam, cfg);
    case Algo::kAsam:
      return sam_family_step(opt, params, batch, SamVariant::kAsam, cfg);
    case Algo::kFsam:
      return sam_family_step(opt, params, batch, SamVariant::kFsam, cfg);
    case Algo::kTrpo:
      return tr_regularized_step(opt, params, batch, TrMethod::kTrpo, cfg);
    case Algo::kR3f:
      return tr_regularized_step(opt, params, batch, TrMethod::kR3f, cfg);
    case Algo::kMesa:
      return tr_regularized_step(opt, params, batch, TrMethod::kMesa, cfg);
    case Algo::kTramThetaPrev:
      return tram_step(opt, params, batch, TrKind::kThetaPrev, cfg);
    case Algo::kTramTheta0:
      return tram_step(opt, params, batch, TrKind::kTheta0, cfg);
    case Algo::kTramX:
      return tram_step(opt, params, batch, TrKind::kInputNoise, cfg);
    case Algo::kTramFisher:
      return tram_fisher_step(opt, params, batch, cfg);
    case Algo::kAsamTrpo:
      return combined_step(opt, params, batch, TrMethod::kTrpo, cfg);
    case Algo::kAsamR3f:
      return combined_step(opt, params, batch, TrMethod::kR3f, cfg);
    case Algo::kAsamMesa:
      return combined_step(opt, params, batch, TrMethod::kMesa, cfg);
  }
  throw std::logic_error("optimizer_step: unknown algorithm");
}

double scheduled_lr(double base, std::uint64_t step, std::uint64_t warmup, std::uint64_t total,
                    double power) {
  if (base < 0.0 || power < 0.0) {
    throw std::invalid_argument("scheduled_lr: base and power must be >= 0");
  }
  if (total < 1 || warmup >= total) {
    throw std::invalid_argument("scheduled_lr: need warmup < total and total >= 1");
  }
  if (warmup > 0 && step <= warmup) {
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step >= total) return 0.0;
  const double frac = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return base * std::pow(frac, power);
}

}  // namespace tram
