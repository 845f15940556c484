#include "tram/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tram/autodiff.hpp"
#include "tram/kernels.hpp"

namespace tram {

namespace {

void validate_sharpness(const SharpnessConfig& cfg) {
  if (cfg.epsilon <= 0.0 || cfg.ascent_lr <= 0.0) {
    throw std::invalid_argument("sharpness: epsilon and ascent_lr must be > 0");
  }
  if (cfg.ascent_steps < 1 || cfg.batch_size < 1 || cfg.accum_steps < 1) {
    throw std::invalid_argument("sharpness: steps, batch_size, accum_steps must be >= 1");
  }
}

double column_centered(const Tensor& in, Tensor& out) {
  const std::size_t n = in.rows();
  const std::size_t p = in.cols();
  out = Tensor({n, p});
  double var = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = in.at(i, j) - mean;
      out.at(i, j) = c;
      var += c * c;
    }
  }
  return var;
}

double frob_norm2(const Tensor& m) {
  const auto& k = kernels::active();
  return k.dot(m.values.data(), m.values.data(), m.numel());
}

// Kolmogorov survival function Q(lambda) = 2 sum_j (-1)^{j-1} exp(-2 j^2 l^2).
double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = sign * 2.0 * std::exp(-2.0 * static_cast<double>(j) * j * lambda * lambda);
    sum += term;
    if (std::fabs(term) < 1e-12 * std::fabs(sum) + 1e-300) break;
    sign = -sign;
  }
  return std::min(1.0, std::max(0.0, sum));
}

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

std::vector<double> sorted_copy(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) {
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be > 0");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double sharpness_ascent(const ParameterSet& params, const LossFn& loss_fn, const GradFn& grad_fn,
                        const SharpnessConfig& cfg, Rng& rng,
                        const SharpnessObserver& observer) {
  validate_sharpness(cfg);
  const double base = loss_fn(params);

  std::map<std::string, Tensor> box;
  std::map<std::string, Tensor> z;
  ParameterSet shifted = params.snapshot();
  for (const auto& [name, theta] : params) {
    Tensor b(theta.shape);
    Tensor zi(theta.shape);
    Tensor& sh = shifted.at(name);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      b[i] = cfg.epsilon * (std::fabs(theta[i]) + 1.0);
      zi[i] = (2.0 * rng.uniform() - 1.0) * b[i];
      sh[i] = theta[i] + zi[i];
    }
    box.emplace(name, std::move(b));
    z.emplace(name, std::move(zi));
  }

  double max_loss = loss_fn(shifted);
  if (observer) observer(0, shifted, max_loss);

  for (std::size_t step = 1; step <= cfg.ascent_steps; ++step) {
    GradMap g = grad_fn(shifted);
    for (auto& [name, zi] : z) {
      auto it = g.find(name);
      if (it == g.end()) {
        throw std::invalid_argument("sharpness_ascent: gradient missing for " + name);
      }
      const Tensor& gt = it->second;
      const Tensor& b = box.at(name);
      const Tensor& theta = params.at(name);
      Tensor& sh = shifted.at(name);
      for (std::size_t i = 0; i < zi.numel(); ++i) {
        zi[i] = std::clamp(zi[i] + cfg.ascent_lr * gt[i], -b[i], b[i]);
        sh[i] = theta[i] + zi[i];
      }
    }
    const double l = loss_fn(shifted);
    if (l > max_loss) max_loss = l;
    if (observer) observer(step, shifted, l);
  }
  return 100.0 * (max_loss - base) / (1.0 + base);
}

double epsilon_sharpness(const MLPConfig& model, const ParameterSet& params, const Dataset& data,
                         const SharpnessConfig& cfg) {
  validate_sharpness(cfg);
  if (data.size() == 0) throw std::invalid_argument("epsilon_sharpness: dataset is empty");

  LossFn loss = [&](const ParameterSet& p) {
    auto out = forward(model, p, data.x, nullptr, nullptr);
    return cross_entropy(out.dist, data.y).scalar_value();
  };

  Rng batch_rng = Rng(cfg.seed).child("sharpness-batch");
  GradFn grad = [&, batch_rng](const ParameterSet& p) mutable {
    GradMap acc;
    for (std::size_t s = 0; s < cfg.accum_steps; ++s) {
      Batch b = draw_batch(data, cfg.batch_size, batch_rng);
      Tape tape;
      auto out = forward(model, p, b.x, &tape, nullptr);
      Tensor l = cross_entropy(out.dist, b.y);
      GradMap g = backward(tape, l);
      if (acc.empty()) {
        acc = std::move(g);
      } else {
        const auto& k = kernels::active();
        for (auto& [name, t] : acc) {
          k.add(t.values.data(), g.at(name).values.data(), t.values.data(), t.numel());
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.accum_steps);
    for (auto& [name, t] : acc) {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] *= inv;
    }
    return acc;
  };

  Rng init_rng = Rng(cfg.seed).child("sharpness-init");
  return sharpness_ascent(params, loss, grad, cfg, init_rng, nullptr);
}

std::optional<double> cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  const Tensor& xr = x.rows;
  const Tensor& yr = y.rows;
  if (xr.rows() != yr.rows()) throw std::invalid_argument("cka: row counts differ");
  if (xr.rows() < 2) throw std::invalid_argument("cka: need at least 2 rows");

  Tensor xc, yc;
  const double xvar = column_centered(xr, xc);
  const double yvar = column_centered(yr, yc);
  if (xvar == 0.0 || yvar == 0.0) return std::nullopt;

  const std::size_t n = xr.rows();
  const std::size_t p = xc.cols();
  const std::size_t q = yc.cols();
  const auto& k = kernels::active();

  Tensor ytx({q, p});
  k.matmul_tn(yc.values.data(), xc.values.data(), ytx.values.data(), q, n, p);
  Tensor xtx({p, p});
  k.matmul_tn(xc.values.data(), xc.values.data(), xtx.values.data(), p, n, p);
  Tensor yty({q, q});
  k.matmul_tn(yc.values.data(), yc.values.data(), yty.values.data(), q, n, q);

  const double num = frob_norm2(ytx);
  const double den = std::sqrt(frob_norm2(xtx)) * std::sqrt(frob_norm2(yty));
  if (den == 0.0) return std::nullopt;
  return num / den;
}

Correlation pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 3) throw std::invalid_argument("pearson: need at least 3 points");
  const double nx = static_cast<double>(n);
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / nx;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / nx;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::invalid_argument("pearson: zero variance input");
  }
  Correlation out;
  out.rho = sxy / std::sqrt(sxx * syy);
  if (out.rho > 1.0) out.rho = 1.0;
  if (out.rho < -1.0) out.rho = -1.0;

  const double nu = nx - 2.0;
  const double r2 = out.rho * out.rho;
  if (r2 >= 1.0) {
    out.p_value = 0.0;
  } else {
    // two-sided Student-t tail: p = I_{nu/(nu+t^2)}(nu/2, 1/2)
    const double t2 = r2 * nu / (1.0 - r2);
    out.p_value = regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t2));
  }
  return out;
}

double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: paired lengths differ");
  if (a.empty()) throw std::invalid_argument("wilcoxon: empty input");

  std::vector<double> mag;
  std::vector<int> sign;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    mag.push_back(std::fabs(d));
    sign.push_back(d > 0.0 ? 1 : -1);
  }
  const std::size_t n = mag.size();
  if (n == 0) return 1.0;

  // average ranks over tie groups, kept doubled so they stay integral
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return mag[i] < mag[j]; });
  std::vector<long long> rank2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && mag[order[j + 1]] == mag[order[i]]) ++j;
    const long long doubled = static_cast<long long>(i) + static_cast<long long>(j) + 2;
    for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = doubled;
    i = j + 1;
  }

  long long w2_plus = 0;
  long long w2_total = 0;
  for (std::size_t t = 0; t < n; ++t) {
    w2_total += rank2[t];
    if (sign[t] > 0) w2_plus += rank2[t];
  }

  if (n <= 25) {
    // exact null: counts of sign patterns by doubled positive-rank sum
    std::vector<double> ways(static_cast<std::size_t>(w2_total) + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t t = 0; t < n; ++t) {
      for (long long s = w2_total; s >= rank2[t]; --s) {
        ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - rank2[t])];
      }
    }
    const double total = std::pow(2.0, static_cast<double>(n));
    double p_le = 0.0, p_ge = 0.0;
    for (long long s = 0; s <= w2_total; ++s) {
      if (s <= w2_plus) p_le += ways[static_cast<std::size_t>(s)];
      if (s >= w2_plus) p_ge += ways[static_cast<std::size_t>(s)];
    }
    return std::min(1.0, 2.0 * std::min(p_le, p_ge) / total);
  }

  // normal approximation with tie correction
  const double nn = static_cast<double>(n);
  const double mu = nn * (nn + 1.0) / 4.0;
  double tie_term = 0.0;
  i = 0;
  std::sort(mag.begin(), mag.end());
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && mag[j + 1] == mag[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double w_plus = static_cast<double>(w2_plus) / 2.0;
  if (var <= 0.0) return 1.0;
  double z = w_plus - mu;
  if (z > 0.5) {
    z -= 0.5;
  } else if (z < -0.5) {
    z += 0.5;
  } else {
    z = 0.0;
  }
  z /= std::sqrt(var);
  return std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
}

double ks_statistic(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks: empty sample");
  const std::vector<double> sa = sorted_copy(a);
  const std::vector<double> sb = sorted_copy(b);
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t ia = 0, ib = 0;
  double d = 0.0;
  while (ia < sa.size() && ib < sb.size()) {
    const double va = sa[ia];
    const double vb = sb[ib];
    if (va <= vb) {
      while (ia < sa.size() && sa[ia] == va) ++ia;
    }
    if (vb <= va) {
      while (ib < sb.size() && sb[ib] == vb) ++ib;
    }
    const double fa = static_cast<double>(ia) / na;
    const double fb = static_cast<double>(ib) / nb;
    d = std::max(d, std::fabs(fa - fb));
  }
  return d;
}

double ks_test(const std::vector<double>& a, const std::vector<double>& b) {
  const double d = ks_statistic(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ne = std::sqrt(na * nb / (na + nb));
  return kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
}

double significance(const std::vector<double>& a, const std::vector<double>& b, SigTest test) {
  switch (test) {
    case SigTest::kWilcoxon: return wilcoxon_signed_rank(a, b);
    case SigTest::kKs: return ks_test(a, b);
  }
  throw std::logic_error("significance: unknown test");
}

LinearFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("linear_fit: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("linear_fit: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_fit: constant xs");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_std: empty input");
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {m, 0.0};
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return {m, std::sqrt(acc / (n - 1.0))};
}

}  // namespace tram
