#include "tram/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tram/trust_region.hpp"

namespace tram {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double: conversion failed");
  return std::string(buf, end);
}

std::string fmt_fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", places, v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("expected a number, got an empty field");
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing junk in number: " + s);
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.find(key) == allowed.end()) {
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

double eval_mean_nll(const MLPConfig& mc, const ParameterSet& params, const Dataset& data) {
  auto out = forward(mc, params, data.x, nullptr, nullptr);
  return cross_entropy(out.dist, data.y).scalar_value();
}

DomainResult eval_domain(const MLPConfig& mc, const ParameterSet& params, const std::string& name,
                         const std::string& tag, const Dataset& data) {
  auto out = forward(mc, params, data.x, nullptr, nullptr);
  DomainResult r;
  r.name = name;
  r.tag = tag;
  r.accuracy = accuracy(out.dist, data.y);
  r.nll = cross_entropy(out.dist, data.y).scalar_value();
  r.perplexity = perplexity(r.nll);
  return r;
}

bool is_tram_family(const std::string& algo) { return algo.rfind("tram", 0) == 0; }

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  bool tram = false;
};

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig parse_config(const json& j) {
  static const std::set<std::string> top = {
      "algo",     "seeds",      "steps",      "warmup_steps", "batch_size", "lr",
      "lr_power", "beta1",      "beta2",      "adam_eps",     "weight_decay",
      "rho",      "rho_cap",    "gamma",      "eta",          "sigma",      "lambda",
      "ema_decay", "metric",    "eval_every", "out_dir",      "instruments", "model",
      "suite",    "sharpness"};
  require_keys(j, top, "top level");

  ExperimentConfig cfg;
  if (j.contains("algo")) cfg.algo = j.at("algo").get<std::string>();
  parse_algo(cfg.algo);  // validates the tag
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
  if (j.contains("steps")) cfg.steps = j.at("steps").get<std::size_t>();
  if (j.contains("warmup_steps")) cfg.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
  if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("lr_power")) cfg.lr_power = j.at("lr_power").get<double>();
  if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<double>();
  if (j.contains("adam_eps")) cfg.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("rho")) {
    cfg.rho = j.at("rho").get<double>();
  } else {
    cfg.rho = cfg.algo == "sam" ? 0.05 : 0.5;
  }
  if (j.contains("rho_cap") && !j.at("rho_cap").is_null()) {
    cfg.rho_cap = j.at("rho_cap").get<double>();
  }
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
  if (j.contains("sigma")) cfg.sigma = j.at("sigma").get<double>();
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("ema_decay")) cfg.ema_decay = j.at("ema_decay").get<double>();
  if (j.contains("metric")) cfg.metric = j.at("metric").get<std::string>();
  parse_metric(cfg.metric);  // validates the name
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<std::size_t>();
  if (cfg.eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("instruments")) cfg.instruments = j.at("instruments").get<bool>();

  if (j.contains("model")) {
    const json& m = j.at("model");
    static const std::set<std::string> model_keys = {"input_dim", "hidden_dims", "num_classes",
                                                     "activation", "init_scale"};
    require_keys(m, model_keys, "model");
    if (m.contains("input_dim")) cfg.model.input_dim = m.at("input_dim").get<std::size_t>();
    if (m.contains("hidden_dims")) {
      cfg.model.hidden_dims = m.at("hidden_dims").get<std::vector<std::size_t>>();
    }
    if (m.contains("num_classes")) cfg.model.num_classes = m.at("num_classes").get<std::size_t>();
    if (m.contains("activation")) cfg.model.activation = m.at("activation").get<std::string>();
    if (m.contains("init_scale")) cfg.model.init_scale = m.at("init_scale").get<double>();
  }

  if (j.contains("suite")) {
    const json& s = j.at("suite");
    static const std::set<std::string> suite_keys = {
        "seed",   "k_correlated", "k_anticorrelated",
        "n_train", "n_val",       "n_eval",
        "max_correlated_rotation", "anticorrelated_rotation", "anticorrelated_flip_rate",
        "mean_shift", "class_radius", "class_sigma"};
    require_keys(s, suite_keys, "suite");
    if (s.contains("seed")) cfg.suite.seed = s.at("seed").get<std::uint64_t>();
    if (s.contains("k_correlated")) cfg.suite.k_correlated = s.at("k_correlated").get<std::size_t>();
    if (s.contains("k_anticorrelated")) {
      cfg.suite.k_anticorrelated = s.at("k_anticorrelated").get<std::size_t>();
    }
    if (s.contains("n_train")) cfg.suite.n_train = s.at("n_train").get<std::size_t>();
    if (s.contains("n_val")) cfg.suite.n_val = s.at("n_val").get<std::size_t>();
    if (s.contains("n_eval")) cfg.suite.n_eval = s.at("n_eval").get<std::size_t>();
    ShiftParams& sh = cfg.suite.shifts;
    if (s.contains("max_correlated_rotation")) {
      sh.max_correlated_rotation = s.at("max_correlated_rotation").get<double>();
    }
    if (s.contains("anticorrelated_rotation")) {
      sh.anticorrelated_rotation = s.at("anticorrelated_rotation").get<double>();
    }
    if (s.contains("anticorrelated_flip_rate")) {
      sh.anticorrelated_flip_rate = s.at("anticorrelated_flip_rate").get<double>();
    }
    if (s.contains("mean_shift")) sh.mean_shift = s.at("mean_shift").get<double>();
    if (s.contains("class_radius")) sh.class_radius = s.at("class_radius").get<double>();
    if (s.contains("class_sigma")) sh.class_sigma = s.at("class_sigma").get<double>();
  }

  if (j.contains("sharpness")) {
    const json& s = j.at("sharpness");
    static const std::set<std::string> sharp_keys = {"epsilon", "ascent_lr", "ascent_steps",
                                                     "batch_size", "accum_steps"};
    require_keys(s, sharp_keys, "sharpness");
    if (s.contains("epsilon")) cfg.sharpness.epsilon = s.at("epsilon").get<double>();
    if (s.contains("ascent_lr")) cfg.sharpness.ascent_lr = s.at("ascent_lr").get<double>();
    if (s.contains("ascent_steps")) {
      cfg.sharpness.ascent_steps = s.at("ascent_steps").get<std::size_t>();
    }
    if (s.contains("batch_size")) cfg.sharpness.batch_size = s.at("batch_size").get<std::size_t>();
    if (s.contains("accum_steps")) cfg.sharpness.accum_steps = s.at("accum_steps").get<std::size_t>();
  }

  if (cfg.steps > 0 && cfg.warmup_steps >= cfg.steps) {
    throw std::invalid_argument("config: warmup_steps must be < steps");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file not found: " + path);
  json j;
  in >> j;
  return parse_config(j);
}

void apply_override(json& j, const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("override: empty key");
  json* node = &j;
  std::string rest = key;
  for (std::size_t dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
    const std::string head = rest.substr(0, dot);
    rest = rest.substr(dot + 1);
    if (head.empty() || rest.empty()) throw std::invalid_argument("override: bad key " + key);
    node = &(*node)[head];
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) {
    (*node)[rest] = value;  // not valid JSON: keep the raw string
  } else {
    (*node)[rest] = parsed;
  }
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["algo"] = cfg.algo;
  j["seeds"] = cfg.seeds;
  j["steps"] = cfg.steps;
  j["warmup_steps"] = cfg.warmup_steps;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["lr_power"] = cfg.lr_power;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["weight_decay"] = cfg.weight_decay;
  j["rho"] = cfg.rho;
  if (cfg.rho_cap.has_value()) {
    j["rho_cap"] = *cfg.rho_cap;
  } else {
    j["rho_cap"] = nullptr;
  }
  j["gamma"] = cfg.gamma;
  j["eta"] = cfg.eta;
  j["sigma"] = cfg.sigma;
  j["lambda"] = cfg.lambda;
  j["ema_decay"] = cfg.ema_decay;
  j["metric"] = cfg.metric;
  j["eval_every"] = cfg.eval_every;
  j["out_dir"] = cfg.out_dir;
  j["instruments"] = cfg.instruments;
  j["model"] = {{"input_dim", cfg.model.input_dim},
                {"hidden_dims", cfg.model.hidden_dims},
                {"num_classes", cfg.model.num_classes},
                {"activation", cfg.model.activation},
                {"init_scale", cfg.model.init_scale}};
  j["suite"] = {{"seed", cfg.suite.seed},
                {"k_correlated", cfg.suite.k_correlated},
                {"k_anticorrelated", cfg.suite.k_anticorrelated},
                {"n_train", cfg.suite.n_train},
                {"n_val", cfg.suite.n_val},
                {"n_eval", cfg.suite.n_eval},
                {"max_correlated_rotation", cfg.suite.shifts.max_correlated_rotation},
                {"anticorrelated_rotation", cfg.suite.shifts.anticorrelated_rotation},
                {"anticorrelated_flip_rate", cfg.suite.shifts.anticorrelated_flip_rate},
                {"mean_shift", cfg.suite.shifts.mean_shift},
                {"class_radius", cfg.suite.shifts.class_radius},
                {"class_sigma", cfg.suite.shifts.class_sigma}};
  j["sharpness"] = {{"epsilon", cfg.sharpness.epsilon},
                    {"ascent_lr", cfg.sharpness.ascent_lr},
                    {"ascent_steps", cfg.sharpness.ascent_steps},
                    {"batch_size", cfg.sharpness.batch_size},
                    {"accum_steps", cfg.sharpness.accum_steps}};
  return j;
}

DomainSuite build_suite(const ExperimentConfig& cfg) {
  if (cfg.model.input_dim != 2) {
    throw std::invalid_argument("build_suite: the mixture task is 2-D; model.input_dim must be 2");
  }
  return make_domain_suite(cfg.suite.seed, cfg.suite.k_correlated, cfg.suite.k_anticorrelated,
                           cfg.suite.shifts, cfg.suite.n_train, cfg.suite.n_val, cfg.suite.n_eval,
                           cfg.model.num_classes);
}

RunResult run_single(const ExperimentConfig& cfg, const DomainSuite& suite, std::uint64_t seed,
                     const std::string& checkpoint_dir) {
  const auto wall_start = std::chrono::steady_clock::now();

  MLPConfig mc = cfg.model;
  mc.seed = seed;
  ParameterSet params = init_mlp(mc);
  const ParameterSet theta0 = params.snapshot();

  const Algo algo = parse_algo(cfg.algo);
  AdamState adam;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.adam_eps;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  OptimizerState opt =
      make_optimizer(mc, params, algo, adam, Rng(seed).child("noise"), cfg.ema_decay);
  StepConfig scfg;
  scfg.sam.rho = cfg.rho;
  scfg.sam.rho_cap = cfg.rho_cap;
  scfg.fsam.gamma = cfg.gamma;
  scfg.fsam.eta = cfg.eta;
  scfg.noise.sigma = cfg.sigma;
  scfg.lambda = cfg.lambda;
  scfg.metric = parse_metric(cfg.metric);

  Rng batch_rng = Rng(seed).child("batches");

  double best_val = eval_mean_nll(mc, params, suite.train_val);
  std::size_t best_step = 0;
  ParameterSet best = params.snapshot();

  RunResult out;
  out.algo = cfg.algo;
  out.seed = seed;
  out.steps.count = cfg.steps;

  double sum_d = 0.0, sum_eps = 0.0;
  std::size_t d_above_half = 0;

  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    opt.adam.lr = scheduled_lr(cfg.lr, s, cfg.warmup_steps, cfg.steps, cfg.lr_power);
    Batch batch = draw_batch(suite.train.data, cfg.batch_size, batch_rng);
    StepReport r = optimizer_step(opt, params, batch, algo, scfg);
    if (!std::isfinite(r.loss_before) || !std::isfinite(r.loss_after)) {
      throw std::runtime_error("run aborted: non-finite loss at step " + std::to_string(s) +
                               " (algo " + cfg.algo + ", seed " + std::to_string(seed) + ")");
    }
    sum_d += r.d;
    sum_eps += r.eps_norm;
    if (r.d > 0.5) ++d_above_half;
    if (r.d > out.steps.max_d) out.steps.max_d = r.d;
    if (r.degenerate) ++out.steps.degenerate_steps;
    out.steps.final_loss = r.loss_after;

    if (s % cfg.eval_every == 0 || s == cfg.steps) {
      const double val = eval_mean_nll(mc, params, suite.train_val);
      if (val < best_val) {
        best_val = val;
        best_step = s;
        best = params.snapshot();
      }
    }
  }
  out.steps.forwards = opt.counters.forwards;
  out.steps.backwards = opt.counters.backwards;
  if (cfg.steps > 0) {
    out.steps.mean_d = sum_d / static_cast<double>(cfg.steps);
    out.steps.mean_eps_norm = sum_eps / static_cast<double>(cfg.steps);
    out.steps.frac_d_above_half =
        static_cast<double>(d_above_half) / static_cast<double>(cfg.steps);
  }

  out.selected_step = best_step;
  out.train_val_loss = best_val;
  const ParameterSet& selected = best;
  if (!checkpoint_dir.empty()) {
    save_checkpoint(checkpoint_dir + "/" + cfg.algo + "_" + std::to_string(seed) + ".ckpt",
                    selected);
  }

  out.domains.push_back(eval_domain(mc, selected, "train", "train", suite.train_val));
  double zs_acc = 0.0;
  for (const Domain& d : suite.evals) {
    out.domains.push_back(eval_domain(mc, selected, d.name, d.tag, d.data));
    zs_acc += out.domains.back().accuracy;
  }
  if (!suite.evals.empty()) {
    out.zero_shot_avg_accuracy = zs_acc / static_cast<double>(suite.evals.size());
  }
  for (const DomainResult& d : out.domains) {
    if (!std::isfinite(d.accuracy) || !std::isfinite(d.nll) || !std::isfinite(d.perplexity)) {
      throw std::runtime_error("run aborted: non-finite metric on domain " + d.name);
    }
  }

  if (cfg.instruments) {
    SharpnessConfig sc = cfg.sharpness;
    sc.seed = seed;
    SharpnessReport sharp;
    sharp.in_domain_phi = epsilon_sharpness(mc, selected, suite.train_val, sc);
    sharp.phi.emplace("train", sharp.in_domain_phi);
    for (const Domain& d : suite.evals) {
      sharp.phi.emplace(d.name, epsilon_sharpness(mc, selected, d.data, sc));
    }
    out.sharpness = std::move(sharp);

    CkaReport ck;
    auto features = [&](const ParameterSet& p, const Dataset& data) {
      return forward(mc, p, data.x, nullptr, nullptr).features;
    };
    ck.scores.emplace("train",
                      cka(features(selected, suite.train_val), features(theta0, suite.train_val)));
    std::vector<double> zs_scores;
    for (const Domain& d : suite.evals) {
      auto score = cka(features(selected, d.data), features(theta0, d.data));
      ck.scores.emplace(d.name, score);
      if (score.has_value()) zs_scores.push_back(*score);
    }
    if (!zs_scores.empty()) {
      auto [m, sd] = mean_std(zs_scores);
      ck.zero_shot_mean = m;
      ck.zero_shot_std = sd;
    }
    out.cka_scores = std::move(ck);
  }

  out.config_echo = config_to_json(cfg);
  out.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                wall_start)
                          .count();
  return out;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const DomainSuite& suite,
                                      std::size_t threads, const std::string& checkpoint_dir) {
  const std::size_t n = cfg.seeds.size();
  std::vector<std::optional<RunResult>> slots(n);
  std::vector<std::string> failures;
  std::mutex fail_mu;

  auto work = [&](std::size_t i) {
    try {
      slots[i] = run_single(cfg, suite, cfg.seeds[i], checkpoint_dir);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(fail_mu);
      failures.push_back("seed " + std::to_string(cfg.seeds[i]) + ": " + e.what());
    }
  };

  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    const std::size_t workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (const std::string& f : failures) std::cerr << "run_experiment: " << f << "\n";
  std::vector<RunResult> out;
  for (auto& slot : slots) {
    if (slot.has_value()) out.push_back(std::move(*slot));
  }
  return out;
}

ordered_json result_to_json(const RunResult& r) {
  ordered_json j;
  j["algo"] = r.algo;
  j["seed"] = r.seed;
  j["selected_step"] = r.selected_step;
  j["train_val_loss"] = r.train_val_loss;
  ordered_json domains = ordered_json::array();
  for (const DomainResult& d : r.domains) {
    domains.push_back({{"name", d.name},
                       {"tag", d.tag},
                       {"accuracy", d.accuracy},
                       {"nll", d.nll},
                       {"perplexity", d.perplexity}});
  }
  j["domains"] = std::move(domains);
  j["zero_shot_avg_accuracy"] = r.zero_shot_avg_accuracy;
  j["steps"] = {{"count", r.steps.count},
                {"forwards", r.steps.forwards},
                {"backwards", r.steps.backwards},
                {"mean_d", r.steps.mean_d},
                {"max_d", r.steps.max_d},
                {"frac_d_above_half", r.steps.frac_d_above_half},
                {"mean_eps_norm", r.steps.mean_eps_norm},
                {"degenerate_steps", r.steps.degenerate_steps},
                {"final_loss", r.steps.final_loss}};
  if (r.sharpness.has_value()) {
    ordered_json phi;
    for (const auto& [name, v] : r.sharpness->phi) phi[name] = v;
    j["sharpness"] = {{"in_domain_phi", r.sharpness->in_domain_phi}, {"phi", std::move(phi)}};
  } else {
    j["sharpness"] = nullptr;
  }
  if (r.cka_scores.has_value()) {
    ordered_json scores;
    for (const auto& [name, v] : r.cka_scores->scores) {
      if (v.has_value()) {
        scores[name] = *v;
      } else {
        scores[name] = nullptr;
      }
    }
    j["cka"] = {{"scores", std::move(scores)},
                {"zero_shot_mean", r.cka_scores->zero_shot_mean},
                {"zero_shot_std", r.cka_scores->zero_shot_std}};
  } else {
    j["cka"] = nullptr;
  }
  j["config"] = r.config_echo;
  j["wall_clock_ms"] = r.wall_clock_ms;
  return j;
}

RunResult result_from_json(const ordered_json& j) {
  RunResult r;
  r.algo = j.at("algo").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.selected_step = j.at("selected_step").get<std::size_t>();
  r.train_val_loss = j.at("train_val_loss").get<double>();
  for (const auto& d : j.at("domains")) {
    DomainResult dr;
    dr.name = d.at("name").get<std::string>();
    dr.tag = d.at("tag").get<std::string>();
    dr.accuracy = d.at("accuracy").get<double>();
    dr.nll = d.at("nll").get<double>();
    dr.perplexity = d.at("perplexity").get<double>();
    r.domains.push_back(std::move(dr));
  }
  r.zero_shot_avg_accuracy = j.at("zero_shot_avg_accuracy").get<double>();
  const auto& s = j.at("steps");
  r.steps.count = s.at("count").get<std::size_t>();
  r.steps.forwards = s.at("forwards").get<std::size_t>();
  r.steps.backwards = s.at("backwards").get<std::size_t>();
  r.steps.mean_d = s.at("mean_d").get<double>();
  r.steps.max_d = s.at("max_d").get<double>();
  r.steps.frac_d_above_half = s.at("frac_d_above_half").get<double>();
  r.steps.mean_eps_norm = s.at("mean_eps_norm").get<double>();
  r.steps.degenerate_steps = s.at("degenerate_steps").get<std::size_t>();
  r.steps.final_loss = s.at("final_loss").get<double>();
  if (!j.at("sharpness").is_null()) {
    SharpnessReport sharp;
    sharp.in_domain_phi = j.at("sharpness").at("in_domain_phi").get<double>();
    for (const auto& [name, v] : j.at("sharpness").at("phi").items()) {
      sharp.phi.emplace(name, v.get<double>());
    }
    r.sharpness = std::move(sharp);
  }
  if (!j.at("cka").is_null()) {
    CkaReport ck;
    for (const auto& [name, v] : j.at("cka").at("scores").items()) {
      if (v.is_null()) {
        ck.scores.emplace(name, std::nullopt);
      } else {
        ck.scores.emplace(name, v.get<double>());
      }
    }
    ck.zero_shot_mean = j.at("cka").at("zero_shot_mean").get<double>();
    ck.zero_shot_std = j.at("cka").at("zero_shot_std").get<double>();
    r.cka_scores = std::move(ck);
  }
  r.config_echo = j.at("config");
  r.wall_clock_ms = j.at("wall_clock_ms").get<double>();
  return r;
}

void save_result(const std::string& path, const RunResult& r) {
  write_file_atomic(path, result_to_json(r).dump(1) + "\n");
}

RunResult load_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("result file not found: " + path);
  ordered_json j;
  in >> j;
  return result_from_json(j);
}

std::string result_filename(const RunResult& r) {
  return r.algo + "_" + std::to_string(r.seed) + ".json";
}

bool results_equal_modulo_wall_clock(const ordered_json& a, const ordered_json& b) {
  ordered_json ca = a;
  ordered_json cb = b;
  ca.erase("wall_clock_ms");
  cb.erase("wall_clock_ms");
  return ca == cb;
}

ResultsTable aggregate(const std::vector<RunResult>& results, const std::string& baseline) {
  ResultsTable table;
  table.baseline = baseline;
  if (results.empty()) return table;

  for (const DomainResult& d : results.front().domains) table.domain_order.push_back(d.name);

  std::map<std::string, std::vector<const RunResult*>> by_algo;
  for (const RunResult& r : results) by_algo[r.algo].push_back(&r);

  auto domain_accuracy = [](const RunResult& r, const std::string& name) {
    for (const DomainResult& d : r.domains) {
      if (d.name == name) return d.accuracy;
    }
    throw std::invalid_argument("aggregate: run " + r.algo + "_" + std::to_string(r.seed) +
                                " lacks domain " + name);
  };

  // per-seed ZS averages for the significance pairing, keyed algo -> seed
  std::map<std::string, std::map<std::uint64_t, double>> zs_by_seed;

  for (const auto& [algo, runs] : by_algo) {
    AlgoRow row;
    row.algo = algo;
    row.runs = runs.size();
    double zs_mean_acc = 0.0;
    std::size_t zs_domains = 0;
    for (const std::string& name : table.domain_order) {
      std::vector<double> vals;
      vals.reserve(runs.size());
      for (const RunResult* r : runs) vals.push_back(domain_accuracy(*r, name));
      auto [m, sd] = mean_std(vals);
      row.domains.emplace_back(name, DomainStat{m, sd});
      if (name != "train") {
        zs_mean_acc += m;
        ++zs_domains;
      }
    }
    if (zs_domains > 0) {
      row.zs_avg.mean = zs_mean_acc / static_cast<double>(zs_domains);
      std::vector<double> per_seed;
      for (const RunResult* r : runs) {
        double acc = 0.0;
        for (const std::string& name : table.domain_order) {
          if (name != "train") acc += domain_accuracy(*r, name);
        }
        per_seed.push_back(acc / static_cast<double>(zs_domains));
        zs_by_seed[algo][r->seed] = per_seed.back();
      }
      row.zs_avg.stddev = mean_std(per_seed).second;
    }
    table.rows.push_back(std::move(row));
  }

  const auto base_it = zs_by_seed.find(baseline);
  if (base_it != zs_by_seed.end()) {
    for (AlgoRow& row : table.rows) {
      if (row.algo == baseline) continue;
      const auto& mine = zs_by_seed.at(row.algo);
      std::vector<double> a, b;
      for (const auto& [seed, val] : mine) {
        auto hit = base_it->second.find(seed);
        if (hit != base_it->second.end()) {
          a.push_back(val);
          b.push_back(hit->second);
        }
      }
      if (!a.empty() && a.size() == mine.size() && a.size() == base_it->second.size()) {
        row.p_vs_baseline = wilcoxon_signed_rank(a, b);
      }
    }
  }
  return table;
}

TableFormat parse_table_format(const std::string& name) {
  if (name == "csv") return TableFormat::kCsv;
  if (name == "json") return TableFormat::kJson;
  if (name == "markdown" || name == "md") return TableFormat::kMarkdown;
  throw std::invalid_argument("unknown table format: " + name);
}

std::string render_results(const ResultsTable& table, TableFormat format) {
  std::ostringstream out;
  switch (format) {
    case TableFormat::kCsv: {
      out << "# baseline: " << table.baseline << "\n";
      out << "algo,runs";
      for (const std::string& name : table.domain_order) {
        out << "," << name << "_mean," << name << "_std";
      }
      out << ",zs_avg_mean,zs_avg_std,p_vs_baseline\n";
      for (const AlgoRow& row : table.rows) {
        out << row.algo << "," << row.runs;
        for (const auto& [name, stat] : row.domains) {
          out << "," << fmt_double(stat.mean) << "," << fmt_double(stat.stddev);
        }
        out << "," << fmt_double(row.zs_avg.mean) << "," << fmt_double(row.zs_avg.stddev) << ",";
        if (row.p_vs_baseline.has_value()) out << fmt_double(*row.p_vs_baseline);
        out << "\n";
      }
      break;
    }
    case TableFormat::kJson: {
      ordered_json j;
      j["baseline"] = table.baseline;
      j["domains"] = table.domain_order;
      ordered_json rows = ordered_json::array();
      for (const AlgoRow& row : table.rows) {
        ordered_json r;
        r["algo"] = row.algo;
        r["runs"] = row.runs;
        ordered_json doms;
        for (const auto& [name, stat] : row.domains) {
          doms[name] = {{"mean", stat.mean}, {"stddev", stat.stddev}};
        }
        r["domains"] = std::move(doms);
        r["zs_avg"] = {{"mean", row.zs_avg.mean}, {"stddev", row.zs_avg.stddev}};
        if (row.p_vs_baseline.has_value()) {
          r["p_vs_baseline"] = *row.p_vs_baseline;
        } else {
          r["p_vs_baseline"] = nullptr;
        }
        rows.push_back(std::move(r));
      }
      j["rows"] = std::move(rows);
      out << j.dump(1) << "\n";
      break;
    }
    case TableFormat::kMarkdown: {
      out << "| Algorithm | Runs |";
      for (const std::string& name : table.domain_order) out << " " << name << " |";
      out << " ZS Avg |\n";
      out << "| --- | --- |";
      for (std::size_t i = 0; i < table.domain_order.size(); ++i) out << " --- |";
      out << " --- |\n";
      bool any_sig = false;
      for (const AlgoRow& row : table.rows) {
        const bool sig = row.p_vs_baseline.has_value() && *row.p_vs_baseline < 0.01;
        any_sig = any_sig || sig;
        out << "| " << row.algo << (sig ? "*" : "") << " | " << row.runs << " |";
        for (const auto& [name, stat] : row.domains) {
          out << " " << fmt_fixed(stat.mean, 4) << " ± " << fmt_fixed(stat.stddev, 4) << " |";
        }
        out << " " << fmt_fixed(row.zs_avg.mean, 4) << " ± " << fmt_fixed(row.zs_avg.stddev, 4)
            << " |\n";
      }
      if (any_sig) {
        out << "\n\\* p < 0.01 vs " << table.baseline << " (paired Wilcoxon on ZS Avg)\n";
      }
      break;
    }
  }
  return out.str();
}

void emit_results(const ResultsTable& table, TableFormat format, const std::string& path) {
  write_file_atomic(path, render_results(table, format));
}

ResultsTable parse_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("csv file not found: " + path);
  ResultsTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file " + path);
  if (line.rfind("# baseline: ", 0) == 0) {
    table.baseline = line.substr(12);
    if (!std::getline(in, line)) throw std::invalid_argument("csv: missing header in " + path);
  }
  const std::vector<std::string> header = split(line, ',');
  if (header.size() < 5 || header[0] != "algo" || header[1] != "runs") {
    throw std::invalid_argument("csv: unexpected header in " + path);
  }
  const std::size_t fixed_tail = 3;  // zs_avg_mean, zs_avg_std, p_vs_baseline
  if ((header.size() - 2 - fixed_tail) % 2 != 0) {
    throw std::invalid_argument("csv: unpaired domain columns in " + path);
  }
  const std::size_t n_domains = (header.size() - 2 - fixed_tail) / 2;
  for (std::size_t i = 0; i < n_domains; ++i) {
    const std::string& col = header[2 + 2 * i];
    if (col.size() < 5 || col.substr(col.size() - 5) != "_mean") {
      throw std::invalid_argument("csv: expected *_mean column, got " + col);
    }
    table.domain_order.push_back(col.substr(0, col.size() - 5));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != header.size()) throw std::invalid_argument("csv: ragged row in " + path);
    AlgoRow row;
    row.algo = f[0];
    row.runs = static_cast<std::size_t>(std::stoull(f[1]));
    for (std::size_t i = 0; i < n_domains; ++i) {
      row.domains.emplace_back(
          table.domain_order[i],
          DomainStat{parse_double(f[2 + 2 * i]), parse_double(f[3 + 2 * i])});
    }
    row.zs_avg.mean = parse_double(f[header.size() - 3]);
    row.zs_avg.stddev = parse_double(f[header.size() - 2]);
    const std::string& p = f[header.size() - 1];
    if (!p.empty()) row.p_vs_baseline = parse_double(p);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string render_scatter_plot(const std::vector<RunResult>& results, const std::string& x_domain,
                                const std::vector<std::string>& y_domains) {
  if (results.empty()) throw std::invalid_argument("scatter: no results");
  if (y_domains.empty()) throw std::invalid_argument("scatter: no y domains");

  auto domain_accuracy = [](const RunResult& r, const std::string& name) {
    for (const DomainResult& d : r.domains) {
      if (d.name == name) return d.accuracy;
    }
    throw std::invalid_argument("scatter: run lacks domain " + name);
  };

  std::vector<PlotPoint> pts;
  pts.reserve(results.size());
  for (const RunResult& r : results) {
    PlotPoint p;
    p.x = domain_accuracy(r, x_domain);
    for (const std::string& name : y_domains) p.y += domain_accuracy(r, name);
    p.y /= static_cast<double>(y_domains.size());
    p.tram = is_tram_family(r.algo);
    pts.push_back(p);
  }

  double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
  for (const PlotPoint& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double xpad = (xmax - xmin) > 0.0 ? 0.05 * (xmax - xmin) : 0.05;
  const double ypad = (ymax - ymin) > 0.0 ? 0.05 * (ymax - ymin) : 0.05;
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  const double kW = 640.0, kH = 480.0, kM = 60.0;
  auto sx = [&](double v) { return kM + (v - xmin) / (xmax - xmin) * (kW - 2.0 * kM); };
  auto sy = [&](double v) { return kH - kM - (v - ymin) / (ymax - ymin) * (kH - 2.0 * kM); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg << "  <line x1=\"" << kM << "\" y1=\"" << kH - kM << "\" x2=\"" << kW - kM << "\" y2=\""
      << kH - kM << "\" stroke=\"#333\"/>\n";
  svg << "  <line x1=\"" << kM << "\" y1=\"" << kM << "\" x2=\"" << kM << "\" y2=\"" << kH - kM
      << "\" stroke=\"#333\"/>\n";
  svg << "  <text x=\"" << kW / 2.0 << "\" y=\"" << kH - 16.0
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_domain << " accuracy</text>\n";
  svg << "  <text x=\"16\" y=\"" << kH / 2.0 << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 16 " << kH / 2.0 << ")\">zero-shot accuracy</text>\n";

  struct Group {
    const char* cls;
    const char* color;
    const char* dash;
    bool tram;
  };
  const Group groups[] = {{"trend-prior", "#1f4fd8", "2,4", false},
                          {"trend-tram", "#2e8b57", "8,4", true}};
  double label_y = 24.0;
  for (const Group& g : groups) {
    std::vector<double> xs, ys;
    for (const PlotPoint& p : pts) {
      if (p.tram == g.tram) {
        xs.push_back(p.x);
        ys.push_back(p.y);
      }
    }
    if (xs.size() < 2) continue;
    double sxx = 0.0;
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    for (double v : xs) sxx += (v - mx) * (v - mx);
    if (sxx == 0.0) continue;  // vertical cluster: no usable trend
    const LinearFit fit = linear_fit(xs, ys);
    std::string pearson_attr;
    std::string rho_text = "n/a";
    if (xs.size() >= 3) {
      double syy = 0.0;
      const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
      for (double v : ys) syy += (v - my) * (v - my);
      if (syy > 0.0) {
        const Correlation c = pearson(xs, ys);
        pearson_attr = " data-pearson=\"" + fmt_double(c.rho) + "\"";
        rho_text = fmt_fixed(c.rho, 3);
      }
    }
    svg << "  <line class=\"" << g.cls << "\" x1=\"" << sx(xmin) << "\" y1=\""
        << sy(fit.slope * xmin + fit.intercept) << "\" x2=\"" << sx(xmax) << "\" y2=\""
        << sy(fit.slope * xmax + fit.intercept) << "\" stroke=\"" << g.color
        << "\" stroke-width=\"1.5\" stroke-dasharray=\"" << g.dash << "\" data-slope=\""
        << fmt_double(fit.slope) << "\" data-intercept=\"" << fmt_double(fit.intercept) << "\""
        << pearson_attr << "/>\n";
    svg << "  <text x=\"" << kW - kM << "\" y=\"" << label_y
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << g.color << "\">"
        << (g.tram ? "tram" : "prior") << " rho = " << rho_text << "</text>\n";
    label_y += 16.0;
  }

  for (const PlotPoint& p : pts) {
    svg << "  <circle class=\"" << (p.tram ? "pt-tram" : "pt-prior") << "\" cx=\"" << sx(p.x)
        << "\" cy=\"" << sy(p.y) << "\" r=\"4\" fill=\"" << (p.tram ? "#2e8b57" : "#1f4fd8")
        << "\" fill-opacity=\"0.75\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_scatter_plot(const std::vector<RunResult>& results, const std::string& x_domain,
                       const std::vector<std::string>& y_domains, const std::string& out_path) {
  write_file_atomic(out_path, render_scatter_plot(results, x_domain, y_domains));
}

std::vector<RunResult> load_results(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const std::string& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
          found.push_back(entry.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(input)) {
      files.push_back(input);
    } else {
      throw std::invalid_argument("result input not found: " + input);
    }
  }
  std::vector<RunResult> out;
  out.reserve(files.size());
  for (const std::string& f : files) out.push_back(load_result(f));
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tram
