#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tram/harness.hpp"
#include "tram/trust_region.hpp"

namespace tram {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file not found: " + path);
  json j;
  in >> j;
  return j;
}

// Accepts "--key=value", "-key=value", or bare "key=value" override tokens.
void apply_override_tokens(json& raw, const std::vector<std::string>& tokens) {
  for (const std::string& tok : tokens) {
    std::string body = tok;
    while (!body.empty() && body.front() == '-') body.erase(body.begin());
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("override must look like --key=value, got: " + tok);
    }
    apply_override(raw, body.substr(0, eq), body.substr(eq + 1));
  }
}

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) return default_config();
  return parse_config(read_config_json(path));
}

void emit_json_report(const ordered_json& j, const std::string& out_path) {
  const std::string text = j.dump(1) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
    std::cout << "wrote " << out_path << "\n";
  }
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::size_t threads, bool save_checkpoints) {
  json raw = read_config_json(config_path);
  apply_override_tokens(raw, overrides);
  ExperimentConfig cfg = parse_config(raw);
  if (const char* env = std::getenv("TRAM_OUT_DIR"); env != nullptr && *env != '\0') {
    cfg.out_dir = env;
  }
  fs::create_directories(cfg.out_dir);

  const DomainSuite suite = build_suite(cfg);
  const std::vector<RunResult> results =
      run_experiment(cfg, suite, threads, save_checkpoints ? cfg.out_dir : std::string{});

  for (const RunResult& r : results) {
    const std::string path = cfg.out_dir + "/" + result_filename(r);
    save_result(path, r);
    std::cout << "wrote " << path << " (selected step " << r.selected_step << ", zs avg acc "
              << r.zero_shot_avg_accuracy << ")\n";
  }
  const std::size_t failed = cfg.seeds.size() - results.size();
  std::cout << results.size() << " runs completed, " << failed << " failed\n";
  return failed == 0 ? 0 : 2;
}

int cmd_aggregate(const std::vector<std::string>& inputs, const std::string& baseline,
                  const std::string& format_name, const std::string& out_path) {
  const std::vector<RunResult> results = load_results(inputs);
  if (results.empty()) throw std::invalid_argument("aggregate: no result files found");
  const ResultsTable table = aggregate(results, baseline);
  const TableFormat format = parse_table_format(format_name);
  if (out_path.empty()) {
    std::cout << render_results(table, format);
  } else {
    emit_results(table, format, out_path);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_sharpness(const std::string& checkpoint_path, const std::string& suite_path,
                  const std::string& config_path, std::uint64_t seed,
                  const std::string& out_path) {
  const ExperimentConfig cfg = config_or_default(config_path);
  const ParameterSet params = load_checkpoint(checkpoint_path);
  const DomainSuite suite = load_suite(suite_path);

  SharpnessConfig sc = cfg.sharpness;
  sc.seed = seed;
  ordered_json phi;
  phi["train"] = epsilon_sharpness(cfg.model, params, suite.train_val, sc);
  for (const Domain& d : suite.evals) {
    phi[d.name] = epsilon_sharpness(cfg.model, params, d.data, sc);
  }
  ordered_json report;
  report["checkpoint"] = checkpoint_path;
  report["epsilon"] = sc.epsilon;
  report["phi"] = std::move(phi);
  emit_json_report(report, out_path);
  return 0;
}

int cmd_cka(const std::string& checkpoint_path, const std::string& reference_path,
            const std::string& suite_path, const std::string& config_path,
            const std::string& out_path) {
  const ExperimentConfig cfg = config_or_default(config_path);
  const ParameterSet params = load_checkpoint(checkpoint_path);
  const ParameterSet reference = load_checkpoint(reference_path);
  const DomainSuite suite = load_suite(suite_path);

  auto features = [&](const ParameterSet& p, const Dataset& data) {
    return forward(cfg.model, p, data.x, nullptr, nullptr).features;
  };
  auto score_json = [](const std::optional<double>& s) -> ordered_json {
    if (s.has_value()) return *s;
    return nullptr;
  };

  ordered_json scores;
  scores["train"] =
      score_json(cka(features(params, suite.train_val), features(reference, suite.train_val)));
  std::vector<double> zs;
  for (const Domain& d : suite.evals) {
    const auto s = cka(features(params, d.data), features(reference, d.data));
    scores[d.name] = score_json(s);
    if (s.has_value()) zs.push_back(*s);
  }
  ordered_json report;
  report["checkpoint"] = checkpoint_path;
  report["reference"] = reference_path;
  report["scores"] = std::move(scores);
  if (!zs.empty()) {
    const auto [m, sd] = mean_std(zs);
    report["zero_shot_mean"] = m;
    report["zero_shot_std"] = sd;
  } else {
    report["zero_shot_mean"] = nullptr;
    report["zero_shot_std"] = nullptr;
  }
  emit_json_report(report, out_path);
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& x_domain,
             std::vector<std::string> y_domains, const std::string& out_path) {
  const std::vector<RunResult> results = load_results(inputs);
  if (results.empty()) throw std::invalid_argument("plot: no result files found");
  if (y_domains.empty()) {
    for (const DomainResult& d : results.front().domains) {
      if (d.name != x_domain) y_domains.push_back(d.name);
    }
  }
  emit_scatter_plot(results, x_domain, y_domains, out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_suite(const std::string& config_path, bool seed_given, std::uint64_t seed,
              const std::string& out_path) {
  ExperimentConfig cfg = config_or_default(config_path);
  if (seed_given) cfg.suite.seed = seed;
  const DomainSuite suite = build_suite(cfg);
  save_suite(out_path, suite);
  std::cout << "wrote " << out_path << " (1 train + " << cfg.suite.k_correlated
            << " correlated + " << cfg.suite.k_anticorrelated << " anticorrelated domains, seed "
            << suite.seed << ")\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"trust-region-aware optimization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> inputs;
  std::string baseline = "adam";
  std::string format_name = "csv";
  std::string out_path;
  std::string checkpoint_path;
  std::string reference_path;
  std::string suite_path;
  std::string x_domain = "train";
  std::vector<std::string> y_domains;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  bool save_checkpoints = false;

  CLI::App* run = app.add_subcommand("run", "Train the configured algorithm over its seeds");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--threads", threads, "parallel seed workers");
  run->add_flag("--save-checkpoints", save_checkpoints,
                "persist each run's selected parameters next to its result");
  run->allow_extras();  // --key=value config overrides

  CLI::App* agg = app.add_subcommand("aggregate", "Summarize result files into a table");
  agg->add_option("inputs", inputs, "result files or directories")->required();
  agg->add_option("--baseline", baseline, "algorithm the significance test compares against");
  agg->add_option("--format", format_name, "csv | json | markdown");
  agg->add_option("--out", out_path, "output file (stdout when omitted)");

  CLI::App* sharp = app.add_subcommand("sharpness", "Box-bounded sharpness of a checkpoint");
  sharp->add_option("--checkpoint", checkpoint_path, "parameter checkpoint")->required();
  sharp->add_option("--suite", suite_path, "persisted domain suite")->required();
  sharp->add_option("--config", config_path, "experiment config (JSON)");
  sharp->add_option("--seed", seed, "ascent seed");
  sharp->add_option("--out", out_path, "output file (stdout when omitted)");

  CLI::App* ck = app.add_subcommand("cka", "Feature similarity between two checkpoints");
  ck->add_option("--checkpoint", checkpoint_path, "parameter checkpoint")->required();
  ck->add_option("--reference", reference_path, "reference checkpoint")->required();
  ck->add_option("--suite", suite_path, "persisted domain suite")->required();
  ck->add_option("--config", config_path, "experiment config (JSON)");
  ck->add_option("--out", out_path, "output file (stdout when omitted)");

  CLI::App* plot = app.add_subcommand("plot", "Scatter of in-domain vs zero-shot accuracy");
  plot->add_option("inputs", inputs, "result files or directories")->required();
  plot->add_option("--x", x_domain, "x-axis domain");
  plot->add_option("--y", y_domains, "y-axis domains (default: every non-x domain)");
  plot->add_option("--out", out_path, "output SVG")->required();

  CLI::App* su = app.add_subcommand("suite", "Generate and persist a domain suite");
  su->add_option("--config", config_path, "experiment config (JSON)");
  su->add_option("--seed", seed, "suite generator seed");
  su->add_option("--out", out_path, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, run->remaining(), threads, save_checkpoints);
    if (agg->parsed()) return cmd_aggregate(inputs, baseline, format_name, out_path);
    if (sharp->parsed()) return cmd_sharpness(checkpoint_path, suite_path, config_path, seed,
                                              out_path);
    if (ck->parsed()) return cmd_cka(checkpoint_path, reference_path, suite_path, config_path,
                                     out_path);
    if (plot->parsed()) return cmd_plot(inputs, x_domain, y_domains, out_path);
    if (su->parsed()) return cmd_suite(config_path, su->count("--seed") > 0, seed, out_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace tram
