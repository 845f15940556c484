#pragma once

// Experiment orchestration: strict JSON configs, seeded training runs with
// checkpoint selection on train-domain validation loss, per-domain
// evaluation, instrument reports, aggregation with significance against a
// baseline, and CSV/JSON/markdown/SVG emission.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tram/analysis.hpp"
#include "tram/data.hpp"
#include "tram/models.hpp"
#include "tram/optim.hpp"

namespace tram {

struct SuiteConfig {
  std::uint64_t seed = 1234;
  std::size_t k_correlated = 5;
  std::size_t k_anticorrelated = 2;
  std::size_t n_train = 2048;
  std::size_t n_val = 512;
  std::size_t n_eval = 512;
  ShiftParams shifts;
};

struct ExperimentConfig {
  std::string algo = "adam";
  std::vector<std::uint64_t> seeds = {1};
  std::size_t steps = 2000;
  std::size_t warmup_steps = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double lr_power = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double rho = 0.5;  // resolved per algorithm when the config omits it
  std::optional<double> rho_cap;
  double gamma = 0.1;
  double eta = 0.1;
  double sigma = 0.1;
  double lambda = 0.1;
  double ema_decay = 0.999;
  std::string metric = "forward_kl";
  std::size_t eval_every = 100;
  std::string out_dir = "results";
  bool instruments = true;
  MLPConfig model;        // model.seed is replaced by the run seed
  SuiteConfig suite;
  SharpnessConfig sharpness;  // sharpness.seed is replaced by the run seed
};

ExperimentConfig default_config();

// Strict: unknown keys anywhere are errors. Omitted keys take defaults; a
// missing "rho" resolves to 0.05 for sam and 0.5 otherwise.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Applies one dotted --key=value override onto raw config JSON. The value
// is parsed as JSON when possible, otherwise kept as a string.
void apply_override(nlohmann::json& j, const std::string& key, const std::string& value);

// Full effective config, suitable for echoing into results.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

DomainSuite build_suite(const ExperimentConfig& cfg);

struct DomainResult {
  std::string name;
  std::string tag;  // "train" | "correlated" | "anticorrelated"
  double accuracy = 0.0;
  double nll = 0.0;
  double perplexity = 0.0;
};

struct StepAggregates {
  std::size_t count = 0;
  std::size_t forwards = 0;
  std::size_t backwards = 0;
  double mean_d = 0.0;
  double max_d = 0.0;
  double frac_d_above_half = 0.0;
  double mean_eps_norm = 0.0;
  std::size_t degenerate_steps = 0;
  double final_loss = 0.0;
};

struct RunResult {
  std::string algo;
  std::uint64_t seed = 0;
  std::size_t selected_step = 0;
  double train_val_loss = 0.0;
  std::vector<DomainResult> domains;  // train first, then suite order
  double zero_shot_avg_accuracy = 0.0;
  StepAggregates steps;
  std::optional<SharpnessReport> sharpness;
  std::optional<CkaReport> cka_scores;
  nlohmann::ordered_json config_echo;
  double wall_clock_ms = 0.0;
};

// One seeded run: init, train, select by train-domain validation loss,
// evaluate every domain, run instruments. Throws on non-finite losses.
// A nonempty checkpoint_dir persists the selected parameters as
// <algo>_<seed>.ckpt inside it.
RunResult run_single(const ExperimentConfig& cfg, const DomainSuite& suite, std::uint64_t seed,
                     const std::string& checkpoint_dir = "");

// All seeds; a failed seed is reported to stderr and skipped, the others
// still run. threads > 1 runs seeds in parallel workers.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const DomainSuite& suite,
                                      std::size_t threads = 1,
                                      const std::string& checkpoint_dir = "");

nlohmann::ordered_json result_to_json(const RunResult& r);
RunResult result_from_json(const nlohmann::ordered_json& j);
void save_result(const std::string& path, const RunResult& r);
RunResult load_result(const std::string& path);
std::string result_filename(const RunResult& r);  // "<algo>_<seed>.json"

// Equality of two serialized results ignoring wall-clock fields.
bool results_equal_modulo_wall_clock(const nlohmann::ordered_json& a,
                                     const nlohmann::ordered_json& b);

struct DomainStat {
  double mean = 0.0;
  double stddev = 0.0;
};

struct AlgoRow {
  std::string algo;
  std::size_t runs = 0;
  std::vector<std::pair<std::string, DomainStat>> domains;
  DomainStat zs_avg;  // mean over non-train domain means
  std::optional<double> p_vs_baseline;  // paired Wilcoxon on per-seed ZS averages
};

struct ResultsTable {
  std::string baseline;
  std::vector<std::string> domain_order;
  std::vector<AlgoRow> rows;  // sorted by algorithm tag
};

ResultsTable aggregate(const std::vector<RunResult>& results, const std::string& baseline = "adam");

enum class TableFormat { kCsv, kJson, kMarkdown };
TableFormat parse_table_format(const std::string& name);

std::string render_results(const ResultsTable& table, TableFormat format);
void emit_results(const ResultsTable& table, TableFormat format, const std::string& path);
ResultsTable parse_results_csv(const std::string& path);

// Scatter of per-run accuracies: x = x_domain, y = mean over y_domains.
// Trend lines are fit separately for tram-family and other algorithms; each
// carries data-slope / data-intercept / data-pearson attributes.
std::string render_scatter_plot(const std::vector<RunResult>& results, const std::string& x_domain,
                                const std::vector<std::string>& y_domains);
void emit_scatter_plot(const std::vector<RunResult>& results, const std::string& x_domain,
                       const std::vector<std::string>& y_domains, const std::string& out_path);

// Expand files and directories (taking their *.json entries, sorted) into
// loaded results.
std::vector<RunResult> load_results(const std::vector<std::string>& inputs);

void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Entry point behind the tram binary. Exit codes: 0 success, 1 usage, 2
// runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace tram
