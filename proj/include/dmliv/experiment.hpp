// Experiment orchestration: flat key=value configs with CLI overrides,
// seeded multi-run sweeps over (method, N, seed), crash-safe report CSVs,
// summaries with type-7 quantiles, and the diagnostics driver.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dmliv/dataset.hpp"
#include "dmliv/diagnostics.hpp"
#include "dmliv/estimator.hpp"

namespace dmliv {

inline constexpr const char* kLibraryVersion = "0.1.0";

enum class Method { dmliv, ce_dmliv, naive };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

using KeyValues = std::map<std::string, std::string>;

// Documented defaults for every recognized key.
KeyValues default_config();
KeyValues load_config_file(const std::string& path);
// Each override is "key=value"; unknown keys are rejected.
void apply_overrides(KeyValues& cfg, const std::vector<std::string>& overrides);
// Stable FNV-1a hash of the canonical sorted key=value serialization.
std::string config_digest(const KeyValues& cfg);
void write_config_lock(const KeyValues& cfg, const std::string& path);

struct ExperimentConfig {
  std::string dataset = "demand";
  std::vector<Method> methods{Method::dmliv};
  RegressorKind estimator = RegressorKind::feedforward;
  std::vector<long> sample_sizes{5000};
  double rho = 0.9;
  double iv_strength = 1.0;
  int folds = 10;
  std::vector<int> seeds;  // seed indices
  std::uint64_t root_seed = 20240901;

  int mc_samples = 32;
  int action_grid = 1024;
  long mse_eval_n = 10000;
  long policy_eval_n = 4096;
  double ood_shift = 1.0;

  // Learner hyperparameters; dropout/stage-2 epochs may be "auto".
  std::vector<int> net_widths{128, 64, 32};
  double net_lr = 1e-3;
  double net_weight_decay = 1e-3;
  std::optional<double> net_dropout;  // nullopt = auto: 1000 / (5000 + N)
  int stage1_epochs = 60;
  int net_batch = 128;
  int mdn_components = 10;
  double mdn_std_floor = 1e-3;
  int stage2_batch = 128;
  std::optional<int> stage2_max_epochs;  // nullopt = auto budget by N
  double stage2_rel_tol = 1e-5;
  int stage2_patience = 5;
  int trees_n = 500;
  int trees_min_leaf_nuisance = 100;
  int trees_min_leaf_h = 10;
  int trees_depth = 3;
  double trees_shrinkage = 0.1;
  double naive_reg_factor = 1.0;  // multiplies density weight decay for naive

  bool allow_weak_iv = false;
  int jobs = 1;
  std::string output_dir = "out";

  std::string digest;   // of the resolved key=value map
  KeyValues resolved;   // full map, written to config.lock

  // Per-N derived values.
  double dropout_for(long n) const;
  int stage2_epochs_for(long n) const;
  DmlivOptions estimator_options(long n, std::uint64_t cell_seed,
                                 Method method) const;
};

ExperimentConfig resolve_config(const KeyValues& kv);

struct ReportRow {
  std::string method;
  std::string estimator;
  long n = 0;
  double rho = 0.0;
  double iv_strength = 0.0;
  int seed = 0;
  double mse_h = 0.0;
  double reward_in_dist = 0.0;
  double reward_ood = 0.0;
  double subopt = 0.0;
  double wall_clock_s = 0.0;
  std::string config_digest;
  std::string lib_version;
  std::string status = "ok";  // ok | error
  std::string error;

  std::string cell_key() const;
};

// Runs the full grid; appends to <output_dir>/report.csv as cells finish and
// skips cells already present (crash-resume). Per-cell failures become error
// rows. Returns all rows for this digest, including pre-existing ones.
std::vector<ReportRow> run_experiment(const ExperimentConfig& cfg);

// One cell, no file I/O; used by run_experiment and the `fit` CLI verb.
// When out_estimate is given, the fitted estimate is moved into it.
ReportRow run_cell(const ExperimentConfig& cfg, Method method, long n, int seed_index,
                   DmlivEstimate* out_estimate = nullptr);

std::vector<ReportRow> read_report_csv(const std::string& path);
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);

struct SummaryRow {
  std::string group;   // joined group-key values
  std::string metric;  // mse_h | reward_in_dist | reward_ood | subopt
  long count = 0;
  double mean = 0, stddev = 0, median = 0, q25 = 0, q75 = 0;
};

// group_keys is a subset of {method, estimator, n, rho, iv_strength}.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows,
                                  const std::vector<std::string>& group_keys);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path);
// Plot-ready JSON: x = N, one series per method, for each metric.
nlohmann::json plot_data(const std::vector<ReportRow>& rows);

// Linear-interpolation (type-7) quantile of a sample.
double quantile_type7(std::vector<double> values, double p);

// Fresh-sample counterfactual MSE against the closed-form truth, in
// standardized outcome units; actions are drawn from the generator's exact
// action law at freshly drawn (context, instrument).
double counterfactual_mse(const CounterfactualFn& model, const ObservationSet& train,
                          long n_eval, std::uint64_t seed);

struct DiagnosticsOutcome {
  OrthogonalityReport orthogonal_report;
  OrthogonalityReport standard_report;
  RelevanceResult relevance_strong;
  RelevanceResult relevance_weak;
  RateFit planted_rate;
  bool pass = false;
  nlohmann::json to_json() const;
};

// Orthogonality (both scores), relevance at full and zero instrument
// strength, and a planted 1/sqrt(N) rate fit. pass = every verdict matches.
DiagnosticsOutcome run_diagnostics(const ExperimentConfig& cfg, long n_ortho = 20000);

}  // namespace dmliv
