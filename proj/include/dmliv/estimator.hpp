// Two-stage debiased IV estimators.
//
// fit_dmliv: per-fold nuisances (outcome regressor s-hat and conditional
// action density), then a stage-2 model trained on the orthogonal loss
// (s_k(c,z) - g_k(h, c, z))^2 with mini-batches drawn round-robin from the
// held-out folds. fit_ce_dmliv trains the nuisances once on all data and
// reuses the same loss. fit_naive_twostage is the biased control: it
// minimizes (r - g(h, c, z))^2 with a full-data density and no s-hat.
//
// Stage 2 is gradient-based for feedforward models. When the stage-2 config
// asks for boosted trees, h is grown by functional gradient boosting on the
// same Monte Carlo objective: each round fits a tree to the per-observation
// residual s - g evaluated at frozen action draws.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "dmliv/counterfactual.hpp"
#include "dmliv/crossfit.hpp"
#include "dmliv/dataset.hpp"
#include "dmliv/mdn.hpp"
#include "dmliv/regressor.hpp"

namespace dmliv {

struct DmlivOptions {
  int folds = 10;
  RegressorConfig s_config;   // stage-1 outcome regressor E[R | C, Z]
  MdnConfig density_config;   // stage-1 conditional action density
  RegressorConfig h_config;   // stage-2 model; kind picks the training path

  int mc_samples = 32;         // action draws per point in training batches
  int batch_size = 128;        // stage-2 mini-batch per fold
  int max_epochs = 300;
  double convergence_rel_tol = 1e-5;  // relative improvement of the monitor loss
  int convergence_patience = 5;       // consecutive stale epochs before stopping
  int monitor_mc_samples = 16;        // frozen draws for the convergence monitor

  std::uint64_t seed = 0;
  bool allow_weak_iv = false;
  double weak_iv_threshold = 10.0;
};

struct TraceRow {
  long step = 0;
  int fold = 0;
  double loss = 0.0;
};

struct NuisancePair {
  std::shared_ptr<Regressor> s_hat;  // null for the naive baseline
  std::shared_ptr<MixtureDensity> density;
  std::vector<long> trained_on;  // provenance: indices used to fit this pair
  int mc_samples = 32;
};

struct DmlivEstimate {
  std::shared_ptr<CounterfactualFn> model;
  std::shared_ptr<CounterfactualModel> neural;  // non-null for feedforward h
  std::vector<NuisancePair> nuisances;
  FoldPartition partition;
  std::vector<TraceRow> training_trace;
  double final_loss = 0.0;  // monitor loss at stop; records the residual
                            // optimization error rather than certifying it
  int epochs_run = 0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;

  nlohmann::json to_json(const std::string& config_digest = "") const;
};

DmlivEstimate fit_dmliv(const ObservationSet& data, const DmlivOptions& opts);
DmlivEstimate fit_ce_dmliv(const ObservationSet& data, const DmlivOptions& opts);
DmlivEstimate fit_naive_twostage(const ObservationSet& data, const DmlivOptions& opts);

void export_trace_csv(const DmlivEstimate& est, const std::string& path);

}  // namespace dmliv
