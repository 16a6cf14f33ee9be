// Numerical checks of the estimator's structural claims: score validity and
// orthogonality at the truth, instrument relevance, and log-log rate fits.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmliv/dataset.hpp"

namespace dmliv {

enum class ScoreKind { orthogonal, standard };
enum class OrthoVerdict { orthogonal, not_orthogonal, inconclusive };

std::string to_string(OrthoVerdict v);

struct OrthogonalityConfig {
  int directions = 8;
  double r_step = 1e-2;
  long s_oracle_draws = 100000;  // Monte Carlo for the oracle s0 = E[R | c, z]
  int g_oracle_draws = 512;      // draws behind the oracle g0(h0, c, z)
  std::uint64_t seed = 0;
  int threads = 1;
};

struct OrthogonalityReport {
  int directions = 0;
  Eigen::VectorXd derivative_estimates;
  Eigen::VectorXd standard_errors;
  std::vector<std::string> direction_modes;  // joint / s_only / g_only
  double r_step = 0.0;

  // Validity of the score at the truth point. mc_floor is the part of the
  // mean score explained by oracle Monte Carlo noise alone; validity_gap_t
  // is (score_mean - mc_floor) / score_se.
  double score_mean = 0.0;
  double score_se = 0.0;
  double mc_floor = 0.0;
  double validity_gap_t = 0.0;
  bool validity_ok = false;

  OrthoVerdict verdict = OrthoVerdict::inconclusive;
};

// Gateaux-derivative probe of a score at the truth (h0, (s0, g0)) with
// oracle nuisances computed by Monte Carlo from the generator's exact action
// law. Directions are random feedforward nets of (c, z), outputs clipped to
// [-1, 1], cycling joint / s-only / g-only perturbations.
OrthogonalityReport check_orthogonality(ScoreKind kind, const ObservationSet& data,
                                        const OrthogonalityConfig& cfg);

struct RelevanceResult {
  double statistic = 0.0;  // first-stage F: variance reduction from adding Z
  bool weak = false;
  double threshold = 10.0;
};

RelevanceResult relevance_check(const ObservationSet& data, double threshold = 10.0);

struct RateFit {
  std::vector<double> sample_sizes;
  std::vector<double> metric_means;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Groups runs by N, means the metric within each N, then OLS-fits
// log(mean metric) on log N. Metrics must be positive.
RateFit fit_rate(const std::vector<std::pair<double, double>>& runs);

}  // namespace dmliv
