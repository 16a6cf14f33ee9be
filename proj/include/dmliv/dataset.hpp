// Synthetic benchmark generators with closed-form ground truth.
//
// Two generators are provided: the airline-ticket demand model (context =
// (time of year t, customer type s), action = price, instrument = fuel-price
// shifter z) and a semi-synthetic model with uniform contexts, a discrete
// instrument and a quadratic outcome surface. Both attach a GroundTruth
// handle carrying the structural function h0 and the exact conditional law
// of the action given (context, instrument), which downstream diagnostics
// use as oracles.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>

#include "dmliv/rng.hpp"

namespace dmliv {

struct Scaling {
  double mean = 0.0;
  double stddev = 1.0;
};

// x_std * std + mean; inverse of the standardization map.
double destandardize(double x, const Scaling& s);

struct DemandConfig {
  long n_samples = 0;
  double rho = 0.9;          // corr(outcome noise, action noise)
  double iv_strength = 1.0;  // scales how strongly z moves the price
  std::uint64_t seed = 0;
  bool standardize = true;
};

struct SemiSynthConfig {
  long n_samples = 0;
  int d_context = 10;
  int instrument_levels = 5;  // support size of the discrete instrument
  std::uint64_t seed = 0;
};

enum class TruthKind { none, demand, semisynth };

// Closed-form structural function and oracle action law for synthetic data.
// Both generators have a Gaussian action conditional, so the law is stored
// as (mean, sd) functions of (context, instrument), in raw (unscaled) units.
struct GroundTruth {
  TruthKind kind = TruthKind::none;
  double iv_strength = 1.0;    // demand only
  Eigen::MatrixXd weights;     // semisynth: d_context x levels, column per z
  int instrument_levels = 0;   // semisynth

  bool valid() const { return kind != TruthKind::none; }
  double h0(const Eigen::Ref<const Eigen::VectorXd>& context, double action) const;
  // Both built-in structural functions are exactly quadratic in the action:
  // h0(c, a) = c0 + c1 a + c2 a^2. Used to vectorize oracle Monte Carlo.
  void h0_poly(const Eigen::Ref<const Eigen::VectorXd>& context, double& c0,
               double& c1, double& c2) const;
  void action_law(const Eigen::Ref<const Eigen::VectorXd>& context,
                  const Eigen::Ref<const Eigen::VectorXd>& instrument,
                  double& mean, double& sd) const;
};

struct ObservationSet {
  Eigen::MatrixXd context;     // N x d_C
  Eigen::MatrixXd instrument;  // N x d_Z
  Eigen::MatrixXd action;      // N x d_A, standardized when action_scaling set
  Eigen::VectorXd outcome;     // N, standardized when outcome_scaling set

  GroundTruth truth;
  std::optional<Scaling> action_scaling;
  std::optional<Scaling> outcome_scaling;

  // Noise realizations kept for diagnostics on synthetic data.
  Eigen::VectorXd noise_eps;
  Eigen::VectorXd noise_omega;

  long rows() const { return context.rows(); }
  int context_dim() const { return static_cast<int>(context.cols()); }
  int instrument_dim() const { return static_cast<int>(instrument.cols()); }
  int action_dim() const { return static_cast<int>(action.cols()); }

  double action_raw(long i) const {
    return action_scaling ? destandardize(action(i, 0), *action_scaling)
                          : action(i, 0);
  }
  // h0 in standardized outcome units at standardized action a_std.
  double h0_std(const Eigen::Ref<const Eigen::VectorXd>& c, double a_std) const;
};

// The nonlinear seasonal factor of the demand model, defined on [0, 10].
double psi_t(double t);

// Structural demand function, raw units.
double true_h0_demand(double t, double s, double price);

ObservationSet generate_demand(const DemandConfig& cfg);
ObservationSet generate_semisynth(const SemiSynthConfig& cfg);

// CSV with header c_0..c_{dC-1},z_0..,a_0..,r plus a JSON sidecar
// (<path>.json) holding seed, config and scaling. Values round-trip
// within 1e-12 (17 significant digits are written).
void write_observations_csv(const ObservationSet& data, const std::string& path);
ObservationSet read_observations_csv(const std::string& path);

}  // namespace dmliv
