// Greedy policy extraction from a fitted counterfactual model and policy
// value / suboptimality evaluation against the closed-form truth.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <utility>

#include "dmliv/counterfactual.hpp"
#include "dmliv/dataset.hpp"

namespace dmliv {

struct Policy {
  std::shared_ptr<const CounterfactualFn> model;
  int action_grid = 1024;      // evaluation points per decision
  double action_low = 0.0;     // bounds in the model's (standardized) units
  double action_high = 1.0;
  std::uint64_t seed = 0;
};

// Bounds are the empirical action range of the training set widened by 10%,
// which keeps the argmax inside the region where the model was trained.
Policy make_policy(std::shared_ptr<const CounterfactualFn> model,
                   const ObservationSet& train, int action_grid = 1024,
                   std::uint64_t seed = 0);

// Argmax of model.value(c, a) over an evenly spaced inclusive grid of
// action_grid points; ties go to the lowest action.
double act(const Policy& policy, const Eigen::Ref<const Eigen::VectorXd>& context);

// Argmax of the closed-form h0 over a dense grid (default 4097 points)
// within raw-unit action bounds; the oracle greedy policy.
double optimal_action_truth(const GroundTruth& truth,
                            const Eigen::Ref<const Eigen::VectorXd>& context,
                            std::pair<double, double> action_bounds,
                            int grid = 4097);

// Demand-model specialization: h0 is affine in price, so the optimum sits on
// a boundary of the price interval.
double optimal_action_demand(double t, double s,
                             std::pair<double, double> price_bounds, int grid = 4097);

struct PolicyEvaluation {
  double value = 0.0;           // V(pi-hat), raw reward units
  double optimal_value = 0.0;   // V(pi*)
  double suboptimality = 0.0;   // optimal_value - value
  double value_std = 0.0;       // same pair in standardized reward units
  double optimal_value_std = 0.0;
  double subopt_se = 0.0;       // Monte Carlo SE of the paired difference
  long n_eval = 0;
  double context_shift = 0.0;
  bool truth_available = false;
};

// Draws n_eval contexts from the generator's test law (coordinate 0 shifted
// by context_shift), plays the policy and the oracle, and reports mean
// values. Contexts use per-index derived substreams, so the result does not
// depend on evaluation order.
PolicyEvaluation evaluate_policy(const Policy& policy, const ObservationSet& ref,
                                 long n_eval, double context_shift,
                                 std::uint64_t seed);

// Mean value of the uniform-random action policy on the same test law;
// reference point for suboptimality comparisons. Raw reward units.
double random_policy_value(const ObservationSet& ref, const Policy& bounds_from,
                           long n_eval, double context_shift, std::uint64_t seed);

}  // namespace dmliv
