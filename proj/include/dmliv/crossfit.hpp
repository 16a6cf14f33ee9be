// K-fold partitions, the two score functions, and the Monte Carlo
// conditional-mean estimate g-hat.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "dmliv/counterfactual.hpp"
#include "dmliv/mdn.hpp"
#include "dmliv/rng.hpp"

namespace dmliv {

struct FoldPartition {
  int k = 0;
  std::vector<std::vector<long>> folds;

  std::vector<long> complement(int fold) const;
  long total() const;
};

// Uniformly random balanced partition of [0, n); fold sizes differ by at
// most one.
FoldPartition make_partition(long n, int k, std::uint64_t seed);

// (s - g)^2: zero at the truth, insensitive to first-order nuisance error.
inline double orthogonal_score(double s_val, double g_val) {
  const double d = s_val - g_val;
  return d * d;
}

// (r - g)^2: the plain two-stage loss, kept as baseline and negative control.
inline double standard_score(double r, double g_val) {
  const double d = r - g_val;
  return d * d;
}

// Monte Carlo estimate of E[h(c, A) | c, z] under the fitted action density:
// the mean of h over mc_samples draws. Draws are frozen for the evaluation,
// so the value is differentiable in the model parameters.
double g_hat(const std::function<double(const Eigen::Ref<const Eigen::VectorXd>&,
                                        double)>& h,
             const MixtureDensity& density,
             const Eigen::Ref<const Eigen::VectorXd>& context,
             const Eigen::Ref<const Eigen::VectorXd>& instrument, int mc_samples,
             Rng& rng);

double g_hat(const CounterfactualFn& model, const MixtureDensity& density,
             const Eigen::Ref<const Eigen::VectorXd>& context,
             const Eigen::Ref<const Eigen::VectorXd>& instrument, int mc_samples,
             Rng& rng);

}  // namespace dmliv
