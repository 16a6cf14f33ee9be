#include "dmliv/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "dmliv/rng.hpp"

namespace dmliv {

namespace {

// Test-law context draw for the given generator; shift moves coordinate 0.
Eigen::VectorXd draw_context(const GroundTruth& truth, int dim, double shift,
                             Rng& rng) {
  Eigen::VectorXd c(dim);
  switch (truth.kind) {
    case TruthKind::demand:
      c(0) = rng.uniform(0.0, 10.0) + shift;
      c(1) = static_cast<double>(rng.uniform_int(1, 7));
      return c;
    case TruthKind::semisynth:
      for (int j = 0; j < dim; ++j) c(j) = rng.uniform(-1.0, 1.0);
      c(0) += shift;
      return c;
    default:
      throw std::logic_error("draw_context: no truth handle");
  }
}

}  // namespace

Policy make_policy(std::shared_ptr<const CounterfactualFn> model,
                   const ObservationSet& train, int action_grid,
                   std::uint64_t seed) {
  Policy p;
  p.model = std::move(model);
  p.action_grid = action_grid;
  p.seed = seed;
  const double lo = train.action.col(0).minCoeff();
  const double hi = train.action.col(0).maxCoeff();
  const double pad = 0.1 * (hi - lo);
  p.action_low = lo - pad;
  p.action_high = hi + pad;
  if (!(p.action_low < p.action_high))
    throw std::invalid_argument("make_policy: degenerate action range");
  return p;
}

double act(const Policy& policy, const Eigen::Ref<const Eigen::VectorXd>& context) {
  if (policy.action_grid < 2)
    throw std::invalid_argument("act: action_grid must be >= 2");
  const int g = policy.action_grid;
  const int dc = static_cast<int>(context.size());
  Eigen::MatrixXd ca(g, dc + 1);
  const double step = (policy.action_high - policy.action_low) / (g - 1);
  for (int i = 0; i < g; ++i) {
    ca.row(i).head(dc) = context.transpose();
    ca(i, dc) = policy.action_low + step * i;
  }
  const Eigen::VectorXd v = policy.model->values(ca);
  // Ascending grid + strict comparison: ties resolve to the lowest action.
  int best = 0;
  for (int i = 1; i < g; ++i)
    if (v(i) > v(best)) best = i;
  return ca(best, dc);
}

double optimal_action_truth(const GroundTruth& truth,
                            const Eigen::Ref<const Eigen::VectorXd>& context,
                            std::pair<double, double> action_bounds, int grid) {
  if (!truth.valid())
    throw std::invalid_argument("optimal_action_truth: missing truth handle");
  if (grid < 2) throw std::invalid_argument("optimal_action_truth: grid >= 2");
  const auto [lo, hi] = action_bounds;
  const double step = (hi - lo) / (grid - 1);
  double best_a = lo;
  double best_v = -std::numeric_limits<double>::infinity();
  double c0, c1, c2;
  truth.h0_poly(context, c0, c1, c2);
  for (int i = 0; i < grid; ++i) {
    const double a = lo + step * i;
    const double v = c0 + c1 * a + c2 * a * a;
    if (v > best_v) {
      best_v = v;
      best_a = a;
    }
  }
  return best_a;
}

double optimal_action_demand(double t, double s,
                             std::pair<double, double> price_bounds, int grid) {
  GroundTruth truth;
  truth.kind = TruthKind::demand;
  Eigen::VectorXd c(2);
  c << t, s;
  return optimal_action_truth(truth, c, price_bounds, grid);
}

PolicyEvaluation evaluate_policy(const Policy& policy, const ObservationSet& ref,
                                 long n_eval, double context_shift,
                                 std::uint64_t seed) {
  if (n_eval < 1) throw std::invalid_argument("evaluate_policy: n_eval >= 1");
  PolicyEvaluation out;
  out.n_eval = n_eval;
  out.context_shift = context_shift;
  out.truth_available = ref.truth.valid();
  if (!out.truth_available) return out;  // real data: value unknown

  const std::pair<double, double> raw_bounds{
      ref.action_scaling ? destandardize(policy.action_low, *ref.action_scaling)
                         : policy.action_low,
      ref.action_scaling ? destandardize(policy.action_high, *ref.action_scaling)
                         : policy.action_high};

  double sum_pi = 0.0, sum_star = 0.0, sum_d2 = 0.0;
  for (long i = 0; i < n_eval; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const Eigen::VectorXd c =
        draw_context(ref.truth, ref.context_dim(), context_shift, rng);
    const double a_std = act(policy, c);
    const double a_raw =
        ref.action_scaling ? destandardize(a_std, *ref.action_scaling) : a_std;
    const double v_pi = ref.truth.h0(c, a_raw);
    const double a_star = optimal_action_truth(ref.truth, c, raw_bounds);
    const double v_star = ref.truth.h0(c, a_star);
    sum_pi += v_pi;
    sum_star += v_star;
    const double d = v_star - v_pi;
    sum_d2 += d * d;
  }
  const double n = static_cast<double>(n_eval);
  out.value = sum_pi / n;
  out.optimal_value = sum_star / n;
  out.suboptimality = out.optimal_value - out.value;
  const double var_d = std::max(0.0, sum_d2 / n - out.suboptimality * out.suboptimality);
  out.subopt_se = std::sqrt(var_d / n);
  if (ref.outcome_scaling) {
    out.value_std = (out.value - ref.outcome_scaling->mean) / ref.outcome_scaling->stddev;
    out.optimal_value_std =
        (out.optimal_value - ref.outcome_scaling->mean) / ref.outcome_scaling->stddev;
  } else {
    out.value_std = out.value;
    out.optimal_value_std = out.optimal_value;
  }
  return out;
}

double random_policy_value(const ObservationSet& ref, const Policy& bounds_from,
                           long n_eval, double context_shift, std::uint64_t seed) {
  if (!ref.truth.valid())
    throw std::invalid_argument("random_policy_value: missing truth handle");
  double acc = 0.0;
  for (long i = 0; i < n_eval; ++i) {
    Rng rng(derive_seed(seed, {fnv1a64("random_policy"), static_cast<std::uint64_t>(i)}));
    const Eigen::VectorXd c =
        draw_context(ref.truth, ref.context_dim(), context_shift, rng);
    const double a_std = rng.uniform(bounds_from.action_low, bounds_from.action_high);
    const double a_raw =
        ref.action_scaling ? destandardize(a_std, *ref.action_scaling) : a_std;
    acc += ref.truth.h0(c, a_raw);
  }
  return acc / static_cast<double>(n_eval);
}

}  // namespace dmliv
