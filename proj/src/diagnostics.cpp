#include "dmliv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <thread>

#include "dmliv/net.hpp"
#include "dmliv/rng.hpp"

namespace dmliv {

std::string to_string(OrthoVerdict v) {
  switch (v) {
    case OrthoVerdict::orthogonal: return "orthogonal";
    case OrthoVerdict::not_orthogonal: return "not_orthogonal";
    default: return "inconclusive";
  }
}

namespace {

// Mean and Monte Carlo variance-of-the-mean of h0(c, .) over `draws` samples
// from the oracle action law at one data point, in standardized units.
void oracle_moments(const ObservationSet& data, long i, long draws, Rng& rng,
                    double& mean_out, double& var_of_mean_out) {
  double c0, c1, c2;
  data.truth.h0_poly(data.context.row(i).transpose(), c0, c1, c2);
  double mu, sd;
  data.truth.action_law(data.context.row(i).transpose(),
                        data.instrument.row(i).transpose(), mu, sd);

  // h0 is quadratic in the raw action, so the draw average reduces to draw
  // moments; this is still the literal mean of h0 over the sampled actions.
  double sum_v = 0.0, sum_v2 = 0.0;
  constexpr long kChunk = 8192;
  Eigen::ArrayXd u1(kChunk), u2(kChunk);
  long left = draws;
  while (left > 0) {
    const long m = std::min(kChunk, left);
    for (long j = 0; j < m; ++j) {
      u1(j) = 1.0 - rng.uniform();
      u2(j) = rng.uniform();
    }
    Eigen::ArrayXd a = mu + sd * ((-2.0 * u1.head(m).log()).sqrt() *
                                  (6.283185307179586477 * u2.head(m)).cos());
    Eigen::ArrayXd v = c0 + c1 * a + c2 * a.square();
    sum_v += v.sum();
    sum_v2 += v.square().sum();
    left -= m;
  }
  const double n = static_cast<double>(draws);
  const double mean_raw = sum_v / n;
  const double var_raw = std::max(0.0, sum_v2 / n - mean_raw * mean_raw);

  const double osd = data.outcome_scaling ? data.outcome_scaling->stddev : 1.0;
  const double omean = data.outcome_scaling ? data.outcome_scaling->mean : 0.0;
  mean_out = (mean_raw - omean) / osd;
  var_of_mean_out = var_raw / n / (osd * osd);
}

void fill_oracles(const ObservationSet& data, long draws, std::uint64_t seed,
                  int threads, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
  const long n = data.rows();
  mean.resize(n);
  var.resize(n);
  const int nt = std::max(1, threads);
  auto work = [&](long begin, long end) {
    for (long i = begin; i < end; ++i) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
      oracle_moments(data, i, draws, rng, mean(i), var(i));
    }
  };
  if (nt == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const long per = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
      const long b = t * per, e = std::min(n, b + per);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
}

// Random bounded direction: a small random net of (c, z), output scaled and
// clipped to [-1, 1].
Eigen::VectorXd random_direction(const Eigen::MatrixXd& xz, std::uint64_t seed) {
  FeedForwardNet net(static_cast<int>(xz.cols()), {16, 16}, 1, seed);
  Eigen::VectorXd mean = xz.colwise().mean();
  Eigen::VectorXd sd =
      ((xz.rowwise() - mean.transpose()).array().square().colwise().mean())
          .sqrt()
          .transpose();
  net.set_input_scaling(mean, sd);
  Eigen::VectorXd v = net.forward(xz).col(0);
  const double scale = std::max(1e-12, v.array().abs().mean());
  return (v.array() / scale).min(1.0).max(-1.0);
}

}  // namespace

OrthogonalityReport check_orthogonality(ScoreKind kind, const ObservationSet& data,
                                        const OrthogonalityConfig& cfg) {
  if (cfg.r_step <= 0.0)
    throw std::invalid_argument("check_orthogonality: r_step must be > 0");
  if (!data.truth.valid())
    throw std::invalid_argument("check_orthogonality: needs synthetic data with truth");

  const long n = data.rows();
  Eigen::MatrixXd xz(n, data.context_dim() + data.instrument_dim());
  xz.leftCols(data.context_dim()) = data.context;
  xz.rightCols(data.instrument_dim()) = data.instrument;

  Eigen::VectorXd s0, s0_var, g0, g0_var;
  fill_oracles(data, cfg.s_oracle_draws, derive_seed(cfg.seed, {fnv1a64("s0")}),
               cfg.threads, s0, s0_var);
  fill_oracles(data, cfg.g_oracle_draws, derive_seed(cfg.seed, {fnv1a64("g0")}),
               cfg.threads, g0, g0_var);

  OrthogonalityReport rep;
  rep.directions = cfg.directions;
  rep.r_step = cfg.r_step;
  rep.derivative_estimates.resize(cfg.directions);
  rep.standard_errors.resize(cfg.directions);

  // Baseline residual of the score at the truth point (r = 0).
  Eigen::VectorXd base(n);
  if (kind == ScoreKind::orthogonal) {
    base = s0 - g0;
    rep.mc_floor = (s0_var + g0_var).mean();
  } else {
    base = data.outcome - g0;
    rep.mc_floor = g0_var.mean();
  }
  Eigen::VectorXd psi0 = base.array().square();
  rep.score_mean = psi0.mean();
  rep.score_se = std::sqrt((psi0.array() - rep.score_mean).square().mean() /
                           static_cast<double>(n));
  rep.validity_gap_t = rep.score_se > 0.0
                           ? (rep.score_mean - rep.mc_floor) / rep.score_se
                           : 0.0;
  rep.validity_ok = rep.score_mean <= 5.0 * rep.mc_floor;

  static const char* kModes[3] = {"joint", "s_only", "g_only"};
  bool all_within_3se = true;
  bool any_beyond_5se = false;
  for (int d = 0; d < cfg.directions; ++d) {
    const char* mode = kModes[d % 3];
    rep.direction_modes.push_back(mode);
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dg = Eigen::VectorXd::Zero(n);
    const std::uint64_t dseed =
        derive_seed(cfg.seed, {fnv1a64("direction"), static_cast<std::uint64_t>(d)});
    if (std::string(mode) != "g_only")
      ds = random_direction(xz, derive_seed(dseed, {fnv1a64("s")}));
    if (std::string(mode) != "s_only")
      dg = random_direction(xz, derive_seed(dseed, {fnv1a64("g")}));

    // The s slot only exists in the orthogonal score.
    Eigen::VectorXd f =
        kind == ScoreKind::orthogonal ? Eigen::VectorXd(ds - dg) : Eigen::VectorXd(-dg);

    const double r = cfg.r_step;
    Eigen::ArrayXd plus = (base.array() + r * f.array()).square();
    Eigen::ArrayXd minus = (base.array() - r * f.array()).square();
    Eigen::ArrayXd deriv = (plus - minus) / (2.0 * r);
    const double est = deriv.mean();
    const double se =
        std::sqrt((deriv - est).square().mean() / static_cast<double>(n));
    rep.derivative_estimates(d) = est;
    rep.standard_errors(d) = se;

    const double tol = 1e-15 * std::max(1.0, rep.score_mean);
    if (std::abs(est) > 3.0 * se + tol) all_within_3se = false;
    if (std::abs(est) > 5.0 * se + tol) any_beyond_5se = true;
  }

  if (!rep.validity_ok || any_beyond_5se)
    rep.verdict = OrthoVerdict::not_orthogonal;
  else if (rep.validity_ok && all_within_3se)
    rep.verdict = OrthoVerdict::orthogonal;
  else
    rep.verdict = OrthoVerdict::inconclusive;
  return rep;
}

RelevanceResult relevance_check(const ObservationSet& data, double threshold) {
  const long n = data.rows();
  if (n < 100) throw std::invalid_argument("relevance_check: need N >= 100");
  const int dc = data.context_dim(), dz = data.instrument_dim();

  for (int j = 0; j < dc; ++j) {
    const double sd = std::sqrt(
        (data.context.col(j).array() - data.context.col(j).mean()).square().mean());
    if (sd <= 0.0) throw std::invalid_argument("relevance_check: degenerate context column");
  }
  for (int j = 0; j < dz; ++j) {
    const double sd = std::sqrt(
        (data.instrument.col(j).array() - data.instrument.col(j).mean()).square().mean());
    if (sd <= 0.0)
      throw std::invalid_argument("relevance_check: degenerate instrument column");
  }

  Eigen::MatrixXd x0(n, 1 + dc);
  x0.col(0).setOnes();
  x0.rightCols(dc) = data.context;
  Eigen::MatrixXd x1(n, 1 + dc + dz);
  x1.leftCols(1 + dc) = x0;
  x1.rightCols(dz) = data.instrument;

  const Eigen::VectorXd a = data.action.col(0);
  const Eigen::VectorXd beta0 = x0.colPivHouseholderQr().solve(a);
  const Eigen::VectorXd beta1 = x1.colPivHouseholderQr().solve(a);
  const double rss0 = (a - x0 * beta0).squaredNorm();
  const double rss1 = (a - x1 * beta1).squaredNorm();

  const double dof = static_cast<double>(n - (1 + dc + dz));
  RelevanceResult res;
  res.threshold = threshold;
  if (rss1 <= 1e-12 * rss0) {
    res.statistic = std::numeric_limits<double>::infinity();
  } else {
    res.statistic = ((rss0 - rss1) / static_cast<double>(dz)) / (rss1 / dof);
  }
  res.weak = res.statistic < threshold;
  return res;
}

RateFit fit_rate(const std::vector<std::pair<double, double>>& runs) {
  std::map<double, std::pair<double, long>> by_n;
  for (const auto& [n, metric] : runs) {
    if (!(metric > 0.0))
      throw std::invalid_argument("fit_rate: metrics must be positive for the log fit");
    auto& acc = by_n[n];
    acc.first += metric;
    acc.second += 1;
  }
  if (by_n.size() < 3)
    throw std::invalid_argument("fit_rate: need at least 3 distinct sample sizes");

  RateFit fit;
  std::vector<double> lx, ly;
  for (const auto& [n, acc] : by_n) {
    const double mean = acc.first / static_cast<double>(acc.second);
    fit.sample_sizes.push_back(n);
    fit.metric_means.push_back(mean);
    lx.push_back(std::log(n));
    ly.push_back(std::log(mean));
  }

  const double k = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double denom = k * sxx - sx * sx;
  fit.slope = (k * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / k;

  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / k;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double pred = fit.intercept + fit.slope * lx[i];
    ss_res += (ly[i] - pred) * (ly[i] - pred);
    ss_tot += (ly[i] - ybar) * (ly[i] - ybar);
  }
  fit.r_squared = ss_tot < 1e-30 ? (ss_res < 1e-30 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
  return fit;
}

}  // namespace dmliv
