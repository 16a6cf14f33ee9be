#include "dmliv/estimator.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dmliv/diagnostics.hpp"

namespace dmliv {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::MatrixXd concat_cz(const ObservationSet& data) {
  Eigen::MatrixXd x(data.rows(), data.context_dim() + data.instrument_dim());
  x.leftCols(data.context_dim()) = data.context;
  x.rightCols(data.instrument_dim()) = data.instrument;
  return x;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<long>& idx) {
  Eigen::MatrixXd out(static_cast<long>(idx.size()), m.cols());
  for (long i = 0; i < out.rows(); ++i)
    out.row(i) = m.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::VectorXd entries_of(const Eigen::VectorXd& v, const std::vector<long>& idx) {
  Eigen::VectorXd out(static_cast<long>(idx.size()));
  for (long i = 0; i < out.rows(); ++i)
    out(i) = v(idx[static_cast<std::size_t>(i)]);
  return out;
}

void check_preconditions(const ObservationSet& data, const DmlivOptions& opts,
                         bool needs_folds) {
  if (data.action_dim() != 1)
    throw std::invalid_argument("estimator: only scalar actions are supported");
  if (needs_folds && data.rows() < 2L * opts.folds)
    throw std::invalid_argument("estimator: need at least 2K observations");
  if (!opts.allow_weak_iv) {
    const RelevanceResult rel = relevance_check(data);
    if (rel.statistic < opts.weak_iv_threshold)
      throw std::runtime_error(
          "estimator: instrument looks weak (F = " + std::to_string(rel.statistic) +
          " < " + std::to_string(opts.weak_iv_threshold) +
          "); set allow_weak_iv to proceed");
  }
}

// Fits one (s-hat, density) pair on the given index set.
NuisancePair fit_nuisances(const ObservationSet& data, const Eigen::MatrixXd& xz,
                           const std::vector<long>& train_idx, bool with_s,
                           const DmlivOptions& opts, std::uint64_t seed) {
  NuisancePair pair;
  pair.trained_on = train_idx;
  pair.mc_samples = opts.mc_samples;
  const Eigen::MatrixXd x_train = rows_of(xz, train_idx);
  const Eigen::VectorXd a_train = entries_of(data.action.col(0), train_idx);

  MdnConfig dcfg = opts.density_config;
  dcfg.seed = derive_seed(seed, {fnv1a64("density")});
  auto density = std::make_shared<MixtureDensity>(static_cast<int>(xz.cols()), dcfg);
  density->fit(x_train, a_train, dcfg);
  pair.density = std::move(density);

  if (with_s) {
    const Eigen::VectorXd r_train = entries_of(data.outcome, train_idx);
    RegressorConfig scfg = opts.s_config;
    scfg.seed = derive_seed(seed, {fnv1a64("s_hat")});
    pair.s_hat = fit_regressor(x_train, r_train, scfg);
  }
  return pair;
}

// Shuffled without-replacement index stream over one fold.
struct FoldStream {
  std::vector<long> idx;
  std::size_t pos = 0;
  Rng rng;

  FoldStream(std::vector<long> indices, std::uint64_t seed)
      : idx(std::move(indices)), rng(seed) {
    rng.shuffle(idx);
  }

  long next() {
    if (pos >= idx.size()) {
      rng.shuffle(idx);
      pos = 0;
    }
    return idx[pos++];
  }
};

struct Stage2Problem {
  const ObservationSet& data;
  const Eigen::MatrixXd& xz;
  Eigen::VectorXd targets;          // s-hat values, or r for the naive loss
  std::vector<int> fold_of;         // observation -> nuisance index
  const std::vector<NuisancePair>& nuisances;
  const FoldPartition& partition;
};

// Mean of (target - mean_j h(c, a_ij))^2 over all observations with the
// frozen draw matrix; evaluated in chunks, deterministic forward pass.
double monitor_loss(const CounterfactualModel& model, const Stage2Problem& prob,
                    const Eigen::MatrixXd& frozen_draws) {
  const long n = prob.data.rows();
  const long mc = frozen_draws.cols();
  const int dc = prob.data.context_dim();
  const long chunk = std::max<long>(1, 16384 / mc);
  Eigen::MatrixXd ca(chunk * mc, dc + 1);
  double acc = 0.0;
  for (long start = 0; start < n; start += chunk) {
    const long m = std::min(chunk, n - start);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < mc; ++j) {
        ca.row(i * mc + j).head(dc) = prob.data.context.row(start + i);
        ca(i * mc + j, dc) = frozen_draws(start + i, j);
      }
    const Eigen::VectorXd h = model.values(ca.topRows(m * mc));
    for (long i = 0; i < m; ++i) {
      const double g = h.segment(i * mc, mc).mean();
      const double d = prob.targets(start + i) - g;
      acc += d * d;
    }
  }
  return acc / static_cast<double>(n);
}

std::shared_ptr<CounterfactualModel> fit_stage2_neural(const Stage2Problem& prob,
                                                       const DmlivOptions& opts,
                                                       DmlivEstimate& est) {
  const long n = prob.data.rows();
  const int dc = prob.data.context_dim();
  const int k_eff = prob.partition.k;
  const int nb = std::max(1, opts.batch_size);
  const int mc = std::max(1, opts.mc_samples);

  RegressorConfig hcfg = opts.h_config;
  hcfg.seed = derive_seed(opts.seed, {fnv1a64("h_init")});
  auto model = std::make_shared<CounterfactualModel>(dc, hcfg);

  // Scale stage-2 inputs by the training marginals of (c, a).
  {
    Eigen::MatrixXd ca(n, dc + 1);
    ca.leftCols(dc) = prob.data.context;
    ca.col(dc) = prob.data.action.col(0);
    Eigen::VectorXd mean = ca.colwise().mean();
    Eigen::VectorXd sd =
        ((ca.rowwise() - mean.transpose()).array().square().colwise().mean())
            .sqrt()
            .transpose();
    model->net().set_input_scaling(mean, sd);
  }

  // Frozen draws for the convergence monitor.
  Rng monitor_rng(derive_seed(opts.seed, {fnv1a64("stage2.monitor")}));
  const int mon_mc = std::max(1, opts.monitor_mc_samples);
  Eigen::MatrixXd frozen(n, mon_mc);
  {
    const long chunk = 4096;
    for (long start = 0; start < n; start += chunk) {
      const long m = std::min(chunk, n - start);
      for (int k = 0; k < k_eff; ++k) {
        std::vector<long> block;
        for (long i = start; i < start + m; ++i)
          if (prob.fold_of[static_cast<std::size_t>(i)] == k) block.push_back(i);
        if (block.empty()) continue;
        Eigen::MatrixXd x = rows_of(prob.xz, block);
        Eigen::MatrixXd draws = prob.nuisances[static_cast<std::size_t>(k)]
                                    .density->sample_matrix(x, mon_mc, monitor_rng);
        for (std::size_t b = 0; b < block.size(); ++b)
          frozen.row(block[b]) = draws.row(static_cast<long>(b));
      }
    }
  }

  AdamW opt;
  opt.lr = hcfg.learning_rate;
  opt.weight_decay = hcfg.weight_decay;
  Eigen::VectorXd theta = model->params();
  opt.reset(theta.size());

  std::vector<FoldStream> streams;
  for (int k = 0; k < k_eff; ++k)
    streams.emplace_back(prob.partition.folds[static_cast<std::size_t>(k)],
                         derive_seed(opts.seed, {fnv1a64("stage2.stream"),
                                                 static_cast<std::uint64_t>(k)}));
  Rng draw_rng(derive_seed(opts.seed, {fnv1a64("stage2.draws")}));
  Rng dropout_rng(derive_seed(opts.seed, {fnv1a64("stage2.dropout")}));

  const long steps_per_epoch =
      std::max<long>(1, (n + static_cast<long>(k_eff) * nb - 1) /
                            (static_cast<long>(k_eff) * nb));

  FeedForwardNet::Workspace ws;
  Eigen::VectorXd grad;
  Eigen::MatrixXd xz_batch, ca_batch, draws;
  Eigen::MatrixXd d_out;
  std::vector<long> batch_idx(static_cast<std::size_t>(nb));

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  long step = 0;
  int epochs_run = 0;
  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    for (long outer = 0; outer < steps_per_epoch; ++outer) {
      for (int k = 0; k < k_eff; ++k) {
        auto& stream = streams[static_cast<std::size_t>(k)];
        const long m = std::min<long>(
            nb, static_cast<long>(
                    prob.partition.folds[static_cast<std::size_t>(k)].size()));
        batch_idx.resize(static_cast<std::size_t>(m));
        for (long i = 0; i < m; ++i) batch_idx[static_cast<std::size_t>(i)] = stream.next();

        xz_batch = rows_of(prob.xz, batch_idx);
        draws = prob.nuisances[static_cast<std::size_t>(k)].density->sample_matrix(
            xz_batch, mc, draw_rng);

        ca_batch.resize(m * mc, dc + 1);
        for (long i = 0; i < m; ++i) {
          const long row = batch_idx[static_cast<std::size_t>(i)];
          for (int j = 0; j < mc; ++j) {
            ca_batch.row(i * mc + j).head(dc) = prob.data.context.row(row);
            ca_batch(i * mc + j, dc) = draws(i, j);
          }
        }

        Eigen::MatrixXd h =
            model->net().forward_train(ca_batch, ws, hcfg.dropout_rate, &dropout_rng);
        double loss = 0.0;
        d_out.resize(m * mc, 1);
        for (long i = 0; i < m; ++i) {
          const double g = h.col(0).segment(i * mc, mc).mean();
          const double resid =
              g - prob.targets(batch_idx[static_cast<std::size_t>(i)]);
          loss += resid * resid;
          const double coeff = 2.0 * resid / static_cast<double>(m * mc);
          for (int j = 0; j < mc; ++j) d_out(i * mc + j, 0) = coeff;
        }
        loss /= static_cast<double>(m);
        if (!std::isfinite(loss))
          throw std::runtime_error("stage 2: non-finite loss at step " +
                                   std::to_string(step));
        est.training_trace.push_back({step, k, loss});
        model->net().backward(ws, d_out, grad);
        opt.step(theta, grad);
        model->set_params(theta);
        ++step;
      }
    }
    ++epochs_run;

    const double current = monitor_loss(*model, prob, frozen);
    est.final_loss = current;
    if (best - current < opts.convergence_rel_tol * std::max(best, 1e-12)) {
      if (++stale >= opts.convergence_patience) break;
    } else {
      stale = 0;
    }
    best = std::min(best, current);
  }
  est.epochs_run = epochs_run;
  return model;
}

std::shared_ptr<TreeCounterfactual> fit_stage2_trees(const Stage2Problem& prob,
                                                     const DmlivOptions& opts,
                                                     DmlivEstimate& est) {
  const long n = prob.data.rows();
  const int dc = prob.data.context_dim();
  const int mc = std::max(1, opts.mc_samples);

  // Frozen draws make the boosting objective a fixed least-squares problem.
  Rng draw_rng(derive_seed(opts.seed, {fnv1a64("stage2.trees.draws")}));
  Eigen::MatrixXd expanded(n * mc, dc + 1);
  {
    const long chunk = 4096;
    for (long start = 0; start < n; start += chunk) {
      const long m = std::min(chunk, n - start);
      for (int k = 0; k < prob.partition.k; ++k) {
        std::vector<long> block;
        for (long i = start; i < start + m; ++i)
          if (prob.fold_of[static_cast<std::size_t>(i)] == k) block.push_back(i);
        if (block.empty()) continue;
        Eigen::MatrixXd x = rows_of(prob.xz, block);
        Eigen::MatrixXd draws = prob.nuisances[static_cast<std::size_t>(k)]
                                    .density->sample_matrix(x, mc, draw_rng);
        for (std::size_t b = 0; b < block.size(); ++b) {
          const long i = block[b];
          for (int j = 0; j < mc; ++j) {
            expanded.row(i * mc + j).head(dc) = prob.data.context.row(i);
            expanded(i * mc + j, dc) = draws(static_cast<long>(b), j);
          }
        }
      }
    }
  }

  TreeConfig tcfg;
  tcfg.n_trees = opts.h_config.n_trees;
  tcfg.min_leaf = opts.h_config.min_leaf;
  tcfg.max_depth = opts.h_config.max_depth;
  tcfg.shrinkage = opts.h_config.shrinkage;

  BinnedFeatures bins(expanded, tcfg.n_bins);
  auto model = std::make_shared<TreeCounterfactual>();
  model->model().begin(prob.targets.mean(), tcfg.shrinkage);

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = expanded;
  Eigen::VectorXd row_pred = Eigen::VectorXd::Constant(n * mc, prob.targets.mean());
  Eigen::VectorXd row_targets(n * mc);
  std::vector<long> rows(static_cast<std::size_t>(n * mc));

  for (int round = 0; round < tcfg.n_trees; ++round) {
    // Functional gradient: every Monte Carlo row of observation i carries
    // the group residual target_i - g_i.
    double loss = 0.0;
    for (long i = 0; i < n; ++i) {
      const double g = row_pred.segment(i * mc, mc).mean();
      const double resid = prob.targets(i) - g;
      loss += resid * resid;
      for (int j = 0; j < mc; ++j) row_targets(i * mc + j) = resid;
    }
    loss /= static_cast<double>(n);
    est.training_trace.push_back({round, 0, loss});
    est.final_loss = loss;

    std::iota(rows.begin(), rows.end(), 0L);
    RegressionTree tree = grow_tree(bins, row_targets, rows, tcfg);
    for (long r = 0; r < n * mc; ++r)
      row_pred(r) += tcfg.shrinkage * tree.predict_row(xr.row(r).data());
    model->model().append(std::move(tree));
  }
  est.epochs_run = tcfg.n_trees;
  return model;
}

DmlivEstimate fit_two_stage(const ObservationSet& data, const DmlivOptions& opts,
                            bool cross_fit, bool with_s) {
  check_preconditions(data, opts, cross_fit);
  const long n = data.rows();
  const Eigen::MatrixXd xz = concat_cz(data);

  DmlivEstimate est;
  if (cross_fit) {
    est.partition =
        make_partition(n, opts.folds, derive_seed(opts.seed, {fnv1a64("partition")}));
  } else {
    est.partition.k = 1;
    est.partition.folds.resize(1);
    est.partition.folds[0].resize(static_cast<std::size_t>(n));
    std::iota(est.partition.folds[0].begin(), est.partition.folds[0].end(), 0L);
  }

  const auto t0 = std::chrono::steady_clock::now();
  if (cross_fit) {
    for (int k = 0; k < est.partition.k; ++k) {
      const std::vector<long> train_idx = est.partition.complement(k);
      est.nuisances.push_back(
          fit_nuisances(data, xz, train_idx, with_s, opts,
                        derive_seed(opts.seed, {fnv1a64("stage1"),
                                                static_cast<std::uint64_t>(k)})));
    }
  } else {
    est.nuisances.push_back(fit_nuisances(data, xz, est.partition.folds[0], with_s,
                                          opts, derive_seed(opts.seed, {fnv1a64("stage1")})));
  }
  est.stage1_seconds = seconds_since(t0);

  std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < est.partition.k; ++k)
    for (long i : est.partition.folds[static_cast<std::size_t>(k)])
      fold_of[static_cast<std::size_t>(i)] = k;

  // Stage-2 targets: cached s-hat predictions fold by fold, or raw outcomes.
  Eigen::VectorXd targets(n);
  if (with_s) {
    for (int k = 0; k < est.partition.k; ++k) {
      const auto& fold = est.partition.folds[static_cast<std::size_t>(k)];
      const Eigen::VectorXd pred =
          est.nuisances[static_cast<std::size_t>(k)].s_hat->predict(rows_of(xz, fold));
      for (std::size_t i = 0; i < fold.size(); ++i)
        targets(fold[i]) = pred(static_cast<long>(i));
    }
  } else {
    targets = data.outcome;
  }

  Stage2Problem prob{data, xz, std::move(targets), std::move(fold_of),
                     est.nuisances, est.partition};
  const auto t1 = std::chrono::steady_clock::now();
  if (opts.h_config.kind == RegressorKind::feedforward) {
    auto model = fit_stage2_neural(prob, opts, est);
    est.neural = model;
    est.model = model;
  } else {
    est.model = fit_stage2_trees(prob, opts, est);
  }
  est.stage2_seconds = seconds_since(t1);
  return est;
}

}  // namespace

DmlivEstimate fit_dmliv(const ObservationSet& data, const DmlivOptions& opts) {
  return fit_two_stage(data, opts, /*cross_fit=*/true, /*with_s=*/true);
}

DmlivEstimate fit_ce_dmliv(const ObservationSet& data, const DmlivOptions& opts) {
  return fit_two_stage(data, opts, /*cross_fit=*/false, /*with_s=*/true);
}

DmlivEstimate fit_naive_twostage(const ObservationSet& data, const DmlivOptions& opts) {
  return fit_two_stage(data, opts, /*cross_fit=*/false, /*with_s=*/false);
}

json DmlivEstimate::to_json(const std::string& config_digest) const {
  json j;
  j["format"] = "dmliv.estimate";
  j["version"] = 1;
  j["model"] = model->to_json();
  json folds = json::array();
  for (const auto& f : partition.folds) folds.push_back(f);
  j["partition"] = {{"k", partition.k}, {"folds", std::move(folds)}};
  j["final_loss"] = final_loss;
  j["epochs_run"] = epochs_run;
  j["config_digest"] = config_digest;
  return j;
}

void export_trace_csv(const DmlivEstimate& est, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "step,fold,loss\n";
  f.precision(17);
  for (const auto& row : est.training_trace)
    f << row.step << "," << row.fold << "," << row.loss << "\n";
}

}  // namespace dmliv
