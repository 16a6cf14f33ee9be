#include "dmliv/trees.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dmliv {

using json = nlohmann::json;

BinnedFeatures::BinnedFeatures(const Eigen::Ref<const Eigen::MatrixXd>& X,
                               int n_bins) {
  if (n_bins < 2 || n_bins > 65535)
    throw std::invalid_argument("BinnedFeatures: n_bins out of range");
  rows_ = X.rows();
  const int nf = static_cast<int>(X.cols());
  cuts_.resize(static_cast<std::size_t>(nf));
  codes_.resize(static_cast<std::size_t>(nf));

  std::vector<double> sorted(static_cast<std::size_t>(rows_));
  for (int f = 0; f < nf; ++f) {
    for (long i = 0; i < rows_; ++i) sorted[static_cast<std::size_t>(i)] = X(i, f);
    std::sort(sorted.begin(), sorted.end());

    // Candidate cuts at evenly spaced quantiles, deduplicated.
    auto& cuts = cuts_[static_cast<std::size_t>(f)];
    for (int b = 1; b < n_bins; ++b) {
      const std::size_t idx = static_cast<std::size_t>(
          static_cast<double>(rows_ - 1) * b / n_bins);
      const double v = sorted[idx];
      if (cuts.empty() || v > cuts.back()) cuts.push_back(v);
    }

    auto& codes = codes_[static_cast<std::size_t>(f)];
    codes.resize(static_cast<std::size_t>(rows_));
    for (long i = 0; i < rows_; ++i) {
      const double v = X(i, f);
      const auto it = std::lower_bound(cuts.begin(), cuts.end(), v);
      codes[static_cast<std::size_t>(i)] =
          static_cast<std::uint16_t>(it - cuts.begin());
    }
  }
}

namespace {

struct PendingNode {
  int node;
  long begin, end;
  int depth;
  double sum;
};

}  // namespace

RegressionTree grow_tree(const BinnedFeatures& bins, const Eigen::VectorXd& targets,
                         std::vector<long>& rows, const TreeConfig& cfg) {
  RegressionTree tree;
  const int nf = bins.n_features();
  const long n = static_cast<long>(rows.size());

  double total = 0.0;
  for (long i = 0; i < n; ++i) total += targets(rows[static_cast<std::size_t>(i)]);

  tree.nodes.push_back(TreeNode{});
  std::vector<PendingNode> stack{{0, 0, n, 0, total}};

  std::vector<double> bin_sum;
  std::vector<long> bin_count;
  std::vector<long> scratch;

  while (!stack.empty()) {
    PendingNode cur = stack.back();
    stack.pop_back();
    const long count = cur.end - cur.begin;
    TreeNode& node = tree.nodes[static_cast<std::size_t>(cur.node)];
    node.value = cur.sum / static_cast<double>(count);

    if (cur.depth >= cfg.max_depth || count < 2 * cfg.min_leaf) continue;

    // Best axis-aligned split by squared-sum gain over bin histograms.
    double best_gain = 0.0;
    int best_f = -1, best_bin = -1;
    const double parent_score = cur.sum * cur.sum / static_cast<double>(count);
    for (int f = 0; f < nf; ++f) {
      const int nb = bins.n_cuts(f) + 1;
      if (nb < 2) continue;
      bin_sum.assign(static_cast<std::size_t>(nb), 0.0);
      bin_count.assign(static_cast<std::size_t>(nb), 0);
      for (long i = cur.begin; i < cur.end; ++i) {
        const long r = rows[static_cast<std::size_t>(i)];
        const int b = bins.code(r, f);
        bin_sum[static_cast<std::size_t>(b)] += targets(r);
        ++bin_count[static_cast<std::size_t>(b)];
      }
      double left_sum = 0.0;
      long left_count = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        left_sum += bin_sum[static_cast<std::size_t>(b)];
        left_count += bin_count[static_cast<std::size_t>(b)];
        const long right_count = count - left_count;
        if (left_count < cfg.min_leaf || right_count < cfg.min_leaf) continue;
        const double right_sum = cur.sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(left_count) +
                            right_sum * right_sum / static_cast<double>(right_count) -
                            parent_score;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_f = f;
          best_bin = b;
        }
      }
    }
    if (best_f < 0) continue;

    // Stable partition of the row range by the winning split.
    scratch.clear();
    long mid = cur.begin;
    double left_sum = 0.0;
    for (long i = cur.begin; i < cur.end; ++i) {
      const long r = rows[static_cast<std::size_t>(i)];
      if (bins.code(r, best_f) <= best_bin) {
        rows[static_cast<std::size_t>(mid++)] = r;
        left_sum += targets(r);
      } else {
        scratch.push_back(r);
      }
    }
    std::copy(scratch.begin(), scratch.end(), rows.begin() + mid);

    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});
    const int right_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});
    TreeNode& parent = tree.nodes[static_cast<std::size_t>(cur.node)];
    parent.feature = best_f;
    parent.threshold = bins.cut_value(best_f, best_bin);
    parent.left = left_id;
    parent.right = right_id;

    stack.push_back({right_id, mid, cur.end, cur.depth + 1, cur.sum - left_sum});
    stack.push_back({left_id, cur.begin, mid, cur.depth + 1, left_sum});
  }
  return tree;
}

std::vector<double> GradientBoostedTrees::fit(
    const Eigen::Ref<const Eigen::MatrixXd>& X,
    const Eigen::Ref<const Eigen::VectorXd>& y, const TreeConfig& cfg) {
  const long n = X.rows();
  if (n != y.size()) throw std::invalid_argument("GradientBoostedTrees::fit: size mismatch");
  if (n < 1) throw std::invalid_argument("GradientBoostedTrees::fit: empty data");
  if (cfg.n_trees < 1) throw std::invalid_argument("GradientBoostedTrees::fit: n_trees >= 1");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("GradientBoostedTrees::fit: non-finite inputs");

  BinnedFeatures bins(X, cfg.n_bins);
  begin(y.mean(), cfg.shrinkage);

  // Row-major copy so per-row prediction can walk contiguous memory.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = X;
  Eigen::VectorXd residual = y.array() - baseline_;
  std::vector<long> rows(static_cast<std::size_t>(n));

  std::vector<double> mse_per_round;
  mse_per_round.reserve(static_cast<std::size_t>(cfg.n_trees));
  for (int m = 0; m < cfg.n_trees; ++m) {
    std::iota(rows.begin(), rows.end(), 0L);
    RegressionTree t = grow_tree(bins, residual, rows, cfg);
    for (long i = 0; i < n; ++i)
      residual(i) -= shrinkage_ * t.predict_row(xr.row(i).data());
    trees_.push_back(std::move(t));
    mse_per_round.push_back(residual.array().square().mean());
  }
  return mse_per_round;
}

Eigen::VectorXd GradientBoostedTrees::predict(
    const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = X;
  Eigen::VectorXd out(X.rows());
  for (long i = 0; i < X.rows(); ++i) out(i) = predict_row(xr.row(i).data());
  return out;
}

double GradientBoostedTrees::predict_row(const double* row) const {
  double acc = baseline_;
  for (const auto& t : trees_) acc += shrinkage_ * t.predict_row(row);
  return acc;
}

json GradientBoostedTrees::to_json() const {
  json j;
  j["format"] = "dmliv.gbt";
  j["version"] = 1;
  j["baseline"] = baseline_;
  j["shrinkage"] = shrinkage_;
  json jt = json::array();
  for (const auto& t : trees_) {
    json jn = json::array();
    for (const auto& n : t.nodes)
      jn.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    jt.push_back(std::move(jn));
  }
  j["trees"] = std::move(jt);
  return j;
}

GradientBoostedTrees GradientBoostedTrees::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.gbt")
    throw std::runtime_error("GradientBoostedTrees::from_json: wrong format tag");
  GradientBoostedTrees g;
  g.baseline_ = j.at("baseline").get<double>();
  g.shrinkage_ = j.at("shrinkage").get<double>();
  for (const auto& jt : j.at("trees")) {
    RegressionTree t;
    for (const auto& jn : jt) {
      TreeNode n;
      n.feature = jn.at(0).get<int>();
      n.threshold = jn.at(1).get<double>();
      n.left = jn.at(2).get<int>();
      n.right = jn.at(3).get<int>();
      n.value = jn.at(4).get<double>();
      t.nodes.push_back(n);
    }
    g.trees_.push_back(std::move(t));
  }
  return g;
}

}  // namespace dmliv
