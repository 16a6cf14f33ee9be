// Least-squares gradient boosting with depth-limited regression trees.
//
// Features are quantile-binned once per training run; tree growth scans bin
// histograms per node, so a boosting round costs O(rows * features) instead
// of a sort per node. Stored split thresholds are raw feature values, so
// prediction does not need the binning.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "json.hpp"

namespace dmliv {

struct TreeConfig {
  int n_trees = 500;
  int max_depth = 3;
  int min_leaf = 100;
  double shrinkage = 0.1;
  int n_bins = 256;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict_row(const double* row) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const TreeNode& n = nodes[static_cast<std::size_t>(i)];
      i = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

class BinnedFeatures {
 public:
  BinnedFeatures(const Eigen::Ref<const Eigen::MatrixXd>& X, int n_bins);

  long rows() const { return rows_; }
  int n_features() const { return static_cast<int>(cuts_.size()); }
  int n_cuts(int f) const { return static_cast<int>(cuts_[static_cast<std::size_t>(f)].size()); }
  std::uint16_t code(long row, int f) const {
    return codes_[static_cast<std::size_t>(f)][static_cast<std::size_t>(row)];
  }
  // Split "code <= bin" corresponds to raw value <= cut_value(f, bin).
  double cut_value(int f, int bin) const {
    return cuts_[static_cast<std::size_t>(f)][static_cast<std::size_t>(bin)];
  }

 private:
  long rows_ = 0;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::vector<std::uint16_t>> codes_;
};

// Fits one tree to targets over rows[begin..end); reorders that index range.
RegressionTree grow_tree(const BinnedFeatures& bins, const Eigen::VectorXd& targets,
                         std::vector<long>& rows, const TreeConfig& cfg);

class GradientBoostedTrees {
 public:
  // Plain least-squares boosting; returns training MSE after each round.
  std::vector<double> fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                          const Eigen::Ref<const Eigen::VectorXd>& y,
                          const TreeConfig& cfg);

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
  double predict_row(const double* row) const;

  // Assembly interface for externally driven boosting loops.
  void begin(double baseline, double shrinkage) {
    trees_.clear();
    baseline_ = baseline;
    shrinkage_ = shrinkage;
  }
  void append(RegressionTree tree) { trees_.push_back(std::move(tree)); }
  double baseline() const { return baseline_; }
  double shrinkage() const { return shrinkage_; }
  std::size_t n_trees() const { return trees_.size(); }
  const RegressionTree& tree(std::size_t i) const { return trees_[i]; }

  nlohmann::json to_json() const;
  static GradientBoostedTrees from_json(const nlohmann::json& j);

 private:
  double baseline_ = 0.0;
  double shrinkage_ = 0.1;
  std::vector<RegressionTree> trees_;
};

}  // namespace dmliv
