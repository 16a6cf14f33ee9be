// Parameterized counterfactual outcome models h(c, a).

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>

#include "json.hpp"
#include "dmliv/net.hpp"
#include "dmliv/regressor.hpp"
#include "dmliv/trees.hpp"

namespace dmliv {

// Read-only evaluation interface shared by the differentiable model and the
// boosted-tree variant; policies only need this much.
class CounterfactualFn {
 public:
  virtual ~CounterfactualFn() = default;
  virtual double value(const Eigen::Ref<const Eigen::VectorXd>& context,
                       double action) const = 0;
  // One value per row; inputs already concatenated as (context, action).
  virtual Eigen::VectorXd values(const Eigen::Ref<const Eigen::MatrixXd>& ca) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

// Differentiable h_theta on a feed-forward net over (context, action).
class CounterfactualModel : public CounterfactualFn {
 public:
  CounterfactualModel() = default;
  CounterfactualModel(int context_dim, const RegressorConfig& cfg);
  explicit CounterfactualModel(FeedForwardNet net) : net_(std::move(net)) {}

  double value(const Eigen::Ref<const Eigen::VectorXd>& context,
               double action) const override;
  Eigen::VectorXd values(const Eigen::Ref<const Eigen::MatrixXd>& ca) const override;

  // d value / d theta at one point, by backprop through the deterministic
  // forward pass.
  Eigen::VectorXd grad_theta(const Eigen::Ref<const Eigen::VectorXd>& context,
                             double action) const;

  long n_params() const { return net_.n_params(); }
  Eigen::VectorXd params() const { return net_.params(); }
  void set_params(const Eigen::VectorXd& theta) { net_.set_params(theta); }

  FeedForwardNet& net() { return net_; }
  const FeedForwardNet& net() const { return net_; }

  nlohmann::json to_json() const override;
  static CounterfactualModel from_json(const nlohmann::json& j);

 private:
  FeedForwardNet net_;
};

// Boosted-tree h over (context, action); fit by the tree stage-2 routine.
class TreeCounterfactual : public CounterfactualFn {
 public:
  TreeCounterfactual() = default;
  explicit TreeCounterfactual(GradientBoostedTrees model) : model_(std::move(model)) {}

  double value(const Eigen::Ref<const Eigen::VectorXd>& context,
               double action) const override;
  Eigen::VectorXd values(const Eigen::Ref<const Eigen::MatrixXd>& ca) const override;

  const GradientBoostedTrees& model() const { return model_; }
  GradientBoostedTrees& model() { return model_; }

  nlohmann::json to_json() const override;
  static TreeCounterfactual from_json(const nlohmann::json& j);

 private:
  GradientBoostedTrees model_;
};

std::shared_ptr<CounterfactualFn> counterfactual_from_json(const nlohmann::json& j);

// Fresh differentiable model; stage 2 requires a gradient in theta, so only
// the feedforward kind is accepted here (trees go through the dedicated
// boosting path in the estimator).
CounterfactualModel new_counterfactual_model(int context_dim, const RegressorConfig& cfg);

}  // namespace dmliv
