// Supervised regressors behind one fit/predict contract.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "json.hpp"
#include "dmliv/net.hpp"
#include "dmliv/trees.hpp"

namespace dmliv {

enum class RegressorKind { feedforward, boosted_trees };

struct RegressorConfig {
  RegressorKind kind = RegressorKind::feedforward;

  // Feedforward.
  std::vector<int> layer_widths{128, 64, 32};
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout_rate = 0.0;
  int epochs = 100;
  int batch_size = 128;

  // Boosted trees.
  int n_trees = 500;
  int min_leaf = 100;
  int max_depth = 3;
  double shrinkage = 0.1;

  std::uint64_t seed = 1;
};

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& X) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class FeedForwardRegressor : public Regressor {
 public:
  FeedForwardRegressor(FeedForwardNet net) : net_(std::move(net)) {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& X) const override {
    return net_.forward(X).col(0);
  }
  nlohmann::json to_json() const override;
  const FeedForwardNet& net() const { return net_; }

 private:
  FeedForwardNet net_;
};

class BoostedTreesRegressor : public Regressor {
 public:
  BoostedTreesRegressor(GradientBoostedTrees model) : model_(std::move(model)) {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& X) const override {
    return model_.predict(X);
  }
  nlohmann::json to_json() const override;
  const GradientBoostedTrees& model() const { return model_; }

 private:
  GradientBoostedTrees model_;
};

// Fits per cfg.kind; training loss is least squares in both cases.
std::unique_ptr<Regressor> fit_regressor(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const RegressorConfig& cfg);

std::unique_ptr<Regressor> regressor_from_json(const nlohmann::json& j);

}  // namespace dmliv
