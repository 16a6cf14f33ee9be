#include "dmliv/regressor.hpp"

#include <stdexcept>

namespace dmliv {

using json = nlohmann::json;

json FeedForwardRegressor::to_json() const {
  json j;
  j["format"] = "dmliv.regressor";
  j["version"] = 1;
  j["kind"] = "feedforward";
  j["model"] = net_.to_json();
  return j;
}

json BoostedTreesRegressor::to_json() const {
  json j;
  j["format"] = "dmliv.regressor";
  j["version"] = 1;
  j["kind"] = "boosted_trees";
  j["model"] = model_.to_json();
  return j;
}

std::unique_ptr<Regressor> fit_regressor(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const RegressorConfig& cfg) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_regressor: size mismatch");
  if (X.rows() < 2) throw std::invalid_argument("fit_regressor: need >= 2 rows");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("fit_regressor: non-finite training data");

  switch (cfg.kind) {
    case RegressorKind::feedforward: {
      FeedForwardNet net(static_cast<int>(X.cols()), cfg.layer_widths, 1, cfg.seed);
      FitConfig fit_cfg;
      fit_cfg.learning_rate = cfg.learning_rate;
      fit_cfg.weight_decay = cfg.weight_decay;
      fit_cfg.dropout = cfg.dropout_rate;
      fit_cfg.epochs = cfg.epochs;
      fit_cfg.batch_size = cfg.batch_size;
      fit_cfg.seed = derive_seed(cfg.seed, {fnv1a64("regressor.fit")});
      net.fit(X, y, fit_cfg);
      return std::make_unique<FeedForwardRegressor>(std::move(net));
    }
    case RegressorKind::boosted_trees: {
      if (cfg.n_trees < 1)
        throw std::invalid_argument("fit_regressor: n_trees must be >= 1");
      TreeConfig tree_cfg;
      tree_cfg.n_trees = cfg.n_trees;
      tree_cfg.min_leaf = cfg.min_leaf;
      tree_cfg.max_depth = cfg.max_depth;
      tree_cfg.shrinkage = cfg.shrinkage;
      GradientBoostedTrees model;
      model.fit(X, y, tree_cfg);
      return std::make_unique<BoostedTreesRegressor>(std::move(model));
    }
  }
  throw std::logic_error("fit_regressor: unknown kind");
}

std::unique_ptr<Regressor> regressor_from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.regressor")
    throw std::runtime_error("regressor_from_json: wrong format tag");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "feedforward")
    return std::make_unique<FeedForwardRegressor>(FeedForwardNet::from_json(j.at("model")));
  if (kind == "boosted_trees")
    return std::make_unique<BoostedTreesRegressor>(
        GradientBoostedTrees::from_json(j.at("model")));
  throw std::runtime_error("regressor_from_json: unknown kind " + kind);
}

}  // namespace dmliv
