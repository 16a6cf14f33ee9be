#include "dmliv/counterfactual.hpp"

#include <stdexcept>

namespace dmliv {

using json = nlohmann::json;

CounterfactualModel::CounterfactualModel(int context_dim, const RegressorConfig& cfg)
    : net_(context_dim + 1, cfg.layer_widths, 1, cfg.seed) {
  if (cfg.kind != RegressorKind::feedforward)
    throw std::invalid_argument(
        "CounterfactualModel: gradient-based stage 2 needs a feedforward model; "
        "use the tree stage-2 path for boosted trees");
}

double CounterfactualModel::value(const Eigen::Ref<const Eigen::VectorXd>& context,
                                  double action) const {
  Eigen::RowVectorXd row(context.size() + 1);
  row.head(context.size()) = context.transpose();
  row(context.size()) = action;
  return net_.forward(row)(0, 0);
}

Eigen::VectorXd CounterfactualModel::values(
    const Eigen::Ref<const Eigen::MatrixXd>& ca) const {
  return net_.forward(ca).col(0);
}

Eigen::VectorXd CounterfactualModel::grad_theta(
    const Eigen::Ref<const Eigen::VectorXd>& context, double action) const {
  Eigen::MatrixXd row(1, context.size() + 1);
  row.leftCols(context.size()) = context.transpose();
  row(0, context.size()) = action;
  FeedForwardNet::Workspace ws;
  net_.forward_train(row, ws);  // no dropout: deterministic pass
  Eigen::VectorXd grad;
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Ones(1, 1);
  net_.backward(ws, d_out, grad);
  return grad;
}

json CounterfactualModel::to_json() const {
  json j;
  j["format"] = "dmliv.counterfactual";
  j["version"] = 1;
  j["kind"] = "feedforward";
  j["model"] = net_.to_json();
  return j;
}

CounterfactualModel CounterfactualModel::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.counterfactual" ||
      j.at("kind").get<std::string>() != "feedforward")
    throw std::runtime_error("CounterfactualModel::from_json: wrong format tag");
  return CounterfactualModel(FeedForwardNet::from_json(j.at("model")));
}

double TreeCounterfactual::value(const Eigen::Ref<const Eigen::VectorXd>& context,
                                 double action) const {
  Eigen::VectorXd row(context.size() + 1);
  row.head(context.size()) = context;
  row(context.size()) = action;
  return model_.predict_row(row.data());
}

Eigen::VectorXd TreeCounterfactual::values(
    const Eigen::Ref<const Eigen::MatrixXd>& ca) const {
  return model_.predict(ca);
}

json TreeCounterfactual::to_json() const {
  json j;
  j["format"] = "dmliv.counterfactual";
  j["version"] = 1;
  j["kind"] = "boosted_trees";
  j["model"] = model_.to_json();
  return j;
}

TreeCounterfactual TreeCounterfactual::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.counterfactual" ||
      j.at("kind").get<std::string>() != "boosted_trees")
    throw std::runtime_error("TreeCounterfactual::from_json: wrong format tag");
  return TreeCounterfactual(GradientBoostedTrees::from_json(j.at("model")));
}

std::shared_ptr<CounterfactualFn> counterfactual_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "feedforward")
    return std::make_shared<CounterfactualModel>(CounterfactualModel::from_json(j));
  if (kind == "boosted_trees")
    return std::make_shared<TreeCounterfactual>(TreeCounterfactual::from_json(j));
  throw std::runtime_error("counterfactual_from_json: unknown kind " + kind);
}

CounterfactualModel new_counterfactual_model(int context_dim,
                                             const RegressorConfig& cfg) {
  return CounterfactualModel(context_dim, cfg);
}

}  // namespace dmliv
