// Small dense feed-forward networks with explicit backpropagation.
//
// The forward pass is batched (rows = samples) on Eigen matrices. Hidden
// layers are FC + ReLU with optional inverted dropout during training;
// the output layer is linear. Parameters are exposed as one flat vector so
// gradient checks and the stage-2 optimizer can treat the model as theta.
// Weights start uniform in +-sqrt(6 / (fan_in + fan_out)), biases at zero.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "dmliv/rng.hpp"

namespace dmliv {

// Adam with decoupled weight decay: p -= lr * (mhat/(sqrt(vhat)+eps) + wd * p).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void reset(long n_params);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct FitConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout = 0.0;
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 1;
};

class FeedForwardNet {
 public:
  FeedForwardNet() = default;
  FeedForwardNet(int input_dim, const std::vector<int>& hidden, int output_dim,
                 std::uint64_t seed);

  int input_dim() const { return widths_.empty() ? 0 : widths_.front(); }
  int output_dim() const { return widths_.empty() ? 0 : widths_.back(); }

  long n_params() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& theta);

  // Inputs are shifted/scaled by these before the first layer. Identity by
  // default; fit() sets them from the training sample.
  void set_input_scaling(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd);

  // Deterministic forward pass (no dropout).
  Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::MatrixXd>& X) const;

  struct Workspace {
    std::vector<Eigen::MatrixXd> acts;   // acts[0] = scaled input
    std::vector<Eigen::MatrixXd> masks;  // per hidden layer; empty when p = 0
    double dropout = 0.0;
  };

  // Forward pass that caches activations; applies dropout when p > 0 and a
  // stream is given. Returns the output batch.
  Eigen::MatrixXd forward_train(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                Workspace& ws, double dropout = 0.0,
                                Rng* rng = nullptr) const;

  // Accumulates dLoss/dtheta into grad (resized and zeroed here) given
  // dLoss/doutput for the cached batch.
  void backward(const Workspace& ws, const Eigen::Ref<const Eigen::MatrixXd>& d_out,
                Eigen::VectorXd& grad) const;

  // Supervised least-squares fit; returns mean training loss per epoch.
  std::vector<double> fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                          const Eigen::Ref<const Eigen::VectorXd>& y,
                          const FitConfig& cfg);

  nlohmann::json to_json() const;
  static FeedForwardNet from_json(const nlohmann::json& j);

 private:
  std::vector<int> widths_;
  std::vector<Eigen::MatrixXd> weights_;      // widths_[l] x widths_[l+1]
  std::vector<Eigen::RowVectorXd> biases_;
  Eigen::RowVectorXd in_mean_;
  Eigen::RowVectorXd in_inv_sd_;
};

}  // namespace dmliv
