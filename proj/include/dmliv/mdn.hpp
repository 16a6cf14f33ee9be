// Mixture-of-Gaussians conditional density model for P(A | C, Z).
//
// A feed-forward trunk maps (c, z) to 3K outputs interpreted as component
// logits, means and raw scales. Weights come from a softmax, scales from
// std_floor + softplus(raw), so weights always sum to one and scales stay
// above the floor. Fitting minimizes the exact negative log-likelihood with
// log-sum-exp stabilization.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "dmliv/net.hpp"
#include "dmliv/rng.hpp"

namespace dmliv {

struct MdnConfig {
  std::vector<int> hidden{128, 64, 32};
  int n_components = 10;
  double std_floor = 1e-3;  // in units of the (standardized) action
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout = 0.0;
  int epochs = 80;
  int batch_size = 128;
  std::uint64_t seed = 1;
};

class MixtureDensity {
 public:
  MixtureDensity() = default;
  MixtureDensity(int input_dim, const MdnConfig& cfg);

  int n_components() const { return k_; }
  double std_floor() const { return std_floor_; }
  bool degenerate_warning() const { return degenerate_warning_; }

  // Mixture parameters at one input; weights sum to 1, sds >= std_floor.
  void mixture_params(const Eigen::Ref<const Eigen::VectorXd>& x,
                      Eigen::VectorXd& weights, Eigen::VectorXd& means,
                      Eigen::VectorXd& sds) const;

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x, double a) const;
  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  double sample(const Eigen::Ref<const Eigen::VectorXd>& x, Rng& rng) const;
  // count i.i.d. draws at a single conditioning point.
  Eigen::VectorXd sample_many(const Eigen::Ref<const Eigen::VectorXd>& x,
                              long count, Rng& rng) const;
  // One draw per row of X, filling out (used by the Monte Carlo g-hat).
  void sample_rows(const Eigen::Ref<const Eigen::MatrixXd>& X, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> out) const;
  // count draws per row of X; one trunk forward for the whole batch.
  Eigen::MatrixXd sample_matrix(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                long count, Rng& rng) const;

  // Minimizes NLL over (X, a); returns mean NLL per epoch.
  std::vector<double> fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                          const Eigen::Ref<const Eigen::VectorXd>& actions,
                          const MdnConfig& cfg);

  double mean_nll(const Eigen::Ref<const Eigen::MatrixXd>& X,
                  const Eigen::Ref<const Eigen::VectorXd>& actions) const;

  nlohmann::json to_json() const;
  static MixtureDensity from_json(const nlohmann::json& j);

 private:
  // Raw head outputs -> (weights, means, sds), batched.
  void decode(const Eigen::MatrixXd& raw, Eigen::MatrixXd& w, Eigen::MatrixXd& mu,
              Eigen::MatrixXd& sd) const;

  FeedForwardNet net_;
  int k_ = 0;
  double std_floor_ = 1e-3;
  bool degenerate_warning_ = false;
};

}  // namespace dmliv
