#include "dmliv/net.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace dmliv {

using json = nlohmann::json;

void AdamW::reset(long n_params) {
  m_ = Eigen::VectorXd::Zero(n_params);
  v_ = Eigen::VectorXd::Zero(n_params);
  t_ = 0;
}

void AdamW::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (m_.size() != params.size()) reset(params.size());
  ++t_;
  m_ = beta1 * m_ + (1.0 - beta1) * grad;
  v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  params.array() -= lr * ((m_.array() / bc1) /
                          ((v_.array() / bc2).sqrt() + eps) +
                          weight_decay * params.array());
}

FeedForwardNet::FeedForwardNet(int input_dim, const std::vector<int>& hidden,
                               int output_dim, std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1)
    throw std::invalid_argument("FeedForwardNet: dimensions must be positive");
  widths_.push_back(input_dim);
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("FeedForwardNet: hidden width must be positive");
    widths_.push_back(h);
  }
  widths_.push_back(output_dim);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int fan_in = widths_[l], fan_out = widths_[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-bound, bound);
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::RowVectorXd::Zero(fan_out));
  }
  in_mean_ = Eigen::RowVectorXd::Zero(input_dim);
  in_inv_sd_ = Eigen::RowVectorXd::Ones(input_dim);
}

long FeedForwardNet::n_params() const {
  long n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    n += weights_[l].size() + biases_[l].size();
  return n;
}

Eigen::VectorXd FeedForwardNet::params() const {
  Eigen::VectorXd theta(n_params());
  long k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    std::copy(w.data(), w.data() + w.size(), theta.data() + k);
    k += w.size();
    std::copy(biases_[l].data(), biases_[l].data() + biases_[l].size(), theta.data() + k);
    k += biases_[l].size();
  }
  return theta;
}

void FeedForwardNet::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != n_params())
    throw std::invalid_argument("set_params: wrong parameter count");
  long k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    std::copy(theta.data() + k, theta.data() + k + w.size(), w.data());
    k += w.size();
    std::copy(theta.data() + k, theta.data() + k + biases_[l].size(), biases_[l].data());
    k += biases_[l].size();
  }
}

void FeedForwardNet::set_input_scaling(const Eigen::VectorXd& mean,
                                       const Eigen::VectorXd& sd) {
  if (mean.size() != input_dim() || sd.size() != input_dim())
    throw std::invalid_argument("set_input_scaling: dimension mismatch");
  in_mean_ = mean.transpose();
  in_inv_sd_ = sd.transpose().array().max(1e-12).inverse();
}

Eigen::MatrixXd FeedForwardNet::forward(
    const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  Eigen::MatrixXd a =
      (X.rowwise() - in_mean_).array().rowwise() * in_inv_sd_.array();
  const std::size_t L = weights_.size();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (a * weights_[l]).rowwise() + biases_[l];
    if (l + 1 < L) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd FeedForwardNet::forward_train(
    const Eigen::Ref<const Eigen::MatrixXd>& X, Workspace& ws, double dropout,
    Rng* rng) const {
  const std::size_t L = weights_.size();
  ws.acts.assign(L + 1, Eigen::MatrixXd());
  ws.masks.clear();
  ws.dropout = dropout;
  const bool use_dropout = dropout > 0.0 && rng != nullptr;
  if (use_dropout) ws.masks.assign(L - 1, Eigen::MatrixXd());

  ws.acts[0] = (X.rowwise() - in_mean_).array().rowwise() * in_inv_sd_.array();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (ws.acts[l] * weights_[l]).rowwise() + biases_[l];
    if (l + 1 < L) {
      z = z.cwiseMax(0.0);
      if (use_dropout) {
        const double keep = 1.0 - dropout;
        Eigen::MatrixXd mask(z.rows(), z.cols());
        for (long i = 0; i < mask.size(); ++i)
          mask.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        z.array() *= mask.array();
        ws.masks[l] = std::move(mask);
      }
    }
    ws.acts[l + 1] = std::move(z);
  }
  return ws.acts[L];
}

void FeedForwardNet::backward(const Workspace& ws,
                              const Eigen::Ref<const Eigen::MatrixXd>& d_out,
                              Eigen::VectorXd& grad) const {
  const std::size_t L = weights_.size();
  grad.resize(n_params());

  // Offsets of each layer's block in the flat gradient.
  std::vector<long> offset(L);
  long k = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offset[l] = k;
    k += weights_[l].size() + biases_[l].size();
  }

  Eigen::MatrixXd delta = d_out;
  for (std::size_t li = L; li-- > 0;) {
    // Post-activation of the layer below feeds this layer.
    const Eigen::MatrixXd& below = ws.acts[li];
    Eigen::Map<Eigen::MatrixXd> dW(grad.data() + offset[li], weights_[li].rows(),
                                   weights_[li].cols());
    Eigen::Map<Eigen::RowVectorXd> db(
        grad.data() + offset[li] + weights_[li].size(), biases_[li].size());
    dW.noalias() = below.transpose() * delta;
    db = delta.colwise().sum();
    if (li == 0) break;
    Eigen::MatrixXd next = delta * weights_[li].transpose();
    // ReLU derivative; post-mask activations are > 0 exactly where the unit
    // was active and kept by dropout.
    next.array() *= (ws.acts[li].array() > 0.0).cast<double>();
    if (!ws.masks.empty() && ws.masks[li - 1].size() > 0)
      next.array() *= ws.masks[li - 1].array();
    delta = std::move(next);
  }
}

std::vector<double> FeedForwardNet::fit(
    const Eigen::Ref<const Eigen::MatrixXd>& X,
    const Eigen::Ref<const Eigen::VectorXd>& y, const FitConfig& cfg) {
  const long n = X.rows();
  if (n != y.size()) throw std::invalid_argument("fit: rows(X) != len(y)");
  if (n < 2) throw std::invalid_argument("fit: need at least 2 rows");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("fit: non-finite values in training data");
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("fit: learning_rate <= 0");

  Eigen::VectorXd mean = X.colwise().mean();
  Eigen::VectorXd sd =
      ((X.rowwise() - mean.transpose()).array().square().colwise().mean())
          .sqrt()
          .transpose();
  set_input_scaling(mean, sd);

  AdamW opt;
  opt.lr = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  Eigen::VectorXd theta = params();
  opt.reset(theta.size());

  Rng rng(cfg.seed);
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  const int bs = std::max(1, std::min<int>(cfg.batch_size, static_cast<int>(n)));

  std::vector<double> epoch_loss;
  Workspace ws;
  Eigen::VectorXd grad;
  Eigen::MatrixXd xb;
  Eigen::VectorXd yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long seen = 0;
    for (long start = 0; start < n; start += bs) {
      const long m = std::min<long>(bs, n - start);
      xb.resize(m, X.cols());
      yb.resize(m);
      for (long i = 0; i < m; ++i) {
        xb.row(i) = X.row(order[static_cast<std::size_t>(start + i)]);
        yb(i) = y(order[static_cast<std::size_t>(start + i)]);
      }
      Eigen::MatrixXd pred = forward_train(xb, ws, cfg.dropout, &rng);
      Eigen::MatrixXd resid = pred.col(0) - yb;
      const double loss = resid.array().square().mean();
      if (!std::isfinite(loss)) throw std::runtime_error("fit: loss diverged");
      loss_sum += loss * static_cast<double>(m);
      seen += m;
      Eigen::MatrixXd d_out = 2.0 / static_cast<double>(m) * resid;
      backward(ws, d_out, grad);
      opt.step(theta, grad);
      set_params(theta);
    }
    epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  return epoch_loss;
}

json FeedForwardNet::to_json() const {
  json j;
  j["format"] = "dmliv.feedforward";
  j["version"] = 1;
  j["widths"] = widths_;
  std::vector<double> theta(static_cast<std::size_t>(n_params()));
  Eigen::VectorXd p = params();
  std::copy(p.data(), p.data() + p.size(), theta.begin());
  j["params"] = theta;
  j["in_mean"] = std::vector<double>(in_mean_.data(), in_mean_.data() + in_mean_.size());
  j["in_inv_sd"] =
      std::vector<double>(in_inv_sd_.data(), in_inv_sd_.data() + in_inv_sd_.size());
  return j;
}

FeedForwardNet FeedForwardNet::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.feedforward")
    throw std::runtime_error("FeedForwardNet::from_json: wrong format tag");
  const auto widths = j.at("widths").get<std::vector<int>>();
  if (widths.size() < 2) throw std::runtime_error("from_json: bad widths");
  std::vector<int> hidden(widths.begin() + 1, widths.end() - 1);
  FeedForwardNet net(widths.front(), hidden, widths.back(), 0);
  const auto theta = j.at("params").get<std::vector<double>>();
  net.set_params(Eigen::Map<const Eigen::VectorXd>(theta.data(),
                                                   static_cast<long>(theta.size())));
  const auto mean = j.at("in_mean").get<std::vector<double>>();
  const auto inv_sd = j.at("in_inv_sd").get<std::vector<double>>();
  net.in_mean_ = Eigen::Map<const Eigen::RowVectorXd>(mean.data(),
                                                      static_cast<long>(mean.size()));
  net.in_inv_sd_ = Eigen::Map<const Eigen::RowVectorXd>(
      inv_sd.data(), static_cast<long>(inv_sd.size()));
  return net;
}

}  // namespace dmliv
