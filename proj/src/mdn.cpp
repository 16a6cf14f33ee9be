#include "dmliv/mdn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dmliv {

using json = nlohmann::json;

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

MixtureDensity::MixtureDensity(int input_dim, const MdnConfig& cfg)
    : net_(input_dim, cfg.hidden, 3 * cfg.n_components, cfg.seed),
      k_(cfg.n_components),
      std_floor_(cfg.std_floor) {
  if (cfg.n_components < 1)
    throw std::invalid_argument("MixtureDensity: need at least one component");
  if (cfg.std_floor <= 0.0)
    throw std::invalid_argument("MixtureDensity: std_floor must be > 0");
}

void MixtureDensity::decode(const Eigen::MatrixXd& raw, Eigen::MatrixXd& w,
                            Eigen::MatrixXd& mu, Eigen::MatrixXd& sd) const {
  const long n = raw.rows();
  w.resize(n, k_);
  mu = raw.middleCols(k_, k_);
  sd.resize(n, k_);
  for (long i = 0; i < n; ++i) {
    const double mx = raw.row(i).head(k_).maxCoeff();
    double norm = 0.0;
    for (int j = 0; j < k_; ++j) {
      w(i, j) = std::exp(raw(i, j) - mx);
      norm += w(i, j);
    }
    w.row(i) /= norm;
    for (int j = 0; j < k_; ++j)
      sd(i, j) = std_floor_ + softplus(raw(i, 2 * k_ + j));
  }
}

void MixtureDensity::mixture_params(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    Eigen::VectorXd& weights,
                                    Eigen::VectorXd& means,
                                    Eigen::VectorXd& sds) const {
  Eigen::MatrixXd raw = net_.forward(x.transpose());
  Eigen::MatrixXd w, mu, sd;
  decode(raw, w, mu, sd);
  weights = w.row(0);
  means = mu.row(0);
  sds = sd.row(0);
}

double MixtureDensity::log_density(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   double a) const {
  Eigen::VectorXd w, mu, sd;
  mixture_params(x, w, mu, sd);
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd t(k_);
  for (int j = 0; j < k_; ++j) {
    const double zj = (a - mu(j)) / sd(j);
    t(j) = std::log(w(j)) - 0.5 * zj * zj - std::log(sd(j)) - 0.5 * kLogTwoPi;
    best = std::max(best, t(j));
  }
  double acc = 0.0;
  for (int j = 0; j < k_; ++j) acc += std::exp(t(j) - best);
  return best + std::log(acc);
}

double MixtureDensity::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd w, mu, sd;
  mixture_params(x, w, mu, sd);
  return w.dot(mu);
}

double MixtureDensity::sample(const Eigen::Ref<const Eigen::VectorXd>& x,
                              Rng& rng) const {
  Eigen::VectorXd w, mu, sd;
  mixture_params(x, w, mu, sd);
  const double u = rng.uniform();
  double acc = 0.0;
  int pick = k_ - 1;
  for (int j = 0; j < k_; ++j) {
    acc += w(j);
    if (u < acc) {
      pick = j;
      break;
    }
  }
  return mu(pick) + sd(pick) * rng.normal();
}

Eigen::VectorXd MixtureDensity::sample_many(
    const Eigen::Ref<const Eigen::VectorXd>& x, long count, Rng& rng) const {
  if (count < 1) throw std::invalid_argument("sample_many: count must be >= 1");
  Eigen::VectorXd w, mu, sd;
  mixture_params(x, w, mu, sd);
  Eigen::VectorXd out(count);
  for (long i = 0; i < count; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = k_ - 1;
    for (int j = 0; j < k_; ++j) {
      acc += w(j);
      if (u < acc) {
        pick = j;
        break;
      }
    }
    out(i) = mu(pick) + sd(pick) * rng.normal();
  }
  return out;
}

void MixtureDensity::sample_rows(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                 Rng& rng, Eigen::Ref<Eigen::VectorXd> out) const {
  Eigen::MatrixXd raw = net_.forward(X);
  Eigen::MatrixXd w, mu, sd;
  decode(raw, w, mu, sd);
  for (long i = 0; i < X.rows(); ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = k_ - 1;
    for (int j = 0; j < k_; ++j) {
      acc += w(i, j);
      if (u < acc) {
        pick = j;
        break;
      }
    }
    out(i) = mu(i, pick) + sd(i, pick) * rng.normal();
  }
}

Eigen::MatrixXd MixtureDensity::sample_matrix(
    const Eigen::Ref<const Eigen::MatrixXd>& X, long count, Rng& rng) const {
  if (count < 1) throw std::invalid_argument("sample_matrix: count must be >= 1");
  Eigen::MatrixXd raw = net_.forward(X);
  Eigen::MatrixXd w, mu, sd;
  decode(raw, w, mu, sd);
  Eigen::MatrixXd out(X.rows(), count);
  for (long i = 0; i < X.rows(); ++i) {
    for (long c = 0; c < count; ++c) {
      const double u = rng.uniform();
      double acc = 0.0;
      int pick = k_ - 1;
      for (int j = 0; j < k_; ++j) {
        acc += w(i, j);
        if (u < acc) {
          pick = j;
          break;
        }
      }
      out(i, c) = mu(i, pick) + sd(i, pick) * rng.normal();
    }
  }
  return out;
}

std::vector<double> MixtureDensity::fit(
    const Eigen::Ref<const Eigen::MatrixXd>& X,
    const Eigen::Ref<const Eigen::VectorXd>& actions, const MdnConfig& cfg) {
  const long n = X.rows();
  if (n != actions.size()) throw std::invalid_argument("MixtureDensity::fit: size mismatch");
  if (n < k_) throw std::invalid_argument("MixtureDensity::fit: fewer rows than components");
  if (!X.allFinite() || !actions.allFinite())
    throw std::invalid_argument("MixtureDensity::fit: non-finite inputs");

  Eigen::VectorXd mean_in = X.colwise().mean();
  Eigen::VectorXd sd_in =
      ((X.rowwise() - mean_in.transpose()).array().square().colwise().mean())
          .sqrt()
          .transpose();
  net_.set_input_scaling(mean_in, sd_in);

  const double a_var = (actions.array() - actions.mean()).square().mean();

  AdamW opt;
  opt.lr = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  Eigen::VectorXd theta = net_.params();
  opt.reset(theta.size());

  Rng rng(cfg.seed);
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  const int bs = std::max(1, std::min<int>(cfg.batch_size, static_cast<int>(n)));

  std::vector<double> epoch_nll;
  FeedForwardNet::Workspace ws;
  Eigen::VectorXd grad;
  Eigen::MatrixXd xb;
  Eigen::VectorXd ab;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double nll_sum = 0.0;
    long seen = 0;
    for (long start = 0; start < n; start += bs) {
      const long m = std::min<long>(bs, n - start);
      xb.resize(m, X.cols());
      ab.resize(m);
      for (long i = 0; i < m; ++i) {
        xb.row(i) = X.row(order[static_cast<std::size_t>(start + i)]);
        ab(i) = actions(order[static_cast<std::size_t>(start + i)]);
      }
      Eigen::MatrixXd raw = net_.forward_train(xb, ws, cfg.dropout, &rng);
      Eigen::MatrixXd w, mu, sd;
      decode(raw, w, mu, sd);

      // NLL and its gradient wrt the raw head outputs.
      Eigen::MatrixXd d_raw(m, 3 * k_);
      double nll = 0.0;
      Eigen::VectorXd t(k_), gamma(k_);
      for (long i = 0; i < m; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k_; ++j) {
          const double zj = (ab(i) - mu(i, j)) / sd(i, j);
          t(j) = std::log(w(i, j)) - 0.5 * zj * zj - std::log(sd(i, j)) -
                 0.5 * kLogTwoPi;
          best = std::max(best, t(j));
        }
        double norm = 0.0;
        for (int j = 0; j < k_; ++j) {
          gamma(j) = std::exp(t(j) - best);
          norm += gamma(j);
        }
        gamma /= norm;
        nll += -(best + std::log(norm));
        for (int j = 0; j < k_; ++j) {
          const double diff = ab(i) - mu(i, j);
          const double s = sd(i, j);
          d_raw(i, j) = w(i, j) - gamma(j);                       // logits
          d_raw(i, k_ + j) = -gamma(j) * diff / (s * s);          // means
          const double d_sd = -gamma(j) * (diff * diff / (s * s * s) - 1.0 / s);
          d_raw(i, 2 * k_ + j) = d_sd * sigmoid(raw(i, 2 * k_ + j));  // scales
        }
      }
      if (!std::isfinite(nll)) throw std::runtime_error("MixtureDensity::fit: NLL diverged");
      nll_sum += nll;
      seen += m;
      d_raw /= static_cast<double>(m);
      net_.backward(ws, d_raw, grad);
      opt.step(theta, grad);
      net_.set_params(theta);
    }
    epoch_nll.push_back(nll_sum / static_cast<double>(seen));
  }

  // Near-deterministic actions push every scale to the floor; flag it.
  degenerate_warning_ = a_var < std_floor_ * std_floor_;
  return epoch_nll;
}

double MixtureDensity::mean_nll(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                const Eigen::Ref<const Eigen::VectorXd>& actions) const {
  double acc = 0.0;
  for (long i = 0; i < X.rows(); ++i)
    acc -= log_density(X.row(i).transpose(), actions(i));
  return acc / static_cast<double>(X.rows());
}

json MixtureDensity::to_json() const {
  json j;
  j["format"] = "dmliv.mdn";
  j["version"] = 1;
  j["n_components"] = k_;
  j["std_floor"] = std_floor_;
  j["degenerate_warning"] = degenerate_warning_;
  j["net"] = net_.to_json();
  return j;
}

MixtureDensity MixtureDensity::from_json(const json& j) {
  if (j.at("format").get<std::string>() != "dmliv.mdn")
    throw std::runtime_error("MixtureDensity::from_json: wrong format tag");
  MixtureDensity m;
  m.k_ = j.at("n_components").get<int>();
  m.std_floor_ = j.at("std_floor").get<double>();
  m.degenerate_warning_ = j.at("degenerate_warning").get<bool>();
  m.net_ = FeedForwardNet::from_json(j.at("net"));
  return m;
}

}  // namespace dmliv
