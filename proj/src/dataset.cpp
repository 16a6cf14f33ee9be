#include "dmliv/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dmliv {

using json = nlohmann::json;

double destandardize(double x, const Scaling& s) {
  if (s.stddev <= 0.0) throw std::invalid_argument("destandardize: std must be > 0");
  return x * s.stddev + s.mean;
}

double psi_t(double t) {
  const double u = t - 5.0;
  const double u2 = u * u;
  return 2.0 * (u2 * u2 / 600.0 + std::exp(-4.0 * u2) + t / 10.0 - 2.0);
}

double true_h0_demand(double t, double s, double price) {
  return 100.0 + (10.0 + price) * s * psi_t(t) - 2.0 * price;
}

double GroundTruth::h0(const Eigen::Ref<const Eigen::VectorXd>& context,
                       double action) const {
  switch (kind) {
    case TruthKind::demand:
      return true_h0_demand(context(0), context(1), action);
    case TruthKind::semisynth: {
      const long d = context.size();
      double ctx = context.sum() / static_cast<double>(d);
      ctx += std::abs(context(0) * context(1));
      ctx -= std::sin(10.0 + context(1) * context(2));
      return 9.0 * action * action - 1.5 * action + ctx;
    }
    default:
      throw std::logic_error("GroundTruth::h0 called without a truth handle");
  }
}

void GroundTruth::h0_poly(const Eigen::Ref<const Eigen::VectorXd>& context,
                          double& c0, double& c1, double& c2) const {
  switch (kind) {
    case TruthKind::demand: {
      const double sp = context(1) * psi_t(context(0));
      c0 = 100.0 + 10.0 * sp;
      c1 = sp - 2.0;
      c2 = 0.0;
      return;
    }
    case TruthKind::semisynth: {
      c0 = h0(context, 0.0);
      c1 = -1.5;
      c2 = 9.0;
      return;
    }
    default:
      throw std::logic_error("GroundTruth::h0_poly without a truth handle");
  }
}

void GroundTruth::action_law(const Eigen::Ref<const Eigen::VectorXd>& context,
                             const Eigen::Ref<const Eigen::VectorXd>& instrument,
                             double& mean, double& sd) const {
  switch (kind) {
    case TruthKind::demand: {
      // p = 25 + (rho_z * z + 3) psi(t) + omega, omega ~ N(0,1)
      mean = 25.0 + (iv_strength * instrument(0) + 3.0) * psi_t(context(0));
      sd = 1.0;
      return;
    }
    case TruthKind::semisynth: {
      // A | C, Z=z ~ N(w_z . C + f(z) sum(w_z), 0.004 (sum w_z)^2 + 1)
      const int z = static_cast<int>(std::lround(instrument(0)));
      if (z < 1 || z > instrument_levels)
        throw std::invalid_argument("semisynth action_law: instrument out of range");
      const Eigen::VectorXd w = weights.col(z - 1);
      const double wsum = w.sum();
      const double fz = static_cast<double>(z) / instrument_levels;
      mean = w.dot(context) + fz * wsum;
      // 0.2^2 * Var(eps) with Var(eps) = 0.1, plus unit delta_A noise.
      sd = std::sqrt(0.04 * 0.1 * wsum * wsum + 1.0);
      return;
    }
    default:
      throw std::logic_error("GroundTruth::action_law without a truth handle");
  }
}

double ObservationSet::h0_std(const Eigen::Ref<const Eigen::VectorXd>& c,
                              double a_std) const {
  const double a_raw = action_scaling ? destandardize(a_std, *action_scaling) : a_std;
  const double r_raw = truth.h0(c, a_raw);
  return outcome_scaling ? (r_raw - outcome_scaling->mean) / outcome_scaling->stddev
                         : r_raw;
}

namespace {

// Mean/std with 1/N normalization; standardizes the column in place.
Scaling standardize_column(Eigen::Ref<Eigen::VectorXd> col) {
  const double mean = col.mean();
  const double var = (col.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (sd <= 0.0) throw std::runtime_error("standardize: column has zero variance");
  col = (col.array() - mean) / sd;
  return Scaling{mean, sd};
}

}  // namespace

ObservationSet generate_demand(const DemandConfig& cfg) {
  if (cfg.n_samples < 1) throw std::invalid_argument("generate_demand: n_samples >= 1");
  if (cfg.rho < 0.0 || cfg.rho > 1.0)
    throw std::invalid_argument("generate_demand: rho must be in [0, 1]");
  if (cfg.iv_strength < 0.0)
    throw std::invalid_argument("generate_demand: iv_strength must be >= 0");

  const long n = cfg.n_samples;
  ObservationSet out;
  out.context.resize(n, 2);
  out.instrument.resize(n, 1);
  out.action.resize(n, 1);
  out.outcome.resize(n);
  out.noise_eps.resize(n);
  out.noise_omega.resize(n);

  Rng rng(cfg.seed);
  const double eps_sd = std::sqrt(1.0 - cfg.rho * cfg.rho);
  for (long i = 0; i < n; ++i) {
    const double s = static_cast<double>(rng.uniform_int(1, 7));
    const double t = rng.uniform(0.0, 10.0);
    const double z = rng.normal();
    const double omega = rng.normal();
    const double eps = cfg.rho * omega + eps_sd * rng.normal();
    const double p = 25.0 + (cfg.iv_strength * z + 3.0) * psi_t(t) + omega;
    out.context(i, 0) = t;
    out.context(i, 1) = s;
    out.instrument(i, 0) = z;
    out.action(i, 0) = p;
    out.outcome(i) = true_h0_demand(t, s, p) + eps;
    out.noise_eps(i) = eps;
    out.noise_omega(i) = omega;
  }

  out.truth.kind = TruthKind::demand;
  out.truth.iv_strength = cfg.iv_strength;

  if (cfg.standardize) {
    out.action_scaling = standardize_column(out.action.col(0));
    out.outcome_scaling = standardize_column(out.outcome);
  }
  return out;
}

ObservationSet generate_semisynth(const SemiSynthConfig& cfg) {
  if (cfg.n_samples < 1) throw std::invalid_argument("generate_semisynth: n_samples >= 1");
  if (cfg.instrument_levels < 2)
    throw std::invalid_argument("generate_semisynth: instrument needs >= 2 levels");
  if (cfg.d_context < 3)
    throw std::invalid_argument("generate_semisynth: d_context must be >= 3");

  const long n = cfg.n_samples;
  const int d = cfg.d_context;
  const int levels = cfg.instrument_levels;

  ObservationSet out;
  out.context.resize(n, d);
  out.instrument.resize(n, 1);
  out.action.resize(n, 1);
  out.outcome.resize(n);
  out.noise_eps.resize(n);
  out.noise_omega.resize(n);

  Rng rng(cfg.seed);
  Eigen::MatrixXd w(d, levels);
  for (int z = 0; z < levels; ++z)
    for (int i = 0; i < d; ++i) w(i, z) = rng.uniform(-1.0, 1.0);

  const double eps_sd = std::sqrt(0.1);
  for (long i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) out.context(i, j) = rng.uniform(-1.0, 1.0);
    const int z = rng.uniform_int(1, levels);
    const double eps = eps_sd * rng.normal();
    const double delta_a = rng.normal();
    const double delta_r = rng.normal();
    const Eigen::VectorXd wz = w.col(z - 1);
    const double fz = static_cast<double>(z) / levels;
    double a = 0.0;
    for (int j = 0; j < d; ++j)
      a += wz(j) * (out.context(i, j) + 0.2 * eps + fz);
    a += delta_a;

    double ctx = out.context.row(i).sum() / static_cast<double>(d);
    ctx += std::abs(out.context(i, 0) * out.context(i, 1));
    ctx -= std::sin(10.0 + out.context(i, 1) * out.context(i, 2));
    const double r = 9.0 * a * a - 1.5 * a + ctx + 2.0 * eps + delta_r;

    out.instrument(i, 0) = z;
    out.action(i, 0) = a;
    out.outcome(i) = r;
    out.noise_eps(i) = eps;
    out.noise_omega(i) = delta_a;
  }

  out.truth.kind = TruthKind::semisynth;
  out.truth.weights = w;
  out.truth.instrument_levels = levels;
  return out;
}

namespace {

json scaling_to_json(const std::optional<Scaling>& s) {
  if (!s) return nullptr;
  return json{{"mean", s->mean}, {"std", s->stddev}};
}

std::optional<Scaling> scaling_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return Scaling{j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

void write_observations_csv(const ObservationSet& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << std::setprecision(17);

  const int dc = data.context_dim(), dz = data.instrument_dim(), da = data.action_dim();
  for (int j = 0; j < dc; ++j) f << "c_" << j << ",";
  for (int j = 0; j < dz; ++j) f << "z_" << j << ",";
  for (int j = 0; j < da; ++j) f << "a_" << j << ",";
  f << "r\n";
  for (long i = 0; i < data.rows(); ++i) {
    for (int j = 0; j < dc; ++j) f << data.context(i, j) << ",";
    for (int j = 0; j < dz; ++j) f << data.instrument(i, j) << ",";
    for (int j = 0; j < da; ++j) f << data.action(i, j) << ",";
    f << data.outcome(i) << "\n";
  }

  json meta;
  meta["columns"] = {{"context", dc}, {"instrument", dz}, {"action", da}};
  meta["action_scaling"] = scaling_to_json(data.action_scaling);
  meta["outcome_scaling"] = scaling_to_json(data.outcome_scaling);
  json truth;
  switch (data.truth.kind) {
    case TruthKind::demand:
      truth["kind"] = "demand";
      truth["iv_strength"] = data.truth.iv_strength;
      break;
    case TruthKind::semisynth: {
      truth["kind"] = "semisynth";
      truth["instrument_levels"] = data.truth.instrument_levels;
      std::vector<std::vector<double>> w;
      for (long r = 0; r < data.truth.weights.rows(); ++r) {
        std::vector<double> row(data.truth.weights.cols());
        for (long c = 0; c < data.truth.weights.cols(); ++c)
          row[static_cast<std::size_t>(c)] = data.truth.weights(r, c);
        w.push_back(std::move(row));
      }
      truth["weights"] = w;
      break;
    }
    default:
      truth["kind"] = "none";
  }
  meta["truth"] = truth;
  std::ofstream mf(path + ".json");
  mf << meta.dump(2) << "\n";
}

ObservationSet read_observations_csv(const std::string& path) {
  std::ifstream mf(path + ".json");
  if (!mf) throw std::runtime_error("missing sidecar " + path + ".json");
  json meta = json::parse(mf);
  const int dc = meta.at("columns").at("context").get<int>();
  const int dz = meta.at("columns").at("instrument").get<int>();
  const int da = meta.at("columns").at("action").get<int>();

  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv " + path);

  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != dc + dz + da + 1)
      throw std::runtime_error("bad column count in " + path);
    rows.push_back(std::move(row));
  }

  const long n = static_cast<long>(rows.size());
  ObservationSet out;
  out.context.resize(n, dc);
  out.instrument.resize(n, dz);
  out.action.resize(n, da);
  out.outcome.resize(n);
  for (long i = 0; i < n; ++i) {
    int k = 0;
    for (int j = 0; j < dc; ++j) out.context(i, j) = rows[i][k++];
    for (int j = 0; j < dz; ++j) out.instrument(i, j) = rows[i][k++];
    for (int j = 0; j < da; ++j) out.action(i, j) = rows[i][k++];
    out.outcome(i) = rows[i][k];
  }
  out.action_scaling = scaling_from_json(meta.at("action_scaling"));
  out.outcome_scaling = scaling_from_json(meta.at("outcome_scaling"));

  const json& truth = meta.at("truth");
  const std::string kind = truth.at("kind").get<std::string>();
  if (kind == "demand") {
    out.truth.kind = TruthKind::demand;
    out.truth.iv_strength = truth.at("iv_strength").get<double>();
  } else if (kind == "semisynth") {
    out.truth.kind = TruthKind::semisynth;
    out.truth.instrument_levels = truth.at("instrument_levels").get<int>();
    const auto w = truth.at("weights").get<std::vector<std::vector<double>>>();
    out.truth.weights.resize(static_cast<long>(w.size()),
                             static_cast<long>(w.empty() ? 0 : w[0].size()));
    for (std::size_t r = 0; r < w.size(); ++r)
      for (std::size_t c = 0; c < w[r].size(); ++c)
        out.truth.weights(static_cast<long>(r), static_cast<long>(c)) = w[r][c];
  }
  return out;
}

}  // namespace dmliv
