#include "dmliv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dmliv/policy.hpp"
#include "dmliv/rng.hpp"

namespace dmliv {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::dmliv: return "dmliv";
    case Method::ce_dmliv: return "ce_dmliv";
    case Method::naive: return "naive";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "dmliv") return Method::dmliv;
  if (s == "ce_dmliv") return Method::ce_dmliv;
  if (s == "naive") return Method::naive;
  throw std::invalid_argument("unknown method: " + s);
}

namespace {

std::string kind_name(RegressorKind k) {
  return k == RegressorKind::feedforward ? "feedforward" : "boosted_trees";
}

RegressorKind kind_from_string(const std::string& s) {
  if (s == "feedforward") return RegressorKind::feedforward;
  if (s == "boosted_trees") return RegressorKind::boosted_trees;
  throw std::invalid_argument("unknown estimator kind: " + s);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Integer lists accept both comma values and a:b half-open ranges.
std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) {
    const std::string p = trim(part);
    if (p.empty()) continue;
    const auto colon = p.find(':');
    if (colon != std::string::npos) {
      const int a = std::stoi(p.substr(0, colon));
      const int b = std::stoi(p.substr(colon + 1));
      for (int v = a; v < b; ++v) out.push_back(v);
    } else {
      out.push_back(std::stoi(p));
    }
  }
  return out;
}

std::vector<long> parse_long_list(const std::string& s) {
  std::vector<long> out;
  for (int v : parse_int_list(s)) out.push_back(v);
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected boolean, got: " + s);
}

}  // namespace

KeyValues default_config() {
  return {
      {"dataset", "demand"},
      {"methods", "dmliv"},
      {"estimator", "feedforward"},
      {"sample_sizes", "5000"},
      {"rho", "0.9"},
      {"iv_strength", "1.0"},
      {"folds", "10"},
      {"seeds", "0:10"},
      {"root_seed", "20240901"},
      {"mc_samples", "32"},
      {"action_grid", "1024"},
      {"mse_eval_n", "10000"},
      {"policy_eval_n", "4096"},
      {"ood_shift", "1.0"},
      {"net.widths", "128,64,32"},
      {"net.lr", "0.001"},
      {"net.weight_decay", "0.001"},
      {"net.dropout", "auto"},
      {"net.batch", "128"},
      {"stage1.epochs", "60"},
      {"mdn.components", "10"},
      {"mdn.std_floor", "0.001"},
      {"stage2.batch", "128"},
      {"stage2.max_epochs", "auto"},
      {"stage2.rel_tol", "1e-5"},
      {"stage2.patience", "5"},
      {"trees.n", "500"},
      {"trees.min_leaf_nuisance", "100"},
      {"trees.min_leaf_h", "10"},
      {"trees.depth", "3"},
      {"trees.shrinkage", "0.1"},
      {"naive.reg_factor", "1.0"},
      {"semisynth.d_context", "10"},
      {"semisynth.levels", "5"},
      {"allow_weak_iv", "false"},
      {"jobs", "1"},
      {"output_dir", "out"},
  };
}

KeyValues load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  KeyValues cfg = default_config();
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!cfg.count(key))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unknown key " + key);
    cfg[key] = value;
  }
  return cfg;
}

void apply_overrides(KeyValues& cfg, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must be key=value: " + kv);
    const std::string key = trim(kv.substr(0, eq));
    if (!cfg.count(key)) throw std::invalid_argument("unknown config key: " + key);
    cfg[key] = trim(kv.substr(eq + 1));
  }
}

std::string config_digest(const KeyValues& cfg) {
  std::string canon;
  for (const auto& [k, v] : cfg) {  // std::map iterates sorted
    canon += k;
    canon += '=';
    canon += v;
    canon += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon)));
  return std::string(buf);
}

void write_config_lock(const KeyValues& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "# resolved configuration (digest " << config_digest(cfg) << ")\n";
  for (const auto& [k, v] : cfg) f << k << " = " << v << "\n";
}

ExperimentConfig resolve_config(const KeyValues& kv) {
  ExperimentConfig c;
  c.resolved = kv;
  c.digest = config_digest(kv);

  c.dataset = kv.at("dataset");
  if (c.dataset != "demand" && c.dataset != "semisynth")
    throw std::invalid_argument("dataset must be demand or semisynth");
  c.methods.clear();
  for (const auto& m : split(kv.at("methods"), ','))
    if (!trim(m).empty()) c.methods.push_back(method_from_string(trim(m)));
  if (c.methods.empty()) throw std::invalid_argument("methods must be non-empty");
  c.estimator = kind_from_string(kv.at("estimator"));
  c.sample_sizes = parse_long_list(kv.at("sample_sizes"));
  if (c.sample_sizes.empty()) throw std::invalid_argument("sample_sizes must be non-empty");
  c.rho = std::stod(kv.at("rho"));
  c.iv_strength = std::stod(kv.at("iv_strength"));
  c.folds = std::stoi(kv.at("folds"));
  if (c.folds < 2) throw std::invalid_argument("folds must be >= 2");
  c.seeds = parse_int_list(kv.at("seeds"));
  if (c.seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  c.root_seed = std::stoull(kv.at("root_seed"));
  c.mc_samples = std::stoi(kv.at("mc_samples"));
  c.action_grid = std::stoi(kv.at("action_grid"));
  c.mse_eval_n = std::stol(kv.at("mse_eval_n"));
  c.policy_eval_n = std::stol(kv.at("policy_eval_n"));
  c.ood_shift = std::stod(kv.at("ood_shift"));

  c.net_widths.clear();
  for (int w : parse_int_list(kv.at("net.widths"))) c.net_widths.push_back(w);
  c.net_lr = std::stod(kv.at("net.lr"));
  c.net_weight_decay = std::stod(kv.at("net.weight_decay"));
  if (kv.at("net.dropout") != "auto") c.net_dropout = std::stod(kv.at("net.dropout"));
  c.net_batch = std::stoi(kv.at("net.batch"));
  c.stage1_epochs = std::stoi(kv.at("stage1.epochs"));
  c.mdn_components = std::stoi(kv.at("mdn.components"));
  c.mdn_std_floor = std::stod(kv.at("mdn.std_floor"));
  c.stage2_batch = std::stoi(kv.at("stage2.batch"));
  if (kv.at("stage2.max_epochs") != "auto")
    c.stage2_max_epochs = std::stoi(kv.at("stage2.max_epochs"));
  c.stage2_rel_tol = std::stod(kv.at("stage2.rel_tol"));
  c.stage2_patience = std::stoi(kv.at("stage2.patience"));
  c.trees_n = std::stoi(kv.at("trees.n"));
  c.trees_min_leaf_nuisance = std::stoi(kv.at("trees.min_leaf_nuisance"));
  c.trees_min_leaf_h = std::stoi(kv.at("trees.min_leaf_h"));
  c.trees_depth = std::stoi(kv.at("trees.depth"));
  c.trees_shrinkage = std::stod(kv.at("trees.shrinkage"));
  c.naive_reg_factor = std::stod(kv.at("naive.reg_factor"));
  c.allow_weak_iv = parse_bool(kv.at("allow_weak_iv"));
  c.jobs = std::stoi(kv.at("jobs"));
  c.output_dir = kv.at("output_dir");
  return c;
}

double ExperimentConfig::dropout_for(long n) const {
  if (net_dropout) return *net_dropout;
  return 1000.0 / (5000.0 + static_cast<double>(n));
}

int ExperimentConfig::stage2_epochs_for(long n) const {
  if (stage2_max_epochs) return *stage2_max_epochs;
  // Roughly constant step budget across N.
  const long epochs = 400000 / std::max<long>(1, n);
  return static_cast<int>(std::clamp<long>(epochs, 40, 200));
}

DmlivOptions ExperimentConfig::estimator_options(long n, std::uint64_t cell_seed,
                                                 Method method) const {
  DmlivOptions o;
  o.folds = folds;
  o.mc_samples = mc_samples;
  o.batch_size = stage2_batch;
  o.max_epochs = stage2_epochs_for(n);
  o.convergence_rel_tol = stage2_rel_tol;
  o.convergence_patience = stage2_patience;
  o.seed = derive_seed(cell_seed, {fnv1a64("fit")});
  o.allow_weak_iv = allow_weak_iv;

  const double dropout = dropout_for(n);
  RegressorConfig net;
  net.kind = estimator;
  net.layer_widths = net_widths;
  net.learning_rate = net_lr;
  net.weight_decay = net_weight_decay;
  net.dropout_rate = dropout;
  net.epochs = stage1_epochs;
  net.batch_size = net_batch;
  net.n_trees = trees_n;
  net.min_leaf = trees_min_leaf_nuisance;
  net.max_depth = trees_depth;
  net.shrinkage = trees_shrinkage;
  o.s_config = net;

  o.h_config = net;
  o.h_config.min_leaf = trees_min_leaf_h;

  o.density_config.hidden = net_widths;
  o.density_config.n_components = mdn_components;
  o.density_config.std_floor = mdn_std_floor;
  o.density_config.learning_rate = net_lr;
  o.density_config.weight_decay =
      net_weight_decay * (method == Method::naive ? naive_reg_factor : 1.0);
  o.density_config.dropout = dropout;
  o.density_config.epochs = stage1_epochs;
  o.density_config.batch_size = net_batch;
  return o;
}

std::string ReportRow::cell_key() const {
  std::ostringstream ss;
  ss << method << "|" << estimator << "|" << n << "|" << rho << "|" << iv_strength
     << "|" << seed;
  return ss.str();
}

double counterfactual_mse(const CounterfactualFn& model, const ObservationSet& train,
                          long n_eval, std::uint64_t seed) {
  if (!train.truth.valid())
    throw std::invalid_argument("counterfactual_mse: missing truth handle");
  const int dc = train.context_dim();
  const long chunk = 4096;
  Eigen::MatrixXd ca(chunk, dc + 1);
  Eigen::VectorXd target(chunk);
  double acc = 0.0;
  long done = 0;
  const Scaling a_sc = train.action_scaling.value_or(Scaling{});
  const Scaling r_sc = train.outcome_scaling.value_or(Scaling{});
  while (done < n_eval) {
    const long m = std::min(chunk, n_eval - done);
    for (long i = 0; i < m; ++i) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(done + i)}));
      Eigen::VectorXd c(dc), z(1);
      if (train.truth.kind == TruthKind::demand) {
        c(0) = rng.uniform(0.0, 10.0);
        c(1) = static_cast<double>(rng.uniform_int(1, 7));
        z(0) = rng.normal();
      } else {
        for (int j = 0; j < dc; ++j) c(j) = rng.uniform(-1.0, 1.0);
        z(0) = static_cast<double>(rng.uniform_int(1, train.truth.instrument_levels));
      }
      double mu, sd;
      train.truth.action_law(c, z, mu, sd);
      const double a_raw = mu + sd * rng.normal();
      ca.row(i).head(dc) = c.transpose();
      ca(i, dc) = (a_raw - a_sc.mean) / a_sc.stddev;
      target(i) = (train.truth.h0(c, a_raw) - r_sc.mean) / r_sc.stddev;
    }
    const Eigen::VectorXd pred = model.values(ca.topRows(m));
    acc += (pred - target.head(m)).array().square().sum();
    done += m;
  }
  return acc / static_cast<double>(n_eval);
}

namespace {

ObservationSet generate_for(const ExperimentConfig& cfg, long n, std::uint64_t seed) {
  if (cfg.dataset == "demand") {
    DemandConfig d;
    d.n_samples = n;
    d.rho = cfg.rho;
    d.iv_strength = cfg.iv_strength;
    d.seed = seed;
    d.standardize = true;
    return generate_demand(d);
  }
  SemiSynthConfig s;
  s.n_samples = n;
  s.d_context = std::stoi(cfg.resolved.at("semisynth.d_context"));
  s.instrument_levels = std::stoi(cfg.resolved.at("semisynth.levels"));
  s.seed = seed;
  return generate_semisynth(s);
}

}  // namespace

ReportRow run_cell(const ExperimentConfig& cfg, Method method, long n,
                   int seed_index, DmlivEstimate* out_estimate) {
  ReportRow row;
  row.method = to_string(method);
  row.estimator = kind_name(cfg.estimator);
  row.n = n;
  row.rho = cfg.rho;
  row.iv_strength = cfg.iv_strength;
  row.seed = seed_index;
  row.config_digest = cfg.digest;
  row.lib_version = kLibraryVersion;

  const auto t0 = std::chrono::steady_clock::now();
  try {
    const std::uint64_t cell_seed = derive_seed(
        cfg.root_seed,
        {fnv1a64(row.method), fnv1a64(row.estimator), static_cast<std::uint64_t>(n),
         std::bit_cast<std::uint64_t>(cfg.rho),
         std::bit_cast<std::uint64_t>(cfg.iv_strength),
         static_cast<std::uint64_t>(seed_index)});
    const ObservationSet data =
        generate_for(cfg, n, derive_seed(cell_seed, {fnv1a64("data")}));
    const DmlivOptions opts = cfg.estimator_options(n, cell_seed, method);

    DmlivEstimate est;
    switch (method) {
      case Method::dmliv: est = fit_dmliv(data, opts); break;
      case Method::ce_dmliv: est = fit_ce_dmliv(data, opts); break;
      case Method::naive: est = fit_naive_twostage(data, opts); break;
    }

    row.mse_h = counterfactual_mse(*est.model, data, cfg.mse_eval_n,
                                   derive_seed(cell_seed, {fnv1a64("mse")}));
    const Policy policy = make_policy(est.model, data, cfg.action_grid,
                                      derive_seed(cell_seed, {fnv1a64("policy")}));
    const PolicyEvaluation in_dist = evaluate_policy(
        policy, data, cfg.policy_eval_n, 0.0, derive_seed(cell_seed, {fnv1a64("ev0")}));
    const PolicyEvaluation ood =
        evaluate_policy(policy, data, cfg.policy_eval_n, cfg.ood_shift,
                        derive_seed(cell_seed, {fnv1a64("ev1")}));
    row.reward_in_dist = in_dist.value;
    row.reward_ood = ood.value;
    row.subopt = in_dist.suboptimality;
    if (out_estimate) *out_estimate = std::move(est);
  } catch (const std::exception& e) {
    row.status = "error";
    row.error = e.what();
  }
  row.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

constexpr const char* kReportHeader =
    "method,estimator,n,rho,iv_strength,seed,mse_h,reward_in_dist,reward_ood,"
    "subopt,wall_clock_s,config_digest,lib_version,status,error";

std::string report_row_csv(const ReportRow& r) {
  std::ostringstream ss;
  ss.precision(17);
  ss << r.method << "," << r.estimator << "," << r.n << "," << r.rho << ","
     << r.iv_strength << "," << r.seed << "," << r.mse_h << "," << r.reward_in_dist
     << "," << r.reward_ood << "," << r.subopt << "," << r.wall_clock_s << ","
     << r.config_digest << "," << r.lib_version << "," << r.status << ","
     << csv_escape(r.error);
  return ss.str();
}

ReportRow report_row_from_fields(const std::vector<std::string>& f) {
  if (f.size() != 15) throw std::runtime_error("report row: wrong field count");
  ReportRow r;
  r.method = f[0];
  r.estimator = f[1];
  r.n = std::stol(f[2]);
  r.rho = std::stod(f[3]);
  r.iv_strength = std::stod(f[4]);
  r.seed = std::stoi(f[5]);
  r.mse_h = std::stod(f[6]);
  r.reward_in_dist = std::stod(f[7]);
  r.reward_ood = std::stod(f[8]);
  r.subopt = std::stod(f[9]);
  r.wall_clock_s = std::stod(f[10]);
  r.config_digest = f[11];
  r.lib_version = f[12];
  r.status = f[13];
  r.error = f[14];
  return r;
}

}  // namespace

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) return {};
  std::vector<ReportRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    rows.push_back(report_row_from_fields(csv_parse_line(line)));
  }
  return rows;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << kReportHeader << "\n";
  for (const auto& r : rows) f << report_row_csv(r) << "\n";
}

std::vector<ReportRow> run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  write_config_lock(cfg.resolved, cfg.output_dir + "/config.lock");
  const std::string report_path = cfg.output_dir + "/report.csv";

  std::vector<ReportRow> rows;
  std::set<std::string> done;
  if (fs::exists(report_path)) {
    rows = read_report_csv(report_path);
    for (const auto& r : rows) {
      if (r.config_digest != cfg.digest)
        throw std::runtime_error(
            report_path + " holds rows for digest " + r.config_digest +
            ", current config is " + cfg.digest + "; refusing to merge");
      done.insert(r.cell_key());
    }
  }

  struct Cell {
    Method method;
    long n;
    int seed_index;
  };
  std::vector<Cell> pending;
  for (Method m : cfg.methods)
    for (long n : cfg.sample_sizes)
      for (int s : cfg.seeds) {
        ReportRow probe;
        probe.method = to_string(m);
        probe.estimator = kind_name(cfg.estimator);
        probe.n = n;
        probe.rho = cfg.rho;
        probe.iv_strength = cfg.iv_strength;
        probe.seed = s;
        if (!done.count(probe.cell_key())) pending.push_back({m, n, s});
      }

  std::ofstream out(report_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + report_path);
  if (rows.empty()) {
    out << kReportHeader << "\n";
    out.flush();
  }

  std::mutex write_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const Cell& cell = pending[i];
      ReportRow row = run_cell(cfg, cell.method, cell.n, cell.seed_index);
      std::lock_guard<std::mutex> lock(write_mutex);
      out << report_row_csv(row) << "\n";
      out.flush();
      rows.push_back(std::move(row));
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1 || pending.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double idx = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

std::string group_value(const ReportRow& r, const std::string& key) {
  if (key == "method") return r.method;
  if (key == "estimator") return r.estimator;
  if (key == "n") return std::to_string(r.n);
  if (key == "rho") {
    std::ostringstream ss;
    ss << r.rho;
    return ss.str();
  }
  if (key == "iv_strength") {
    std::ostringstream ss;
    ss << r.iv_strength;
    return ss.str();
  }
  throw std::invalid_argument("unknown group key: " + key);
}

double metric_value(const ReportRow& r, const std::string& metric) {
  if (metric == "mse_h") return r.mse_h;
  if (metric == "reward_in_dist") return r.reward_in_dist;
  if (metric == "reward_ood") return r.reward_ood;
  if (metric == "subopt") return r.subopt;
  throw std::invalid_argument("unknown metric: " + metric);
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows,
                                  const std::vector<std::string>& group_keys) {
  if (rows.empty()) throw std::invalid_argument("summarize: empty report");
  static const char* kMetrics[4] = {"mse_h", "reward_in_dist", "reward_ood", "subopt"};

  std::map<std::string, std::vector<const ReportRow*>> groups;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    std::string label;
    for (const auto& k : group_keys) {
      if (!label.empty()) label += ",";
      label += k + "=" + group_value(r, k);
    }
    groups[label].push_back(&r);
  }

  std::vector<SummaryRow> out;
  for (const auto& [label, members] : groups) {
    for (const char* metric : kMetrics) {
      std::vector<double> v;
      v.reserve(members.size());
      for (const ReportRow* r : members) v.push_back(metric_value(*r, metric));
      SummaryRow s;
      s.group = label;
      s.metric = metric;
      s.count = static_cast<long>(v.size());
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      s.mean = mean;
      s.stddev = std::sqrt(var);
      s.median = quantile_type7(v, 0.5);
      s.q25 = quantile_type7(v, 0.25);
      s.q75 = quantile_type7(v, 0.75);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "group,metric,count,mean,std,median,q25,q75\n";
  f.precision(17);
  for (const auto& s : rows)
    f << csv_escape(s.group) << "," << s.metric << "," << s.count << "," << s.mean
      << "," << s.stddev << "," << s.median << "," << s.q25 << "," << s.q75 << "\n";
}

json plot_data(const std::vector<ReportRow>& rows) {
  std::set<long> ns;
  std::set<std::string> methods;
  for (const auto& r : rows)
    if (r.status == "ok") {
      ns.insert(r.n);
      methods.insert(r.method);
    }
  json out;
  out["x"] = std::vector<long>(ns.begin(), ns.end());
  static const char* kMetrics[4] = {"mse_h", "reward_in_dist", "reward_ood", "subopt"};
  for (const char* metric : kMetrics) {
    json series;
    for (const auto& m : methods) {
      std::vector<double> means;
      for (long n : ns) {
        double acc = 0;
        long cnt = 0;
        for (const auto& r : rows)
          if (r.status == "ok" && r.method == m && r.n == n) {
            acc += metric_value(r, metric);
            ++cnt;
          }
        means.push_back(cnt ? acc / static_cast<double>(cnt)
                            : std::numeric_limits<double>::quiet_NaN());
      }
      series[m] = means;
    }
    out["series"][metric] = std::move(series);
  }
  return out;
}

json DiagnosticsOutcome::to_json() const {
  auto report_json = [](const OrthogonalityReport& r) {
    json j;
    j["directions"] = r.directions;
    j["estimates"] = std::vector<double>(
        r.derivative_estimates.data(),
        r.derivative_estimates.data() + r.derivative_estimates.size());
    j["standard_errors"] = std::vector<double>(
        r.standard_errors.data(), r.standard_errors.data() + r.standard_errors.size());
    j["modes"] = r.direction_modes;
    j["r_step"] = r.r_step;
    j["score_mean"] = r.score_mean;
    j["score_se"] = r.score_se;
    j["mc_floor"] = r.mc_floor;
    j["validity_gap_t"] = r.validity_gap_t;
    j["validity_ok"] = r.validity_ok;
    j["verdict"] = to_string(r.verdict);
    return j;
  };
  json j;
  j["orthogonal_score"] = report_json(orthogonal_report);
  j["standard_score"] = report_json(standard_report);
  j["relevance"] = {
      {"strong", {{"F", relevance_strong.statistic}, {"weak", relevance_strong.weak}}},
      {"weak", {{"F", relevance_weak.statistic}, {"weak", relevance_weak.weak}}}};
  j["planted_rate"] = {{"slope", planted_rate.slope},
                       {"r_squared", planted_rate.r_squared}};
  j["pass"] = pass;
  return j;
}

DiagnosticsOutcome run_diagnostics(const ExperimentConfig& cfg, long n_ortho) {
  DiagnosticsOutcome out;

  DemandConfig d;
  d.n_samples = n_ortho;
  d.rho = cfg.rho;
  d.iv_strength = cfg.iv_strength;
  d.seed = derive_seed(cfg.root_seed, {fnv1a64("diag.data")});
  d.standardize = true;
  const ObservationSet data = generate_demand(d);

  OrthogonalityConfig oc;
  oc.seed = derive_seed(cfg.root_seed, {fnv1a64("diag.ortho")});
  oc.threads = std::max(1, cfg.jobs);
  out.orthogonal_report = check_orthogonality(ScoreKind::orthogonal, data, oc);
  out.standard_report = check_orthogonality(ScoreKind::standard, data, oc);

  out.relevance_strong = relevance_check(data);
  DemandConfig weak = d;
  weak.iv_strength = 0.0;
  weak.seed = derive_seed(cfg.root_seed, {fnv1a64("diag.weak")});
  out.relevance_weak = relevance_check(generate_demand(weak));

  std::vector<std::pair<double, double>> planted;
  for (long n : {500L, 1000L, 2000L, 4000L, 8000L, 16000L})
    planted.emplace_back(static_cast<double>(n),
                         2.0 / std::sqrt(static_cast<double>(n)));
  out.planted_rate = fit_rate(planted);

  out.pass = out.orthogonal_report.verdict == OrthoVerdict::orthogonal &&
             out.standard_report.verdict == OrthoVerdict::not_orthogonal &&
             !out.relevance_strong.weak && out.relevance_weak.weak &&
             std::abs(out.planted_rate.slope + 0.5) <= 0.01;
  return out;
}

}  // namespace dmliv
