#include "dmliv/crossfit.hpp"

#include <numeric>
#include <stdexcept>

namespace dmliv {

std::vector<long> FoldPartition::complement(int fold) const {
  std::vector<long> out;
  for (int j = 0; j < k; ++j) {
    if (j == fold) continue;
    out.insert(out.end(), folds[static_cast<std::size_t>(j)].begin(),
               folds[static_cast<std::size_t>(j)].end());
  }
  return out;
}

long FoldPartition::total() const {
  long n = 0;
  for (const auto& f : folds) n += static_cast<long>(f.size());
  return n;
}

FoldPartition make_partition(long n, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_partition: K must be >= 2");
  if (static_cast<long>(k) > n)
    throw std::invalid_argument("make_partition: K must not exceed n");

  std::vector<long> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0L);
  Rng rng(seed);
  rng.shuffle(idx);

  FoldPartition part;
  part.k = k;
  part.folds.resize(static_cast<std::size_t>(k));
  for (long i = 0; i < n; ++i)
    part.folds[static_cast<std::size_t>(i % k)].push_back(idx[static_cast<std::size_t>(i)]);
  return part;
}

double g_hat(const std::function<double(const Eigen::Ref<const Eigen::VectorXd>&,
                                        double)>& h,
             const MixtureDensity& density,
             const Eigen::Ref<const Eigen::VectorXd>& context,
             const Eigen::Ref<const Eigen::VectorXd>& instrument, int mc_samples,
             Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("g_hat: mc_samples must be >= 1");
  Eigen::VectorXd x(context.size() + instrument.size());
  x.head(context.size()) = context;
  x.tail(instrument.size()) = instrument;
  const Eigen::VectorXd draws = density.sample_many(x, mc_samples, rng);
  double acc = 0.0;
  for (long j = 0; j < draws.size(); ++j) acc += h(context, draws(j));
  return acc / static_cast<double>(mc_samples);
}

double g_hat(const CounterfactualFn& model, const MixtureDensity& density,
             const Eigen::Ref<const Eigen::VectorXd>& context,
             const Eigen::Ref<const Eigen::VectorXd>& instrument, int mc_samples,
             Rng& rng) {
  return g_hat(
      [&model](const Eigen::Ref<const Eigen::VectorXd>& c, double a) {
        return model.value(c, a);
      },
      density, context, instrument, mc_samples, rng);
}

}  // namespace dmliv
