#include "dvc/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "dvc/error.hpp"

namespace dvc {

std::vector<std::size_t> baseline_random(const SourcePool& pool, std::size_t budget, std::uint64_t seed) {
  if (budget > pool.size()) throw Error(ErrorKind::Config, "budget exceeds the pool size");
  std::vector<std::size_t> ids = pool.all_ids();
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < budget; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(budget);
  return ids;
}

std::vector<std::size_t> cold_start_sample(const SourcePool& pool, std::size_t budget, std::mt19937_64& rng) {
  const std::size_t quota = cold_start_quota(budget, pool.sources.size());
  std::vector<std::size_t> out;
  for (const auto& src : pool.sources) {
    std::vector<std::size_t> ids = src.ids;
    const std::size_t take = std::min(quota, ids.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
      std::swap(ids[i], ids[pick(rng)]);
      out.push_back(ids[i]);
    }
  }
  return out;
}

std::vector<std::size_t> baseline_uncertainty(const SourcePool& pool, MlpModel& model,
                                              const SelectionConfig& config) {
  const std::size_t budget = config.resolve_budget(pool);
  std::mt19937_64 rng(config.seed);
  const LossKind loss = LossKind::cross_entropy();

  auto update = [&](const std::vector<std::size_t>& ids, std::size_t epochs) {
    std::vector<std::size_t> order = ids;
    const std::size_t step = std::max<std::size_t>(config.update_batch, 1);
    for (std::size_t e = 0; e < epochs; ++e) {
      if (epochs > 1) std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t from = 0; from < order.size(); from += step) {
        const std::size_t to = std::min(order.size(), from + step);
        const std::span<const std::size_t> chunk(order.data() + from, to - from);
        std::vector<Target> ys;
        for (std::size_t id : chunk) ys.emplace_back(pool.samples[id].label);
        sgd_step(model, pool.features(chunk), ys, config.lr, loss);
      }
    }
  };

  std::vector<std::size_t> selected = cold_start_sample(pool, budget, rng);
  std::vector<bool> taken(pool.size(), false);
  for (std::size_t id : selected) taken[id] = true;
  update(selected, config.warm_epochs);

  std::vector<std::size_t> remaining;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!taken[i]) remaining.push_back(i);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> tie_key(pool.size());
  for (auto& k : tie_key) k = unit(rng);

  while (selected.size() < budget && !remaining.empty()) {
    const Matrix probs = predict(model, pool.features(remaining));
    std::vector<std::pair<double, std::size_t>> ranked(remaining.size());
    for (std::size_t j = 0; j < remaining.size(); ++j) {
      ranked[j] = {shannon_entropy(probs.col(static_cast<Eigen::Index>(j))), j};
    }
    const std::size_t take = std::min({config.batch_size, budget - selected.size(), remaining.size()});
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return tie_key[remaining[a.second]] < tie_key[remaining[b.second]];
                      });
    std::vector<std::size_t> batch;
    std::vector<bool> drop(remaining.size(), false);
    for (std::size_t j = 0; j < take; ++j) {
      batch.push_back(remaining[ranked[j].second]);
      drop[ranked[j].second] = true;
    }
    std::vector<std::size_t> next;
    next.reserve(remaining.size() - take);
    for (std::size_t j = 0; j < remaining.size(); ++j) {
      if (!drop[j]) next.push_back(remaining[j]);
    }
    remaining = std::move(next);
    selected.insert(selected.end(), batch.begin(), batch.end());
    update(batch, 1);
  }
  return selected;
}

}  // namespace dvc
