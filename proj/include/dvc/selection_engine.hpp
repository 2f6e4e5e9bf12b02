#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dvc/dataset.hpp"
#include "dvc/grad_cache.hpp"
#include "dvc/lsh_index.hpp"
#include "dvc/mlp.hpp"
#include "dvc/online_stats.hpp"
#include "dvc/source_bandit.hpp"
#include "dvc/value_metrics.hpp"
#include "dvc/weight_learner.hpp"
#include "json.hpp"

namespace dvc {

struct SelectionConfig {
  std::size_t budget = 0;          // B; 0 means use budget_fraction
  double budget_fraction = 0.2;
  std::size_t batch_size = 32;     // b
  std::size_t weight_update_every = 5;  // F
  double diversity_threshold = 0.95;
  double diversity_relaxation = 0.02;
  bool source_quota = true;        // ceil(b/2) per source and round
  std::size_t candidates_per_source = 2;  // multiples of b
  std::size_t shortlist = 3;              // multiples of b

  double lr = 0.05;
  std::size_t update_batch = 32;
  std::size_t warm_epochs = 3;     // passes over the cold-start selection

  bool learn_weights = true;
  AblationMask mask{};
  WeightLearnerConfig learner{};
  TrainOptions probe{5, 0.05, 32};

  ValuationOptions valuation{};
  OnlineStatsConfig stats{};
  std::size_t lsh_tables = 16;
  std::size_t lsh_bits = 0;        // 0 scales with the budget
  std::size_t lsh_bucket_cap = 0;   // 0 reads whole buckets
  std::size_t cache_capacity = 4096;
  double exploration = 1.0;

  std::uint64_t seed = 0;
  bool record_timings = false;
  std::string audit_path;          // JSONL stream of every valuation when set

  /// Resolves B against a pool and validates everything; throws a
  /// configuration error before any state is touched.
  std::size_t resolve_budget(const SourcePool& pool) const;
};

struct ScoredCandidate {
  std::size_t id = 0;
  std::size_t source = 0;
  double value = 0.0;
  const Vector* x = nullptr;
};

/// Greedy scan over `candidates` (sorted by value, descending): accept while
/// the cosine similarity to every accepted candidate is <= threshold and the
/// source quota allows it. Short batches relax the threshold by `relaxation`
/// (capped at 1) and rescan. Returns indices into `candidates`.
std::vector<std::size_t> diversified_selection(const std::vector<ScoredCandidate>& candidates,
                                               std::size_t batch, double threshold,
                                               double relaxation = 0.02,
                                               std::size_t source_quota = 0);

/// ceil(B / (2K)) per source, K = 1 gets ceil(B / 2).
std::size_t cold_start_quota(std::size_t budget, std::size_t sources);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<double> source_probabilities;
  std::vector<std::size_t> sources_drawn;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  double mean_value = 0.0;
  double max_value = 0.0;
  double min_value = 0.0;
  double selected_mean_value = 0.0;
};

struct SelectionReport {
  std::size_t budget = 0;
  std::vector<std::size_t> selected;          // pool ids in selection order
  std::vector<std::size_t> selected_sources;
  std::size_t cold_start_count = 0;
  std::vector<std::size_t> shortfalls;        // per source, cold start
  std::vector<RoundRecord> rounds;
  std::vector<WeightObservation> weight_trajectory;
  MetricWeights final_weights;
  std::vector<UcbArm> arms;
  std::size_t reward_updates = 0;
  CacheStats cache{};
  std::size_t stats_warnings = 0;
  std::size_t bandit_warnings = 0;
  bool exhausted = false;
  double select_seconds = 0.0;
  bool timings_recorded = false;

  nlohmann::json to_json() const;
};

/// Adaptive selection: cold start, then bandit-guided rounds valued by DVC
/// until the budget is spent or the sources run dry. `model` is warm-updated
/// in place.
SelectionReport run_selection(const SourcePool& pool, MlpModel& model, const SelectionConfig& config);

}  // namespace dvc
