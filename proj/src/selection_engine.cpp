#include "dvc/selection_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_set>

#include "dvc/error.hpp"

namespace dvc {
namespace {

double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return a.dot(b) / (na * nb);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

nlohmann::json weights_json(const MetricWeights& w) {
  return {{"layer", w.layer},
          {"global", w.global},
          {"layer_metric", w.layer_metric},
          {"global_metric", w.global_metric}};
}

// Ids still eligible per source, with O(1) removal.
class AvailableIds {
 public:
  explicit AvailableIds(const SourcePool& pool) : pos_(pool.size()) {
    for (const auto& src : pool.sources) {
      per_source_.push_back(src.ids);
      for (std::size_t i = 0; i < src.ids.size(); ++i) pos_[src.ids[i]] = i;
    }
  }

  std::size_t size(std::size_t s) const { return per_source_[s].size(); }
  bool any() const {
    return std::any_of(per_source_.begin(), per_source_.end(), [](const auto& v) { return !v.empty(); });
  }

  void remove(std::size_t s, std::size_t id) {
    auto& ids = per_source_[s];
    const std::size_t p = pos_[id];
    if (p >= ids.size() || ids[p] != id) return;
    ids[p] = ids.back();
    pos_[ids[p]] = p;
    ids.pop_back();
  }

  // Up to `count` distinct ids by partial Fisher-Yates. Ids rejected by
  // `eligible` are dropped from the source for good.
  template <typename Eligible>
  std::vector<std::size_t> draw(std::size_t s, std::size_t count, std::mt19937_64& rng, Eligible eligible) {
    auto& ids = per_source_[s];
    std::vector<std::size_t> out;
    std::size_t i = 0;
    while (out.size() < count && i < ids.size()) {
      std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
      const std::size_t j = pick(rng);
      std::swap(ids[i], ids[j]);
      pos_[ids[i]] = i;
      pos_[ids[j]] = j;
      if (!eligible(ids[i])) {
        remove(s, ids[i]);
        continue;
      }
      out.push_back(ids[i]);
      ++i;
    }
    return out;
  }

 private:
  std::vector<std::vector<std::size_t>> per_source_;
  std::vector<std::size_t> pos_;
};

WeightLearnerConfig learner_config(const SelectionConfig& cfg) {
  WeightLearnerConfig out = cfg.learner;
  out.update_every = cfg.weight_update_every;
  return out;
}

struct Valued {
  std::size_t id = 0;
  std::size_t source = 0;
  RawMetrics raw;
  double value = 0.0;
};

class Engine {
 public:
  Engine(const SourcePool& pool, MlpModel& model, const SelectionConfig& cfg, std::size_t budget)
      : pool_(pool),
        model_(model),
        cfg_(cfg),
        budget_(budget),
        rng_(cfg.seed),
        cache_(cfg.cache_capacity),
        stats_(model.layer_dims(), cfg.stats),
        normalizer_(model.num_layers()),
        bandit_(pool.sources.size(), cfg.exploration),
        learner_(model.num_layers(), learner_config(cfg), cfg.mask),
        weights_(learner_.current()),
        available_(pool),
        taken_(pool.size(), false) {
    const std::size_t layers = model.num_layers();
    for (std::size_t l = 1; l <= layers; ++l) {
      const std::size_t dim = model.layer_dims()[l];
      LshParams p = LshParams::scaled_for(budget, dim, cfg.lsh_tables, cfg.seed * 1315423911ULL + l);
      if (cfg.lsh_bits > 0) p.bits = cfg.lsh_bits;
      p.bucket_cap = cfg.lsh_bucket_cap;
      indices_.emplace_back(p);
    }
    if (!cfg.audit_path.empty()) {
      audit_.open(cfg.audit_path);
      if (!audit_) throw Error(ErrorKind::Io, "cannot open audit log " + cfg.audit_path);
    }
    report_.budget = budget;
    report_.shortfalls.assign(pool.sources.size(), 0);
  }

  SelectionReport run() {
    const auto start = std::chrono::steady_clock::now();
    cold_start();
    std::size_t round = 0;
    while (report_.selected.size() < budget_) {
      if (!available_.any()) {
        report_.exhausted = true;
        break;
      }
      ++round;
      if (!selection_round(round)) {
        report_.exhausted = true;
        break;
      }
      maybe_update_weights(round);
    }
    report_.final_weights = weights_;
    report_.weight_trajectory = learner_.history();
    report_.arms = bandit_.arms();
    report_.cache = cache_.stats();
    report_.stats_warnings = stats_.warnings();
    report_.bandit_warnings = bandit_.warnings();
    report_.select_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report_.timings_recorded = cfg_.record_timings;
    return std::move(report_);
  }

 private:
  bool eligible(std::size_t id) const { return !taken_[id] && !taken_digests_.contains(pool_.samples[id].digest); }

  Target target(std::size_t id) const { return Target{pool_.samples[id].label}; }

  std::shared_ptr<const SampleEvaluation> evaluate(std::size_t id) {
    const Sample& s = pool_.samples[id];
    return cache_.get_or_compute(model_, s.x, target(id), loss_);
  }

  ValuationContext context() const {
    ValuationContext ctx;
    ctx.model = &model_;
    ctx.stats = &stats_;
    ctx.indices = &indices_;
    ctx.history = &history_;
    ctx.weights = &weights_;
    ctx.total_seen = inserted_;
    ctx.options = cfg_.valuation;
    return ctx;
  }

  void take(std::size_t id) {
    const Sample& s = pool_.samples[id];
    taken_[id] = true;
    taken_digests_.insert(s.digest);
    available_.remove(s.source, id);
    report_.selected.push_back(id);
    report_.selected_sources.push_back(s.source);
  }

  void absorb(std::size_t id, const SampleEvaluation& eval) {
    absorb_stats_only(eval);
    insert_only(id, eval);
  }

  void reward(std::size_t source, double value) {
    bandit_.update_reward(source, value);
    ++report_.reward_updates;
  }

  void audit(std::size_t round, const Valued& v, bool selected) {
    if (!audit_.is_open()) return;
    nlohmann::json line = {{"round", round},
                           {"id", v.id},
                           {"source", v.source},
                           {"value", v.value},
                           {"selected", selected},
                           {"quality", v.raw.quality},
                           {"relevance", v.raw.relevance},
                           {"diversity", v.raw.diversity},
                           {"gradient_impact", v.raw.gradient_impact},
                           {"uncertainty", v.raw.uncertainty},
                           {"stability", v.raw.stability}};
    audit_ << line.dump() << '\n';
  }

  void update_model(const std::vector<std::size_t>& ids, std::size_t epochs) {
    if (ids.empty()) return;
    std::vector<std::size_t> order = ids;
    const std::size_t step = std::max<std::size_t>(cfg_.update_batch, 1);
    for (std::size_t e = 0; e < epochs; ++e) {
      if (epochs > 1) std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t from = 0; from < order.size(); from += step) {
        const std::size_t to = std::min(order.size(), from + step);
        const std::span<const std::size_t> chunk(order.data() + from, to - from);
        std::vector<Target> ys;
        for (std::size_t id : chunk) ys.push_back(target(id));
        sgd_step(model_, pool_.features(chunk), ys, cfg_.lr, loss_);
      }
    }
  }

  void cold_start() {
    const std::size_t k = pool_.sources.size();
    const std::size_t quota = cold_start_quota(budget_, k);
    std::vector<std::size_t> initial;
    for (std::size_t s = 0; s < k; ++s) {
      const auto drawn = available_.draw(s, quota, rng_, [&](std::size_t id) { return eligible(id); });
      report_.shortfalls[s] = quota - drawn.size();
      for (std::size_t id : drawn) {
        if (!eligible(id)) {  // digest duplicate within this source's draw
          ++report_.shortfalls[s];
          available_.remove(s, id);
          continue;
        }
        take(id);
        initial.push_back(id);
      }
    }
    report_.cold_start_count = initial.size();
    update_model(initial, cfg_.warm_epochs);

    // Valued one at a time so that each sample sees the ones before it. The
    // order is shuffled: in source order the early sources would be scored
    // against cold statistics and the bandit would inherit that bias.
    std::vector<std::size_t> order = initial;
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t id : order) {
      const auto eval = evaluate(id);
      const std::uint64_t digest = pool_.samples[id].digest;
      absorb_stats_only(*eval);
      history_.record(digest, model_.version(), eval->trace.loss);
      Valued v{id, pool_.samples[id].source, compute_raw_metrics(context(), *eval, digest), 0.0};
      normalizer_.observe(v.raw);
      v.value = compose_dvc(normalizer_.normalize(v.raw), weights_).dvc;
      insert_only(id, *eval);
      reward(v.source, v.value);
      audit(0, v, true);
    }
  }

  void absorb_stats_only(const SampleEvaluation& eval) { stats_.update(eval.trace, eval.grads); }

  void insert_only(std::size_t id, const SampleEvaluation& eval) {
    for (std::size_t l = 1; l <= model_.num_layers(); ++l) indices_[l - 1].insert(id, eval.trace.activations[l]);
    ++inserted_;
  }

  bool selection_round(std::size_t round) {
    const std::size_t k = pool_.sources.size();
    const std::size_t b = cfg_.batch_size;
    RoundRecord rec;
    rec.round = round;
    rec.source_probabilities = bandit_.source_probabilities();

    std::vector<double> live = rec.source_probabilities;
    for (std::size_t s = 0; s < k; ++s) {
      if (available_.size(s) == 0) live[s] = 0.0;
    }
    if (std::accumulate(live.begin(), live.end(), 0.0) <= 0.0) return false;
    std::discrete_distribution<std::size_t> pick_source(live.begin(), live.end());
    std::map<std::size_t, std::size_t> draws;  // source -> multiplicity
    for (std::size_t i = 0; i < std::min(b, k); ++i) {
      const std::size_t s = pick_source(rng_);
      rec.sources_drawn.push_back(s);
      ++draws[s];
    }

    std::vector<Valued> valued;
    const ValuationContext ctx = context();
    for (const auto& [s, mult] : draws) {
      const auto ids = available_.draw(s, mult * cfg_.candidates_per_source * b, rng_,
                                       [&](std::size_t id) { return eligible(id); });
      for (std::size_t id : ids) {
        const auto eval = evaluate(id);
        const std::uint64_t digest = pool_.samples[id].digest;
        history_.record(digest, model_.version(), eval->trace.loss);
        valued.push_back({id, s, compute_raw_metrics(ctx, *eval, digest), 0.0});
      }
    }
    if (valued.empty()) return available_.any();

    for (const auto& v : valued) normalizer_.observe(v.raw);
    for (auto& v : valued) v.value = compose_dvc(normalizer_.normalize(v.raw), weights_).dvc;
    std::sort(valued.begin(), valued.end(), [](const Valued& a, const Valued& c) {
      return a.value != c.value ? a.value > c.value : a.id < c.id;
    });

    // Digest duplicates inside one round keep their best-ranked copy only.
    std::unordered_set<std::uint64_t> seen;
    std::vector<ScoredCandidate> shortlist;
    std::vector<std::size_t> shortlist_pos;
    for (std::size_t i = 0; i < valued.size() && shortlist.size() < cfg_.shortlist * b; ++i) {
      const Sample& s = pool_.samples[valued[i].id];
      if (!seen.insert(s.digest).second) continue;
      shortlist.push_back({s.id, valued[i].source, valued[i].value, &s.x});
      shortlist_pos.push_back(i);
    }

    const std::size_t remaining = budget_ - report_.selected.size();
    const std::size_t quota = cfg_.source_quota && draws.size() >= 2 ? ceil_div(b, 2) : 0;
    const auto picked = diversified_selection(shortlist, std::min(b, remaining), cfg_.diversity_threshold,
                                              cfg_.diversity_relaxation, quota);

    std::vector<bool> chosen(valued.size(), false);
    std::vector<std::size_t> batch;
    std::vector<std::pair<std::size_t, double>> rewards;
    double chosen_sum = 0.0;
    for (std::size_t p : picked) {
      const Valued& v = valued[shortlist_pos[p]];
      chosen[shortlist_pos[p]] = true;
      take(v.id);
      batch.push_back(v.id);
      rewards.emplace_back(v.source, v.value);
      chosen_sum += v.value;
    }
    for (std::size_t i = 0; i < valued.size(); ++i) audit(round, valued[i], chosen[i]);

    update_model(batch, 1);
    for (std::size_t id : batch) absorb(id, *evaluate(id));
    for (const auto& [s, value] : rewards) reward(s, value);

    rec.candidates = valued.size();
    rec.selected = batch.size();
    rec.max_value = valued.front().value;
    rec.min_value = valued.back().value;
    double total = 0.0;
    for (const auto& v : valued) total += v.value;
    rec.mean_value = total / static_cast<double>(valued.size());
    rec.selected_mean_value = batch.empty() ? 0.0 : chosen_sum / static_cast<double>(batch.size());
    report_.rounds.push_back(std::move(rec));
    return true;
  }

  void maybe_update_weights(std::size_t round) {
    if (!cfg_.learn_weights || pool_.val_y.empty() || !learner_.due(round)) return;
    ProbeConfig probe{model_.layer_dims(), model_.hidden_activation(), cfg_.probe, cfg_.seed + round};
    const auto& ids = report_.selected;
    const double perf = evaluate_performance(pool_.features(ids), pool_.labels(ids), pool_.val_x, pool_.val_y, probe);
    learner_.observe(round, perf, rng_);
    weights_ = learner_.current();
  }

  const SourcePool& pool_;
  MlpModel& model_;
  const SelectionConfig& cfg_;
  std::size_t budget_;
  std::mt19937_64 rng_;
  LossKind loss_ = LossKind::cross_entropy();
  GradCache cache_;
  OnlineStats stats_;
  std::vector<LshIndex> indices_;
  LossHistory history_;
  MetricNormalizer normalizer_;
  SourceBandit bandit_;
  WeightLearner learner_;
  MetricWeights weights_;
  AvailableIds available_;
  std::vector<bool> taken_;
  std::unordered_set<std::uint64_t> taken_digests_;
  std::size_t inserted_ = 0;
  std::ofstream audit_;
  SelectionReport report_;
};

}  // namespace

std::size_t SelectionConfig::resolve_budget(const SourcePool& pool) const {
  if (pool.sources.empty() || pool.samples.empty()) throw Error(ErrorKind::Config, "selection needs a non-empty pool");
  std::size_t b = budget;
  if (b == 0) {
    if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
      throw Error(ErrorKind::Config, "budget fraction must lie in (0, 1]");
    }
    b = static_cast<std::size_t>(std::ceil(budget_fraction * static_cast<double>(pool.size()) - 1e-9));
  }
  if (batch_size == 0) throw Error(ErrorKind::Config, "batch size must be positive");
  if (batch_size > b) throw Error(ErrorKind::Config, "batch size exceeds the budget");
  if (weight_update_every == 0) throw Error(ErrorKind::Config, "weight update frequency must be positive");
  if (!(diversity_threshold > 0.0 && diversity_threshold <= 1.0)) {
    throw Error(ErrorKind::Config, "diversity threshold must lie in (0, 1]");
  }
  if (!(diversity_relaxation >= 0.0)) throw Error(ErrorKind::Config, "diversity relaxation must be >= 0");
  if (candidates_per_source == 0 || shortlist == 0) throw Error(ErrorKind::Config, "candidate multiples must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::Config, "learning rate must be positive");
  if (lsh_tables == 0 || lsh_bits > 63) throw Error(ErrorKind::Config, "invalid LSH shape");
  if (b < 2 * pool.sources.size()) {
    throw Error(ErrorKind::Config, "budget must be at least twice the number of sources");
  }
  return b;
}

std::size_t cold_start_quota(std::size_t budget, std::size_t sources) {
  if (sources == 0) throw Error(ErrorKind::Config, "no sources");
  return ceil_div(budget, 2 * sources);
}

std::vector<std::size_t> diversified_selection(const std::vector<ScoredCandidate>& candidates,
                                               std::size_t batch, double threshold, double relaxation,
                                               std::size_t source_quota) {
  std::vector<std::size_t> accepted;
  std::vector<bool> used(candidates.size(), false);
  std::map<std::size_t, std::size_t> per_source;
  double theta = threshold;
  while (accepted.size() < batch) {
    for (std::size_t i = 0; i < candidates.size() && accepted.size() < batch; ++i) {
      if (used[i]) continue;
      const ScoredCandidate& c = candidates[i];
      if (source_quota > 0 && per_source[c.source] >= source_quota) continue;
      bool ok = true;
      for (std::size_t a : accepted) {
        if (cosine_similarity(*c.x, *candidates[a].x) > theta) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      used[i] = true;
      accepted.push_back(i);
      ++per_source[c.source];
    }
    if (accepted.size() >= batch || theta >= 1.0 || !(relaxation > 0.0)) break;
    theta = std::min(1.0, theta + relaxation);
  }
  return accepted;
}

nlohmann::json SelectionReport::to_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const auto& r : rounds) {
    rounds_json.push_back({{"round", r.round},
                           {"source_probabilities", r.source_probabilities},
                           {"sources_drawn", r.sources_drawn},
                           {"candidates", r.candidates},
                           {"selected", r.selected},
                           {"mean_value", r.mean_value},
                           {"max_value", r.max_value},
                           {"min_value", r.min_value},
                           {"selected_mean_value", r.selected_mean_value}});
  }
  nlohmann::json trajectory = nlohmann::json::array();
  for (const auto& w : weight_trajectory) {
    trajectory.push_back({{"round", w.round}, {"weights", weights_json(w.weights)}, {"performance", w.performance}});
  }
  nlohmann::json arms_json = nlohmann::json::array();
  for (const auto& a : arms) arms_json.push_back({{"pulls", a.pulls}, {"mean_reward", a.mean()}});
  nlohmann::json out = {{"budget", budget},
                        {"selected_count", selected.size()},
                        {"selected", selected},
                        {"selected_sources", selected_sources},
                        {"cold_start_count", cold_start_count},
                        {"cold_start_shortfalls", shortfalls},
                        {"exhausted", exhausted},
                        {"rounds", rounds_json},
                        {"weight_trajectory", trajectory},
                        {"final_weights", weights_json(final_weights)},
                        {"bandit_arms", arms_json},
                        {"reward_updates", reward_updates},
                        {"cache", {{"hits", cache.hits}, {"misses", cache.misses}, {"hit_rate", cache.hit_rate}}},
                        {"warnings", {{"stats", stats_warnings}, {"bandit", bandit_warnings}}}};
  if (timings_recorded) out["select_seconds"] = select_seconds;
  return out;
}

SelectionReport run_selection(const SourcePool& pool, MlpModel& model, const SelectionConfig& config) {
  const std::size_t budget = config.resolve_budget(pool);
  if (model.input_dim() != pool.dim || model.output_dim() != pool.num_classes ||
      model.output_kind() != OutputKind::Softmax) {
    throw Error(ErrorKind::Shape, "model does not match the pool (input dim, class count, softmax output)");
  }
  Engine engine(pool, model, config, budget);
  return engine.run();
}

}  // namespace dvc
