#include "dvc/source_bandit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "dvc/error.hpp"

namespace dvc {

SourceBandit::SourceBandit(std::size_t arms, double exploration)
    : arms_(arms), exploration_(exploration) {
  if (arms == 0) throw Error(ErrorKind::Config, "a bandit needs at least one arm");
  if (!(exploration >= 0.0) || !std::isfinite(exploration)) {
    throw Error(ErrorKind::Config, "exploration coefficient must be finite and non-negative");
  }
}

double SourceBandit::ucb_score(std::size_t i) const {
  const UcbArm& a = arms_.at(i);
  if (a.pulls == 0) return std::numeric_limits<double>::infinity();
  const double t = static_cast<double>(total_);
  return a.mean() + exploration_ * std::sqrt(2.0 * std::log(t) / static_cast<double>(a.pulls));
}

std::vector<double> SourceBandit::source_probabilities() const {
  const std::size_t k = arms_.size();
  std::vector<double> p(k, 0.0);
  std::size_t untried = 0;
  for (const auto& a : arms_) untried += a.pulls == 0 ? 1 : 0;

  if (untried > 0) {
    for (std::size_t i = 0; i < k; ++i) p[i] = arms_[i].pulls == 0 ? 1.0 / static_cast<double>(untried) : 0.0;
  } else {
    std::vector<double> scores(k);
    for (std::size_t i = 0; i < k; ++i) scores[i] = ucb_score(i);
    const double low = *std::min_element(scores.begin(), scores.end());
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = scores[i] - low;
      total += p[i];
    }
    if (total > 0.0) {
      for (auto& v : p) v /= total;
    } else {
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    }
  }

  // Mixing with the uniform floor keeps every arm at >= floor exactly while
  // the vector still sums to one.
  const double floor = probability_floor();
  const double keep = 1.0 - floor * static_cast<double>(k);
  for (auto& v : p) v = floor + keep * v;
  return p;
}

void SourceBandit::update_reward(std::size_t i, double reward) {
  if (i >= arms_.size()) throw Error(ErrorKind::Input, "arm index out of range");
  if (!std::isfinite(reward)) throw Error(ErrorKind::Numerics, "non-finite reward");
  if (reward < 0.0 || reward > 1.0) {
    ++warnings_;
    reward = std::clamp(reward, 0.0, 1.0);
  }
  arms_[i].pulls += 1;
  arms_[i].reward_sum += reward;
  total_ += 1;
}

std::size_t SourceBandit::select_arm() const {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms_.size(); ++i) {
    const double s = ucb_score(i);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

std::vector<double> regret_ledger(const std::vector<std::size_t>& pulled_arms,
                                  const std::vector<double>& true_means) {
  if (true_means.empty()) throw Error(ErrorKind::Unsupported, "regret needs known arm means");
  const double best = *std::max_element(true_means.begin(), true_means.end());
  std::vector<double> trace;
  trace.reserve(pulled_arms.size());
  double cumulative = 0.0;
  for (std::size_t arm : pulled_arms) {
    if (arm >= true_means.size()) throw Error(ErrorKind::Input, "pulled arm out of range");
    cumulative += best - true_means[arm];
    trace.push_back(cumulative);
  }
  return trace;
}

double ucb_regret_bound(const std::vector<double>& true_means, std::size_t horizon) {
  if (true_means.empty()) throw Error(ErrorKind::Unsupported, "regret needs known arm means");
  const double best = *std::max_element(true_means.begin(), true_means.end());
  const double log_t = std::log(static_cast<double>(horizon));
  double bound = 0.0;
  for (double mu : true_means) {
    const double gap = best - mu;
    if (gap > 0.0) bound += 8.0 * log_t / gap + (1.0 + std::numbers::pi * std::numbers::pi / 3.0) * gap;
  }
  return bound;
}

RegretRun simulate_regret(const std::vector<double>& true_means, std::size_t horizon,
                          std::uint64_t seed, double exploration) {
  for (double mu : true_means) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw Error(ErrorKind::Config, "Bernoulli means must lie in [0, 1]");
  }
  SourceBandit bandit(true_means.size(), exploration);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RegretRun run;
  run.pulls.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const std::size_t arm = bandit.select_arm();
    bandit.update_reward(arm, unit(rng) < true_means[arm] ? 1.0 : 0.0);
    run.pulls.push_back(arm);
  }
  run.cumulative_regret = regret_ledger(run.pulls, true_means);
  run.bound = ucb_regret_bound(true_means, horizon);
  return run;
}

}  // namespace dvc
