#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dvc {

struct UcbArm {
  std::size_t pulls = 0;
  double reward_sum = 0.0;

  double mean() const noexcept { return pulls == 0 ? 0.0 : reward_sum / static_cast<double>(pulls); }
};

/// UCB1 over K data sources with rewards in [0, 1].
class SourceBandit {
 public:
  explicit SourceBandit(std::size_t arms, double exploration = 1.0);

  /// mean + c sqrt(2 ln t / n); +inf for an arm that was never pulled.
  double ucb_score(std::size_t arm) const;

  /// Scores shifted to be non-negative and normalised, then mixed with a
  /// floor of 0.01 / K per arm. Untried arms share the remaining mass.
  std::vector<double> source_probabilities() const;

  /// Out-of-range rewards are clamped into [0, 1] and counted as warnings.
  void update_reward(std::size_t arm, double reward);

  /// Arm with the largest UCB score; ties go to the lowest index.
  std::size_t select_arm() const;

  std::size_t num_arms() const noexcept { return arms_.size(); }
  std::size_t total_pulls() const noexcept { return total_; }
  const UcbArm& arm(std::size_t i) const { return arms_.at(i); }
  const std::vector<UcbArm>& arms() const noexcept { return arms_; }
  double exploration() const noexcept { return exploration_; }
  double probability_floor() const noexcept { return 0.01 / static_cast<double>(arms_.size()); }
  std::size_t warnings() const noexcept { return warnings_; }

 private:
  std::vector<UcbArm> arms_;
  double exploration_;
  std::size_t total_ = 0;
  std::size_t warnings_ = 0;
};

/// Cumulative pseudo-regret after each pull: sum of (best mean - pulled mean).
std::vector<double> regret_ledger(const std::vector<std::size_t>& pulled_arms,
                                  const std::vector<double>& true_means);

/// sum_{gap > 0} 8 ln T / gap + (1 + pi^2 / 3) sum gap.
double ucb_regret_bound(const std::vector<double>& true_means, std::size_t horizon);

struct RegretRun {
  std::vector<std::size_t> pulls;  // arm index per round
  std::vector<double> cumulative_regret;
  double bound = 0.0;
};

/// Runs `select_arm` for `horizon` rounds against Bernoulli arms.
RegretRun simulate_regret(const std::vector<double>& true_means, std::size_t horizon,
                          std::uint64_t seed, double exploration = 1.0);

}  // namespace dvc
