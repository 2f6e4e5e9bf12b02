#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dvc/dataset.hpp"
#include "dvc/mlp.hpp"
#include "dvc/selection_engine.hpp"
#include "dvc/tabular.hpp"
#include "json.hpp"

namespace dvc {

/// Mean of per-class F1 = 2TP / (2TP + FP + FN) over the classes that occur
/// in either the truth or the predictions.
double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                std::size_t classes);

/// |acc - full| <= full / 25.
bool proximity_pass(double accuracy, double full_accuracy);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> xs, std::span<const double> ys);

struct ModelSpec {
  std::vector<std::size_t> hidden{64, 32};
  Activation activation = Activation::ReLU;

  std::vector<std::size_t> dims(const SourcePool& pool) const;
};

/// Where the data comes from: a tabular file when `path` is set, the
/// synthetic generator otherwise.
struct DataSpec {
  std::string path;
  TabularSchema schema{};
  SynthSpec synth{};

  /// `seed_offset` is added to the generator / split seed.
  SourcePool materialize(std::uint64_t seed_offset) const;
};

struct ExperimentSpec {
  DataSpec data{};
  ModelSpec model{};
  TrainOptions final_train{};
  SelectionConfig selection{};
  std::vector<double> budgets{0.1, 0.2, 0.3, 0.4};
  std::vector<std::string> methods{"dvc", "random", "uncertainty"};
  std::vector<std::string> variants{"full"};  // ablation variants, dvc only
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool record_timings = false;

  void validate() const;
};

struct CellResult {
  std::string method;
  std::string variant;
  double budget = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t selected = 0;
  double clean_fraction = 0.0;  // share of selected samples with an uncorrupted label
  double select_seconds = 0.0;
  double train_seconds = 0.0;
};

struct CellAggregate {
  std::string method;
  std::string variant;
  double budget = 0.0;
  std::size_t runs = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double f1_mean = 0.0;
  double f1_std = 0.0;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::vector<CellAggregate> aggregates;
  bool timings = false;

  const CellAggregate* find(const std::string& method, const std::string& variant, double budget) const;
  nlohmann::json to_json() const;
  std::string table() const;
};

struct TrainedEvaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double train_seconds = 0.0;
};

/// Fresh model seeded by `seed`, trained on `ids`, evaluated on the test split.
TrainedEvaluation train_and_evaluate(const SourcePool& pool, std::span<const std::size_t> ids,
                                     const ModelSpec& model, const TrainOptions& train, std::uint64_t seed);

/// Every (method, variant, budget, seed) cell. Cell failures are recorded and
/// the run continues.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct ScalingSpec {
  DataSpec data{};
  ModelSpec model{};
  TrainOptions final_train{};
  SelectionConfig selection{};
  std::vector<std::size_t> sizes{20000, 40000, 80000};
  double budget_fraction = 0.1;
  std::size_t fixed_budget = 0;  // > 0 adds a fixed-B pass over the same sizes
  std::uint64_t seed = 0;
};

struct ScalingRow {
  std::size_t pool_size = 0;
  std::size_t budget = 0;
  double select_seconds = 0.0;
  double train_selected_seconds = 0.0;
  double full_train_seconds = 0.0;
  double speedup = 0.0;
  double accuracy = 0.0;
  double full_accuracy = 0.0;
  bool proximity = false;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;            // budget fraction
  std::vector<ScalingRow> fixed_rows;      // fixed budget, when requested
  double select_slope = 0.0;
  double fixed_select_slope = 0.0;

  nlohmann::json to_json() const;
  std::string table() const;
};

ScalingResult scaling_sweep(const ScalingSpec& spec);

}  // namespace dvc
