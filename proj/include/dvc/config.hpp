#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dvc/experiment.hpp"
#include "json.hpp"

namespace dvc {

struct RegretSpec {
  std::vector<double> means{0.9, 0.8};
  std::vector<std::size_t> horizons{2000, 10000, 20000};
  std::size_t seeds = 20;
  double exploration = 1.0;
};

/// Everything the CLI reads from a config file. The data, model, train and
/// selection sections are shared by `bench` and `scale`.
struct AppConfig {
  ExperimentSpec experiment{};
  ScalingSpec scaling{};
  RegretSpec regret{};
};

AppConfig default_config();
/// Unknown keys are configuration errors, so typos do not pass silently.
AppConfig parse_config(const nlohmann::json& doc);
AppConfig load_config(const std::string& path);
nlohmann::json config_to_json(const AppConfig& config);

}  // namespace dvc
