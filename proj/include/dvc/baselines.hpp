#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dvc/dataset.hpp"
#include "dvc/mlp.hpp"
#include "dvc/selection_engine.hpp"

namespace dvc {

/// Uniform sample of `budget` pool ids without replacement.
std::vector<std::size_t> baseline_random(const SourcePool& pool, std::size_t budget, std::uint64_t seed);

/// Entropy sampling with the same cold start, batch size and model-update
/// rule as run_selection. Each round ranks every unselected sample by
/// predictive entropy under the current model; ties are broken by a seeded
/// random key.
std::vector<std::size_t> baseline_uncertainty(const SourcePool& pool, MlpModel& model,
                                              const SelectionConfig& config);

/// The per-source draw run_selection uses for its cold start.
std::vector<std::size_t> cold_start_sample(const SourcePool& pool, std::size_t budget, std::mt19937_64& rng);

}  // namespace dvc
