#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dvc/dataset.hpp"

namespace dvc {

/// Column roles for tabular input. Every other column is a numeric feature.
/// `source` and `split` columns are optional; when absent, rows are split at
/// random (test, then validation, rest training) and training rows are dealt
/// round-robin into `num_sources` sources after a seeded shuffle.
struct TabularSchema {
  std::string label_column = "label";
  std::string source_column = "source";
  std::string split_column = "split";           // values: train / val / test
  std::string clean_label_column = "clean_label";
  std::size_t num_sources = 6;
  double val_fraction = 0.0;
  double test_fraction = 0.0;
  bool standardize = true;  // training-split mean / std
  std::uint64_t seed = 0;
};

/// CSV with a header row, or JSONL with "features"/"label" (and optionally
/// "source", "split", "clean_label") per line. The format follows the file
/// extension (.jsonl / .json vs anything else).
SourcePool load_tabular(const std::string& path, const TabularSchema& schema = {});
SourcePool load_csv(const std::string& path, const TabularSchema& schema = {});
SourcePool load_jsonl(const std::string& path, const TabularSchema& schema = {});

/// Writes every split with explicit split/source/clean_label columns, so
/// that loading the file back reproduces the partition.
void write_csv(const SourcePool& pool, const std::string& path);
void write_jsonl(const SourcePool& pool, const std::string& path);

}  // namespace dvc
