#include "dvc/tabular.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "dvc/error.hpp"
#include "json.hpp"

namespace dvc {
namespace {

enum class Split { Train, Val, Test };

struct Row {
  std::size_t line = 0;
  std::vector<double> features;
  std::string label;
  std::optional<std::string> clean_label;
  std::optional<std::string> source;
  std::optional<Split> split;
};

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::size_t> parse_index(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18) return std::nullopt;
  return static_cast<std::size_t>(std::stoull(s));
}

Split parse_split(const std::string& s, std::size_t line) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::Input, "line " + std::to_string(line) + ": unknown split '" + s + "'");
}

// Integer-looking values keep their value; otherwise sorted strings get
// consecutive codes.
std::map<std::string, std::size_t> encode(const std::set<std::string>& values) {
  std::map<std::string, std::size_t> codes;
  const bool numeric = std::all_of(values.begin(), values.end(), [](const auto& v) { return parse_index(v).has_value(); });
  std::size_t next = 0;
  for (const auto& v : values) codes[v] = numeric ? *parse_index(v) : next++;
  return codes;
}

SourcePool build_pool(std::vector<Row> rows, const TabularSchema& schema, std::size_t dim) {
  if (rows.empty()) throw Error(ErrorKind::Input, "no data rows");
  if (dim == 0) throw Error(ErrorKind::Schema, "no feature columns");
  const std::size_t n = rows.size();

  const bool explicit_split = std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.split.has_value(); });
  std::mt19937_64 rng(schema.seed);
  if (!explicit_split) {
    if (schema.val_fraction < 0.0 || schema.test_fraction < 0.0 || schema.val_fraction + schema.test_fraction >= 1.0) {
      throw Error(ErrorKind::Config, "split fractions must be non-negative and sum below 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(schema.test_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(schema.val_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
      rows[order[i]].split = i < n_test ? Split::Test : (i < n_test + n_val ? Split::Val : Split::Train);
    }
  }

  std::set<std::string> label_values;
  for (const auto& r : rows) {
    label_values.insert(r.label);
    if (r.clean_label) label_values.insert(*r.clean_label);
  }
  const auto label_codes = encode(label_values);
  std::size_t classes = 0;
  for (const auto& [_, c] : label_codes) classes = std::max(classes, c + 1);
  classes = std::max<std::size_t>(classes, 2);

  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].split == Split::Train) train_rows.push_back(i);
  }
  if (train_rows.empty()) throw Error(ErrorKind::Input, "no training rows");

  Vector mean = Vector::Zero(static_cast<Eigen::Index>(dim));
  Vector scale = Vector::Ones(static_cast<Eigen::Index>(dim));
  if (schema.standardize) {
    Vector m2 = Vector::Zero(static_cast<Eigen::Index>(dim));
    std::size_t count = 0;
    for (std::size_t i : train_rows) {
      ++count;
      const Eigen::Map<const Vector> x(rows[i].features.data(), static_cast<Eigen::Index>(dim));
      const Vector delta = x - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta.cwiseProduct(x - mean);
    }
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      const double sd = count > 1 ? std::sqrt(m2[j] / static_cast<double>(count)) : 0.0;
      scale[j] = sd > 1e-12 ? sd : 1.0;
    }
  }
  auto features = [&](const Row& r) {
    const Eigen::Map<const Vector> x(r.features.data(), static_cast<Eigen::Index>(dim));
    return Vector((x - mean).cwiseQuotient(scale));
  };

  SourcePool pool;
  pool.num_classes = classes;
  pool.dim = dim;

  const bool explicit_source = std::all_of(train_rows.begin(), train_rows.end(),
                                           [&](std::size_t i) { return rows[i].source.has_value(); });
  std::vector<std::size_t> source_of(n, 0);
  std::size_t k = 0;
  if (explicit_source) {
    std::set<std::string> names;
    for (std::size_t i : train_rows) names.insert(*rows[i].source);
    const auto codes = encode(names);
    // Compact the codes so that every source is non-empty.
    std::map<std::size_t, std::size_t> compact;
    for (const auto& [_, c] : codes) compact.emplace(c, 0);
    for (auto& [c, slot] : compact) slot = k++;
    for (std::size_t i : train_rows) source_of[i] = compact[codes.at(*rows[i].source)];
  } else {
    if (schema.num_sources == 0) throw Error(ErrorKind::Config, "need at least one source");
    k = std::min(schema.num_sources, train_rows.size());
    std::vector<std::size_t> order = train_rows;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < order.size(); ++j) source_of[order[j]] = j % k;
  }
  pool.sources.resize(k);
  for (std::size_t s = 0; s < k; ++s) pool.sources[s].name = "source_" + std::to_string(s);

  std::vector<Vector> val_cols, test_cols;
  for (std::size_t i = 0; i < n; ++i) {
    const Row& r = rows[i];
    const std::size_t label = label_codes.at(r.label);
    if (r.split == Split::Train) {
      Sample s;
      s.x = features(r);
      s.label = label;
      s.clean_label = r.clean_label ? label_codes.at(*r.clean_label) : label;
      pool.sources[source_of[i]].ids.push_back(pool.samples.size());
      pool.samples.push_back(std::move(s));
    } else if (r.split == Split::Val) {
      val_cols.push_back(features(r));
      pool.val_y.push_back(label);
    } else {
      test_cols.push_back(features(r));
      pool.test_y.push_back(label);
    }
  }
  auto stack = [&](const std::vector<Vector>& cols, Matrix& out) {
    out.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = cols[j];
  };
  stack(val_cols, pool.val_x);
  stack(test_cols, pool.test_x);
  finalize_pool(pool);
  return pool;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct FlatRow {
  const Vector* x;
  std::size_t label;
  std::size_t clean_label;
  std::size_t source;
  const char* split;
};

template <typename Fn>
void for_each_row(const SourcePool& pool, Fn fn) {
  for (const auto& s : pool.samples) fn(FlatRow{&s.x, s.label, s.clean_label, s.source, "train"});
  Vector col;
  for (Eigen::Index j = 0; j < pool.val_x.cols(); ++j) {
    col = pool.val_x.col(j);
    const std::size_t y = pool.val_y[static_cast<std::size_t>(j)];
    fn(FlatRow{&col, y, y, 0, "val"});
  }
  for (Eigen::Index j = 0; j < pool.test_x.cols(); ++j) {
    col = pool.test_x.col(j);
    const std::size_t y = pool.test_y[static_cast<std::size_t>(j)];
    fn(FlatRow{&col, y, y, 0, "test"});
  }
}

}  // namespace

SourcePool load_csv(const std::string& path, const TabularSchema& schema) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Schema, "missing header row");
  const auto header = split_csv_line(line);
  std::optional<std::size_t> label_col, source_col, split_col, clean_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column) label_col = c;
    else if (header[c] == schema.source_column) source_col = c;
    else if (header[c] == schema.split_column) split_col = c;
    else if (header[c] == schema.clean_label_column) clean_col = c;
    else feature_cols.push_back(c);
  }
  if (!label_col) throw Error(ErrorKind::Schema, "missing label column '" + schema.label_column + "'");

  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::Input, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " fields, got " +
                                        std::to_string(fields.size()));
    }
    Row r;
    r.line = line_no;
    for (std::size_t c : feature_cols) {
      const auto v = parse_double(fields[c]);
      if (!v) {
        throw Error(ErrorKind::Schema, "line " + std::to_string(line_no) + ": non-numeric feature '" +
                                           fields[c] + "' in column '" + header[c] + "'");
      }
      r.features.push_back(*v);
    }
    r.label = fields[*label_col];
    if (r.label.empty()) throw Error(ErrorKind::Input, "line " + std::to_string(line_no) + ": empty label");
    if (clean_col && !fields[*clean_col].empty()) r.clean_label = fields[*clean_col];
    if (source_col && !fields[*source_col].empty()) r.source = fields[*source_col];
    if (split_col && !fields[*split_col].empty()) r.split = parse_split(fields[*split_col], line_no);
    rows.push_back(std::move(r));
  }
  return build_pool(std::move(rows), schema, feature_cols.size());
}

SourcePool load_jsonl(const std::string& path, const TabularSchema& schema) {
  auto in = open_input(path);
  std::string line;
  std::vector<Row> rows;
  std::optional<std::size_t> dim;
  std::size_t line_no = 0;
  auto scalar_text = [&](const nlohmann::json& v, const char* what) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_unsigned() || v.is_number_integer()) return std::to_string(v.get<long long>());
    throw Error(ErrorKind::Schema, "line " + std::to_string(line_no) + ": '" + what + "' must be a string or integer");
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::Input, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("features") || !obj["features"].is_array()) {
      throw Error(ErrorKind::Schema, "line " + std::to_string(line_no) + ": missing 'features' array");
    }
    if (!obj.contains(schema.label_column)) {
      throw Error(ErrorKind::Schema, "line " + std::to_string(line_no) + ": missing label field '" +
                                         schema.label_column + "'");
    }
    Row r;
    r.line = line_no;
    for (const auto& f : obj["features"]) {
      if (!f.is_number()) throw Error(ErrorKind::Schema, "line " + std::to_string(line_no) + ": non-numeric feature");
      r.features.push_back(f.get<double>());
    }
    if (dim && *dim != r.features.size()) {
      throw Error(ErrorKind::Input, "line " + std::to_string(line_no) + ": feature count differs from earlier rows");
    }
    dim = r.features.size();
    r.label = scalar_text(obj[schema.label_column], "label");
    if (obj.contains(schema.clean_label_column)) r.clean_label = scalar_text(obj[schema.clean_label_column], "clean_label");
    if (obj.contains(schema.source_column)) r.source = scalar_text(obj[schema.source_column], "source");
    if (obj.contains(schema.split_column)) {
      r.split = parse_split(scalar_text(obj[schema.split_column], "split"), line_no);
    }
    rows.push_back(std::move(r));
  }
  return build_pool(std::move(rows), schema, dim.value_or(0));
}

SourcePool load_tabular(const std::string& path, const TabularSchema& schema) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".jsonl" || ext == ".json") return load_jsonl(path, schema);
  return load_csv(path, schema);
}

void write_csv(const SourcePool& pool, const std::string& path) {
  auto out = open_output(path);
  for (std::size_t j = 0; j < pool.dim; ++j) out << 'f' << j << ',';
  out << "label,clean_label,source,split\n";
  for_each_row(pool, [&](const FlatRow& r) {
    for (Eigen::Index j = 0; j < r.x->size(); ++j) out << fmt((*r.x)[j]) << ',';
    out << r.label << ',' << r.clean_label << ',' << r.source << ',' << r.split << '\n';
  });
}

void write_jsonl(const SourcePool& pool, const std::string& path) {
  auto out = open_output(path);
  for_each_row(pool, [&](const FlatRow& r) {
    std::ostringstream line;
    line << "{\"features\": [";
    for (Eigen::Index j = 0; j < r.x->size(); ++j) line << (j ? ", " : "") << fmt((*r.x)[j]);
    line << "], \"label\": " << r.label << ", \"clean_label\": " << r.clean_label << ", \"source\": " << r.source
         << ", \"split\": \"" << r.split << "\"}";
    out << line.str() << '\n';
  });
}

}  // namespace dvc
