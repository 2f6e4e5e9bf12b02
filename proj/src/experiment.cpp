#include "dvc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "dvc/baselines.hpp"
#include "dvc/error.hpp"

namespace dvc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::uint64_t kFinalModelSalt = 0xf1a1u;

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      out << rows[i][c] << std::string(width[c] - rows[i][c].size(), ' ');
      if (c + 1 < rows[i].size()) out << "  ";
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace

double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, std::size_t classes) {
  if (predicted.size() != truth.size()) throw Error(ErrorKind::Shape, "prediction / truth length mismatch");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::vector<bool> present(classes, false);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t p = predicted[i], t = truth[i];
    if (p >= classes || t >= classes) throw Error(ErrorKind::Input, "class index out of range");
    present[p] = present[t] = true;
    if (p == t) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!present[c]) continue;
    ++counted;
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    total += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

bool proximity_pass(double accuracy, double full_accuracy) {
  return std::abs(accuracy - full_accuracy) <= full_accuracy / 25.0;
}

double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw Error(ErrorKind::Input, "slope needs two or more points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw Error(ErrorKind::Numerics, "log-log slope needs positive values");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (!(sxx > 0.0)) throw Error(ErrorKind::Numerics, "log-log slope needs distinct x values");
  return sxy / sxx;
}

std::vector<std::size_t> ModelSpec::dims(const SourcePool& pool) const {
  std::vector<std::size_t> d{pool.dim};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(pool.num_classes);
  return d;
}

SourcePool DataSpec::materialize(std::uint64_t seed_offset) const {
  if (!path.empty()) {
    TabularSchema s = schema;
    s.seed += seed_offset;
    return load_tabular(path, s);
  }
  SynthSpec s = synth;
  s.seed += seed_offset;
  return synthesize_pool(s);
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw Error(ErrorKind::Config, "at least one seed required");
  if (budgets.empty()) throw Error(ErrorKind::Config, "at least one budget required");
  for (double b : budgets) {
    if (!(b > 0.0 && b <= 1.0)) throw Error(ErrorKind::Config, "budget fractions must lie in (0, 1]");
  }
  for (const auto& m : methods) {
    if (m != "dvc" && m != "random" && m != "uncertainty") throw Error(ErrorKind::Config, "unknown method '" + m + "'");
  }
  for (const auto& v : variants) (void)AblationMask::from_variant(v);
  if (final_train.epochs == 0 || final_train.batch_size == 0 || !(final_train.lr > 0.0)) {
    throw Error(ErrorKind::Config, "invalid final training options");
  }
}

TrainedEvaluation train_and_evaluate(const SourcePool& pool, std::span<const std::size_t> ids,
                                     const ModelSpec& model, const TrainOptions& train, std::uint64_t seed) {
  MlpModel net(model.dims(pool), model.activation, OutputKind::Softmax, seed ^ kFinalModelSalt);
  std::mt19937_64 rng(seed ^ (kFinalModelSalt << 16));
  const auto start = Clock::now();
  if (!ids.empty()) train_classifier(net, pool.features(ids), pool.labels(ids), train, rng);
  TrainedEvaluation out;
  out.train_seconds = seconds_since(start);
  const auto predicted = predict_labels(net, pool.test_x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == pool.test_y[i] ? 1 : 0;
  out.accuracy = predicted.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(predicted.size());
  out.macro_f1 = macro_f1(predicted, pool.test_y, pool.num_classes);
  return out;
}

const CellAggregate* ExperimentResult::find(const std::string& method, const std::string& variant,
                                            double budget) const {
  for (const auto& a : aggregates) {
    if (a.method == method && a.variant == variant && std::abs(a.budget - budget) < 1e-12) return &a;
  }
  return nullptr;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult result;
  result.timings = spec.record_timings;

  struct Key {
    std::string method, variant;
    double budget;
  };
  std::vector<Key> keys;
  for (double budget : spec.budgets) {
    for (const auto& m : spec.methods) {
      if (m == "dvc") {
        for (const auto& v : spec.variants) keys.push_back({m, v, budget});
      } else {
        keys.push_back({m, "-", budget});
      }
    }
  }

  for (std::uint64_t seed : spec.seeds) {
    SourcePool pool;
    std::string pool_error;
    try {
      pool = spec.data.materialize(seed);
    } catch (const std::exception& e) {
      pool_error = e.what();
    }
    for (const auto& key : keys) {
      CellResult cell;
      cell.method = key.method;
      cell.variant = key.variant;
      cell.budget = key.budget;
      cell.seed = seed;
      if (!pool_error.empty()) {
        cell.error = pool_error;
        result.cells.push_back(std::move(cell));
        continue;
      }
      try {
        SelectionConfig cfg = spec.selection;
        cfg.budget = 0;
        cfg.budget_fraction = key.budget;
        cfg.seed = spec.selection.seed + seed;
        cfg.record_timings = spec.record_timings;
        if (key.method == "dvc") cfg.mask = AblationMask::from_variant(key.variant);
        const std::size_t budget = cfg.resolve_budget(pool);

        std::vector<std::size_t> selected;
        const auto start = Clock::now();
        if (key.method == "random") {
          selected = baseline_random(pool, std::min(budget, pool.size()), cfg.seed);
        } else {
          MlpModel model(spec.model.dims(pool), spec.model.activation, OutputKind::Softmax, cfg.seed);
          if (key.method == "dvc") {
            selected = run_selection(pool, model, cfg).selected;
          } else {
            selected = baseline_uncertainty(pool, model, cfg);
          }
        }
        cell.select_seconds = seconds_since(start);
        const auto eval = train_and_evaluate(pool, selected, spec.model, spec.final_train, seed);
        cell.accuracy = eval.accuracy;
        cell.macro_f1 = eval.macro_f1;
        cell.train_seconds = eval.train_seconds;
        cell.selected = selected.size();
        std::size_t clean = 0;
        for (std::size_t id : selected) clean += pool.samples[id].label == pool.samples[id].clean_label ? 1 : 0;
        cell.clean_fraction = selected.empty() ? 0.0 : static_cast<double>(clean) / static_cast<double>(selected.size());
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  for (const auto& key : keys) {
    std::vector<double> acc, f1;
    for (const auto& c : result.cells) {
      if (c.ok && c.method == key.method && c.variant == key.variant && c.budget == key.budget) {
        acc.push_back(c.accuracy);
        f1.push_back(c.macro_f1);
      }
    }
    CellAggregate a;
    a.method = key.method;
    a.variant = key.variant;
    a.budget = key.budget;
    a.runs = acc.size();
    std::tie(a.accuracy_mean, a.accuracy_std) = mean_std(acc);
    std::tie(a.f1_mean, a.f1_std) = mean_std(f1);
    result.aggregates.push_back(a);
  }
  return result;
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json j = {{"method", c.method},     {"variant", c.variant},   {"budget", c.budget},
                        {"seed", c.seed},         {"ok", c.ok},             {"accuracy", c.accuracy},
                        {"macro_f1", c.macro_f1}, {"selected", c.selected}, {"clean_fraction", c.clean_fraction}};
    if (!c.ok) j["error"] = c.error;
    if (timings) {
      j["select_seconds"] = c.select_seconds;
      j["train_seconds"] = c.train_seconds;
    }
    cells_json.push_back(std::move(j));
  }
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& a : aggregates) {
    agg.push_back({{"method", a.method},
                   {"variant", a.variant},
                   {"budget", a.budget},
                   {"runs", a.runs},
                   {"accuracy_mean", a.accuracy_mean},
                   {"accuracy_std", a.accuracy_std},
                   {"f1_mean", a.f1_mean},
                   {"f1_std", a.f1_std}});
  }
  return {{"cells", cells_json}, {"aggregates", agg}};
}

std::string ExperimentResult::table() const {
  std::vector<std::vector<std::string>> rows{{"method", "variant", "budget", "accuracy", "macro_f1", "runs"}};
  for (const auto& a : aggregates) {
    rows.push_back({a.method, a.variant, fixed(100.0 * a.budget, 0) + "%",
                    fixed(100.0 * a.accuracy_mean, 2) + " ± " + fixed(100.0 * a.accuracy_std, 2),
                    fixed(100.0 * a.f1_mean, 2) + " ± " + fixed(100.0 * a.f1_std, 2), std::to_string(a.runs)});
  }
  return render(rows);
}

ScalingResult scaling_sweep(const ScalingSpec& spec) {
  if (spec.sizes.size() < 2) throw Error(ErrorKind::Config, "scaling sweep needs at least two pool sizes");
  if (!(spec.budget_fraction > 0.0 && spec.budget_fraction <= 1.0)) {
    throw Error(ErrorKind::Config, "budget fraction must lie in (0, 1]");
  }
  ScalingResult result;
  std::vector<double> ns, times, fixed_times;
  for (std::size_t n : spec.sizes) {
    DataSpec data = spec.data;
    data.synth.train_size = n;
    const SourcePool pool = data.materialize(spec.seed);

    auto run = [&](std::size_t budget, double fraction) {
      SelectionConfig cfg = spec.selection;
      cfg.budget = budget;
      cfg.budget_fraction = fraction;
      cfg.seed = spec.selection.seed + spec.seed;
      MlpModel model(spec.model.dims(pool), spec.model.activation, OutputKind::Softmax, cfg.seed);
      const auto start = Clock::now();
      const SelectionReport report = run_selection(pool, model, cfg);
      ScalingRow row;
      row.pool_size = pool.size();
      row.budget = report.budget;
      row.select_seconds = seconds_since(start);
      const auto eval = train_and_evaluate(pool, report.selected, spec.model, spec.final_train, spec.seed);
      row.train_selected_seconds = eval.train_seconds;
      row.accuracy = eval.accuracy;
      return row;
    };

    const std::vector<std::size_t> all = pool.all_ids();
    const auto full = train_and_evaluate(pool, all, spec.model, spec.final_train, spec.seed);

    ScalingRow row = run(0, spec.budget_fraction);
    row.full_train_seconds = full.train_seconds;
    row.full_accuracy = full.accuracy;
    row.speedup = full.train_seconds / (row.select_seconds + row.train_selected_seconds);
    row.proximity = proximity_pass(row.accuracy, row.full_accuracy);
    result.rows.push_back(row);
    ns.push_back(static_cast<double>(pool.size()));
    times.push_back(row.select_seconds);

    if (spec.fixed_budget > 0) {
      ScalingRow fixed_row = run(spec.fixed_budget, 1.0);
      fixed_row.full_train_seconds = full.train_seconds;
      fixed_row.full_accuracy = full.accuracy;
      fixed_row.speedup = full.train_seconds / (fixed_row.select_seconds + fixed_row.train_selected_seconds);
      fixed_row.proximity = proximity_pass(fixed_row.accuracy, fixed_row.full_accuracy);
      result.fixed_rows.push_back(fixed_row);
      fixed_times.push_back(fixed_row.select_seconds);
    }
  }
  result.select_slope = loglog_slope(ns, times);
  if (!fixed_times.empty()) result.fixed_select_slope = loglog_slope(ns, fixed_times);
  return result;
}

nlohmann::json ScalingResult::to_json() const {
  auto rows_json = [](const std::vector<ScalingRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
      out.push_back({{"pool_size", r.pool_size},
                     {"budget", r.budget},
                     {"select_seconds", r.select_seconds},
                     {"train_selected_seconds", r.train_selected_seconds},
                     {"full_train_seconds", r.full_train_seconds},
                     {"speedup", r.speedup},
                     {"accuracy", r.accuracy},
                     {"full_accuracy", r.full_accuracy},
                     {"proximity", r.proximity}});
    }
    return out;
  };
  nlohmann::json out = {{"rows", rows_json(rows)}, {"select_slope", select_slope}};
  if (!fixed_rows.empty()) {
    out["fixed_budget_rows"] = rows_json(fixed_rows);
    out["fixed_budget_select_slope"] = fixed_select_slope;
  }
  return out;
}

std::string ScalingResult::table() const {
  std::vector<std::vector<std::string>> out{
      {"pool", "budget", "select_s", "train_sel_s", "full_s", "speedup", "acc", "acc_full", "proximity"}};
  auto add = [&](const std::vector<ScalingRow>& rows) {
    for (const auto& r : rows) {
      out.push_back({std::to_string(r.pool_size), std::to_string(r.budget), fixed(r.select_seconds, 3),
                     fixed(r.train_selected_seconds, 3), fixed(r.full_train_seconds, 3), fixed(r.speedup, 2),
                     fixed(100.0 * r.accuracy, 2), fixed(100.0 * r.full_accuracy, 2), r.proximity ? "PASS" : "FAIL"});
    }
  };
  add(rows);
  add(fixed_rows);
  std::string text = render(out);
  text += "select-time log-log slope: " + fixed(select_slope, 3) + '\n';
  if (!fixed_rows.empty()) text += "fixed-budget select-time log-log slope: " + fixed(fixed_select_slope, 3) + '\n';
  return text;
}

}  // namespace dvc
