// Command-line front end: synth, select, bench, scale, regret.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dvc/config.hpp"
#include "dvc/error.hpp"
#include "dvc/experiment.hpp"
#include "dvc/selection_engine.hpp"
#include "dvc/source_bandit.hpp"
#include "dvc/tabular.hpp"
#include "json.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_budget) {
  cmd->add_option("--config", f.config, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--seed", f.seed, "Base seed for data generation and selection");
  if (with_budget) cmd->add_option("--budget", f.budget, "Budget: a fraction in (0, 1] or an absolute count");
  cmd->add_option("--out", f.out, "Output path");
}

dvc::AppConfig resolve(const CommonFlags& f) {
  dvc::AppConfig cfg = f.config.empty() ? dvc::default_config() : dvc::load_config(f.config);
  if (f.seed) {
    for (auto* data : {&cfg.experiment.data, &cfg.scaling.data}) {
      data->synth.seed = *f.seed;
      data->schema.seed = *f.seed;
    }
    cfg.experiment.selection.seed = cfg.scaling.selection.seed = *f.seed;
    cfg.scaling.seed = *f.seed;
  }
  return cfg;
}

void emit(const nlohmann::json& doc, const std::string& out) {
  const std::string text = doc.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream file(out, std::ios::binary);
  if (!file) throw dvc::Error(dvc::ErrorKind::Io, "cannot write " + out);
  file << text;
}

void apply_budget(dvc::SelectionConfig& sel, std::optional<double> budget) {
  if (!budget) return;
  if (*budget > 0.0 && *budget <= 1.0) {
    sel.budget = 0;
    sel.budget_fraction = *budget;
  } else if (*budget > 1.0 && std::floor(*budget) == *budget) {
    sel.budget = static_cast<std::size_t>(*budget);
  } else {
    throw dvc::Error(dvc::ErrorKind::Config, "--budget must be a fraction in (0, 1] or a positive integer");
  }
}

int run_synth(const CommonFlags& f) {
  if (f.out.empty()) throw dvc::Error(dvc::ErrorKind::Config, "synth needs --out <file.csv|file.jsonl>");
  const auto cfg = resolve(f);
  const dvc::SourcePool pool = dvc::synthesize_pool(cfg.experiment.data.synth);
  if (f.out.ends_with(".jsonl") || f.out.ends_with(".json")) {
    dvc::write_jsonl(pool, f.out);
  } else {
    dvc::write_csv(pool, f.out);
  }
  std::cout << "wrote " << pool.size() << " training samples in " << pool.sources.size() << " sources, "
            << pool.val_y.size() << " validation and " << pool.test_y.size() << " test rows to " << f.out << '\n';
  return 0;
}

int run_select(const CommonFlags& f) {
  auto cfg = resolve(f);
  auto& spec = cfg.experiment;
  apply_budget(spec.selection, f.budget);
  spec.selection.record_timings = spec.record_timings;
  const dvc::SourcePool pool = spec.data.materialize(0);
  dvc::MlpModel model(spec.model.dims(pool), spec.model.activation, dvc::OutputKind::Softmax, spec.selection.seed);
  const dvc::SelectionReport report = dvc::run_selection(pool, model, spec.selection);
  const auto eval = dvc::train_and_evaluate(pool, report.selected, spec.model, spec.final_train, spec.selection.seed);
  nlohmann::json doc = report.to_json();
  doc["final_accuracy"] = eval.accuracy;
  doc["final_macro_f1"] = eval.macro_f1;
  if (spec.record_timings) doc["train_seconds"] = eval.train_seconds;
  emit(doc, f.out);
  if (!f.out.empty()) {
    std::cout << "selected " << report.selected.size() << " of " << pool.size() << " samples; test accuracy "
              << eval.accuracy << ", macro-F1 " << eval.macro_f1 << '\n';
  }
  return 0;
}

int run_bench(const CommonFlags& f) {
  auto cfg = resolve(f);
  if (f.budget) {
    if (!(*f.budget > 0.0 && *f.budget <= 1.0)) throw dvc::Error(dvc::ErrorKind::Config, "bench --budget is a fraction");
    cfg.experiment.budgets = {*f.budget};
  }
  const dvc::ExperimentResult result = dvc::run_experiment(cfg.experiment);
  nlohmann::json doc = result.to_json();
  doc["config"] = dvc::config_to_json(cfg);
  emit(doc, f.out);
  if (!f.out.empty()) std::cout << result.table();
  return 0;
}

int run_scale(const CommonFlags& f) {
  auto cfg = resolve(f);
  if (f.budget) {
    if (!(*f.budget > 0.0 && *f.budget <= 1.0)) throw dvc::Error(dvc::ErrorKind::Config, "scale --budget is a fraction");
    cfg.scaling.budget_fraction = *f.budget;
  }
  const dvc::ScalingResult result = dvc::scaling_sweep(cfg.scaling);
  emit(result.to_json(), f.out);
  if (!f.out.empty()) std::cout << result.table();
  return 0;
}

int run_regret(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto& spec = cfg.regret;
  const std::uint64_t base = f.seed.value_or(0);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t horizon : spec.horizons) {
    double total = 0.0;
    for (std::size_t s = 0; s < spec.seeds; ++s) {
      const auto run = dvc::simulate_regret(spec.means, horizon, base + s, spec.exploration);
      total += run.cumulative_regret.empty() ? 0.0 : run.cumulative_regret.back();
    }
    const double mean = spec.seeds ? total / static_cast<double>(spec.seeds) : 0.0;
    const double bound = dvc::ucb_regret_bound(spec.means, horizon);
    rows.push_back({{"horizon", horizon},
                    {"mean_regret", mean},
                    {"regret_per_round", mean / static_cast<double>(horizon)},
                    {"bound", bound},
                    {"below_bound", mean < bound}});
    if (!f.out.empty()) {
      std::printf("T=%-8zu mean regret %10.3f  per round %.5f  bound %10.3f\n", horizon, mean,
                  mean / static_cast<double>(horizon), bound);
    }
  }
  emit({{"means", spec.means}, {"seeds", spec.seeds}, {"rows", rows}}, f.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-constrained data valuation and selection"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-source pool and write it to disk");
  auto* select = app.add_subcommand("select", "Run one selection and emit its report");
  auto* bench = app.add_subcommand("bench", "Run the method x budget x seed grid");
  auto* scale = app.add_subcommand("scale", "Time selection against full-pool training over pool sizes");
  auto* regret = app.add_subcommand("regret", "Simulate UCB regret on Bernoulli arms");
  add_common(synth, flags, false);
  add_common(select, flags, true);
  add_common(bench, flags, true);
  add_common(scale, flags, true);
  add_common(regret, flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(flags);
    if (*select) return run_select(flags);
    if (*bench) return run_bench(flags);
    if (*scale) return run_scale(flags);
    if (*regret) return run_regret(flags);
  } catch (const dvc::Error& e) {
    std::cerr << nlohmann::json{{"error", dvc::to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
    return dvc::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
