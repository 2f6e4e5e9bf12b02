#include "dvc/config.hpp"

#include <fstream>
#include <set>

#include "dvc/error.hpp"

namespace dvc {
namespace {

using nlohmann::json;

// Reads known keys out of one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (!doc.is_object()) throw Error(ErrorKind::Config, "section '" + name_ + "' must be an object");
    doc_ = &doc;
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!doc_->contains(key)) return;
    try {
      out = (*doc_)[key].get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Config, name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return doc_->contains(key) ? &(*doc_)[key] : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : doc_->items()) {
      if (!seen_.contains(key)) throw Error(ErrorKind::Config, "unknown key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json* doc_;
  std::string name_;
  std::set<std::string> seen_;
};

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw Error(ErrorKind::Config, "unknown activation '" + s + "'");
}

std::string activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

QualityMode parse_quality(const std::string& s) {
  if (s == "literal") return QualityMode::Literal;
  if (s == "symmetric") return QualityMode::Symmetric;
  throw Error(ErrorKind::Config, "unknown quality mode '" + s + "'");
}

void parse_data(const json& doc, DataSpec& data) {
  Section s(doc, "data");
  s.read("path", data.path);
  SynthSpec& g = data.synth;
  s.read("classes", g.classes);
  s.read("dim", g.dim);
  s.read("train_size", g.train_size);
  s.read("val_size", g.val_size);
  s.read("test_size", g.test_size);
  s.read("clusters_per_class", g.clusters_per_class);
  s.read("separation", g.separation);
  s.read("cluster_std", g.cluster_std);
  s.read("seed", g.seed);
  if (const json* sources = s.child("sources")) {
    if (!sources->is_array()) throw Error(ErrorKind::Config, "data.sources must be an array");
    g.sources.clear();
    for (const auto& item : *sources) {
      Section src(item, "data.sources[]");
      CorruptionSpec c;
      src.read("flip_rate", c.flip_rate);
      src.read("feature_noise", c.feature_noise);
      src.read("duplication", c.duplication);
      src.finish();
      g.sources.push_back(c);
    }
  }
  TabularSchema& t = data.schema;
  s.read("label_column", t.label_column);
  s.read("source_column", t.source_column);
  s.read("split_column", t.split_column);
  s.read("num_sources", t.num_sources);
  s.read("val_fraction", t.val_fraction);
  s.read("test_fraction", t.test_fraction);
  s.read("standardize", t.standardize);
  t.seed = g.seed;
  s.finish();
}

void parse_model(const json& doc, ModelSpec& model) {
  Section s(doc, "model");
  s.read("hidden", model.hidden);
  std::string act = activation_name(model.activation);
  s.read("activation", act);
  model.activation = parse_activation(act);
  s.finish();
}

void parse_train(const json& doc, TrainOptions& t, const std::string& name) {
  Section s(doc, name);
  s.read("epochs", t.epochs);
  s.read("lr", t.lr);
  s.read("batch_size", t.batch_size);
  s.finish();
}

void parse_learner(const json& doc, WeightLearnerConfig& l) {
  Section s(doc, "learner");
  s.read("max_evaluations", l.max_evaluations);
  s.read("min_improvement", l.min_improvement);
  s.read("patience", l.patience);
  s.read("dirichlet_candidates", l.proposal.dirichlet_candidates);
  s.read("perturbations", l.proposal.perturbations);
  s.read("perturbation_sigma", l.proposal.perturbation_sigma);
  s.read("refine_rounds", l.proposal.refine_rounds);
  s.read("refine_samples", l.proposal.refine_samples);
  s.read("length_scale", l.gp.length_scale);
  s.read("signal_variance", l.gp.signal_variance);
  s.read("jitter", l.gp.jitter);
  s.finish();
}

void parse_selection(const json& doc, SelectionConfig& c) {
  Section s(doc, "selection");
  s.read("budget", c.budget);
  s.read("budget_fraction", c.budget_fraction);
  s.read("batch_size", c.batch_size);
  s.read("weight_update_every", c.weight_update_every);
  c.learner.update_every = c.weight_update_every;
  s.read("diversity_threshold", c.diversity_threshold);
  s.read("diversity_relaxation", c.diversity_relaxation);
  s.read("source_quota", c.source_quota);
  s.read("candidates_per_source", c.candidates_per_source);
  s.read("shortlist", c.shortlist);
  s.read("lr", c.lr);
  s.read("update_batch", c.update_batch);
  s.read("warm_epochs", c.warm_epochs);
  s.read("learn_weights", c.learn_weights);
  std::string variant = "full";
  s.read("variant", variant);
  c.mask = AblationMask::from_variant(variant);
  s.read("probe_epochs", c.probe.epochs);
  std::string quality = c.valuation.quality_mode == QualityMode::Literal ? "literal" : "symmetric";
  s.read("quality_mode", quality);
  c.valuation.quality_mode = parse_quality(quality);
  s.read("quality_sharpness", c.valuation.quality_sharpness);
  s.read("density_neighbors", c.valuation.density_neighbors);
  s.read("momentum_decay", c.stats.momentum_decay);
  s.read("lsh_tables", c.lsh_tables);
  s.read("lsh_bits", c.lsh_bits);
  s.read("lsh_bucket_cap", c.lsh_bucket_cap);
  s.read("cache_capacity", c.cache_capacity);
  s.read("exploration", c.exploration);
  s.read("seed", c.seed);
  s.read("audit_path", c.audit_path);
  if (const json* learner = s.child("learner")) parse_learner(*learner, c.learner);
  s.finish();
}

}  // namespace

AppConfig default_config() {
  AppConfig cfg;
  cfg.scaling.data = cfg.experiment.data;
  return cfg;
}

AppConfig parse_config(const json& doc) {
  AppConfig cfg = default_config();
  Section root(doc, "config");
  DataSpec data = cfg.experiment.data;
  ModelSpec model = cfg.experiment.model;
  TrainOptions train = cfg.experiment.final_train;
  SelectionConfig selection = cfg.experiment.selection;
  if (const json* d = root.child("data")) parse_data(*d, data);
  if (const json* m = root.child("model")) parse_model(*m, model);
  if (const json* t = root.child("train")) parse_train(*t, train, "train");
  if (const json* s = root.child("selection")) parse_selection(*s, selection);
  bool timings = false;
  root.read("record_timings", timings);

  cfg.experiment.data = cfg.scaling.data = data;
  cfg.experiment.model = cfg.scaling.model = model;
  cfg.experiment.final_train = cfg.scaling.final_train = train;
  cfg.experiment.selection = cfg.scaling.selection = selection;
  cfg.experiment.record_timings = timings;

  if (const json* e = root.child("experiment")) {
    Section s(*e, "experiment");
    s.read("budgets", cfg.experiment.budgets);
    s.read("methods", cfg.experiment.methods);
    s.read("variants", cfg.experiment.variants);
    s.read("seeds", cfg.experiment.seeds);
    s.finish();
  }
  if (const json* e = root.child("scaling")) {
    Section s(*e, "scaling");
    s.read("sizes", cfg.scaling.sizes);
    s.read("budget_fraction", cfg.scaling.budget_fraction);
    s.read("fixed_budget", cfg.scaling.fixed_budget);
    s.read("seed", cfg.scaling.seed);
    s.finish();
  }
  if (const json* e = root.child("regret")) {
    Section s(*e, "regret");
    s.read("means", cfg.regret.means);
    s.read("horizons", cfg.regret.horizons);
    s.read("seeds", cfg.regret.seeds);
    s.read("exploration", cfg.regret.exploration);
    s.finish();
  }
  root.finish();
  cfg.experiment.validate();
  cfg.experiment.data.synth.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path + ": " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const AppConfig& cfg) {
  const auto& e = cfg.experiment;
  const auto& g = e.data.synth;
  json sources = json::array();
  for (const auto& c : g.sources) {
    sources.push_back({{"flip_rate", c.flip_rate}, {"feature_noise", c.feature_noise}, {"duplication", c.duplication}});
  }
  const auto& s = e.selection;
  return {
      {"data",
       {{"path", e.data.path},
        {"classes", g.classes},
        {"dim", g.dim},
        {"train_size", g.train_size},
        {"val_size", g.val_size},
        {"test_size", g.test_size},
        {"clusters_per_class", g.clusters_per_class},
        {"separation", g.separation},
        {"cluster_std", g.cluster_std},
        {"seed", g.seed},
        {"sources", sources},
        {"num_sources", e.data.schema.num_sources},
        {"val_fraction", e.data.schema.val_fraction},
        {"test_fraction", e.data.schema.test_fraction}}},
      {"model", {{"hidden", e.model.hidden}, {"activation", activation_name(e.model.activation)}}},
      {"train", {{"epochs", e.final_train.epochs}, {"lr", e.final_train.lr}, {"batch_size", e.final_train.batch_size}}},
      {"selection",
       {{"budget", s.budget},
        {"budget_fraction", s.budget_fraction},
        {"batch_size", s.batch_size},
        {"weight_update_every", s.weight_update_every},
        {"diversity_threshold", s.diversity_threshold},
        {"diversity_relaxation", s.diversity_relaxation},
        {"source_quota", s.source_quota},
        {"candidates_per_source", s.candidates_per_source},
        {"shortlist", s.shortlist},
        {"lr", s.lr},
        {"update_batch", s.update_batch},
        {"warm_epochs", s.warm_epochs},
        {"learn_weights", s.learn_weights},
        {"probe_epochs", s.probe.epochs},
        {"lsh_tables", s.lsh_tables},
        {"lsh_bits", s.lsh_bits},
        {"lsh_bucket_cap", s.lsh_bucket_cap},
        {"seed", s.seed}}},
      {"experiment", {{"budgets", e.budgets}, {"methods", e.methods}, {"variants", e.variants}, {"seeds", e.seeds}}},
      {"scaling",
       {{"sizes", cfg.scaling.sizes},
        {"budget_fraction", cfg.scaling.budget_fraction},
        {"fixed_budget", cfg.scaling.fixed_budget},
        {"seed", cfg.scaling.seed}}},
      {"regret",
       {{"means", cfg.regret.means},
        {"horizons", cfg.regret.horizons},
        {"seeds", cfg.regret.seeds},
        {"exploration", cfg.regret.exploration}}},
      {"record_timings", e.record_timings}};
}

}  // namespace dvc
