#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dvc/error.hpp"
#include "dvc/value_metrics.hpp"

using namespace dvc;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  std::copy(xs.begin(), xs.end(), v.data());
  return v;
}

// Two-layer shaped gradients where every tracked gradient equals `g`.
LayerGradients grads_of(const Vector& g) {
  LayerGradients out;
  out.hidden_grads = {Vector::Zero(1), g};
  out.output_grad = g;
  out.param_grad_flat = g;
  return out;
}

GradientMomentum momentum_of(const Vector& g) {
  GradientMomentum m(0.9);
  m.update(grads_of(g));
  return m;
}

ForwardTrace trace_with(std::size_t layer_width, const Vector& h1) {
  ForwardTrace t;
  t.activations = {Vector::Zero(static_cast<Eigen::Index>(layer_width)), h1, Vector::Constant(2, 0.5)};
  return t;
}

MetricWeights random_weights(std::size_t layers, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  auto draw = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = gamma(rng);
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= s;
    return v;
  };
  MetricWeights w;
  auto outer = draw(layers + 1);
  w.layer.assign(outer.begin(), outer.end() - 1);
  w.global = outer.back();
  auto a = draw(3), b = draw(3);
  std::copy(a.begin(), a.end(), w.layer_metric.begin());
  std::copy(b.begin(), b.end(), w.global_metric.begin());
  return w;
}

NormalizedMetrics random_normalized(std::size_t layers, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NormalizedMetrics n;
  for (std::size_t l = 0; l < layers; ++l) {
    n.quality.push_back(u(rng));
    n.relevance.push_back(u(rng));
    n.diversity.push_back(u(rng));
  }
  n.gradient_impact = u(rng);
  n.uncertainty = u(rng);
  n.stability = u(rng);
  return n;
}

}  // namespace

TEST_CASE("quality is a sigmoid of the norm ratio") {
  OnlineStats stats({2, 3, 2});
  ForwardTrace ref = trace_with(2, vec({3.0, 0.0, 4.0}));  // norm 5
  LayerGradients g;
  g.hidden_grads = {Vector::Zero(2), Vector::Zero(3)};
  g.output_grad = Vector::Zero(2);
  g.param_grad_flat = Vector::Zero(1);
  CHECK(quality(ref, stats, 1) == 0.5);  // cold start
  stats.update(ref, g);
  CHECK(quality(ref, stats, 1) == doctest::Approx(0.5));
  CHECK(quality(trace_with(2, vec({6.0, 0.0, 8.0})), stats, 1) == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(quality(trace_with(2, vec({0.0, 0.0, 0.0})), stats, 1) == doctest::Approx(0.2689414214).epsilon(1e-9));
  CHECK(quality(trace_with(2, vec({6.0, 0.0, 8.0})), stats, 1, QualityMode::Symmetric) ==
        doctest::Approx(0.2689414214).epsilon(1e-9));
}

TEST_CASE("relevance is the cosine with the layer momentum") {
  const Vector m = vec({1.0, 2.0, -0.5});
  const auto mom = momentum_of(m);
  CHECK(relevance(grads_of(m), mom, 1) == doctest::Approx(1.0));
  CHECK(relevance(grads_of(-m), mom, 1) == doctest::Approx(-1.0));
  CHECK(relevance(grads_of(vec({0.0, 1.0})), momentum_of(vec({1.0, 0.0})), 1) == doctest::Approx(0.0));
  CHECK(relevance(grads_of(Vector::Zero(3)), mom, 2) == 0.0);
  CHECK(relevance(grads_of(m), GradientMomentum(0.9), 1) == 0.0);
}

TEST_CASE("gradient impact is norm times cosine with the average gradient") {
  const Vector avg = vec({0.0, 2.0});
  const auto mom = momentum_of(avg);
  CHECK(gradient_impact(grads_of(avg), mom) == doctest::Approx(2.0));
  CHECK(gradient_impact(grads_of(vec({3.0, 0.0})), mom) == doctest::Approx(0.0));
  CHECK(gradient_impact(grads_of(-0.5 * avg), mom) == doctest::Approx(-1.0));
  CHECK(gradient_impact(grads_of(Vector::Zero(2)), mom) == 0.0);
  CHECK(gradient_impact(grads_of(avg), GradientMomentum(0.9)) == 0.0);
}

TEST_CASE("factored gradient impact agrees with the flat inner product") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<std::size_t> dims{5, 7 + seed, 6, 3};
    const MlpModel m(dims, seed % 2 ? Activation::Tanh : Activation::ReLU, OutputKind::Softmax, seed);
    GradientMomentum mom(0.9);
    auto grads_at = [&](std::size_t label) {
      Vector x(5);
      for (auto& v : x) v = g(rng);
      const auto t = forward(m, x, label, LossKind::cross_entropy());
      return std::make_pair(t, backward(m, t, label, LossKind::cross_entropy()));
    };
    for (std::size_t i = 0; i < 4; ++i) mom.update(grads_at(i % 3).second);
    const auto [trace, grads] = grads_at(1);
    // Oracle: the defining inner product over the flat parameter vector.
    const double flat = grads.param_grad_flat.dot(mom.flat()) / mom.flat().norm();
    CHECK(gradient_impact(m, trace, grads, mom) == doctest::Approx(flat).epsilon(1e-12));
    CHECK(gradient_impact(grads, mom) == doctest::Approx(flat).epsilon(1e-12));
  }
}

TEST_CASE("diversity from the truncated kernel density") {
  LshIndex idx({3, 4, 8, 1});
  const ForwardTrace t = trace_with(2, vec({1.0, 2.0, 3.0}));
  CHECK(diversity(t, idx, 1, 1.0, 0) == doctest::Approx(-std::log(1e-12)));
  idx.insert(0, vec({1.0, 2.0, 3.0}));
  CHECK(diversity(t, idx, 1, 1.0, 1) == doctest::Approx(0.0));
  idx.insert(1, vec({100.0, -50.0, 30.0}));
  CHECK(diversity(t, idx, 1, 1.0, 2) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("conditional uncertainty closed forms and scale invariance") {
  MlpModel m({3, 4, 5, 6}, Activation::ReLU, OutputKind::Softmax, 1);
  const MetricWeights w = MetricWeights::uniform(3);
  ForwardTrace t;
  t.activations = {Vector::Ones(3), Vector::Constant(4, 0.7), Vector::Constant(5, 2.0), Vector::Constant(6, 1.0 / 6.0)};
  const double expected = std::log(6.0) + w.layer[0] * std::log(4.0) + w.layer[1] * std::log(5.0) + w.layer[2] * std::log(6.0);
  CHECK(conditional_uncertainty(m, t, w) == doctest::Approx(expected).epsilon(1e-9));

  ForwardTrace peaked;
  peaked.activations = {Vector::Ones(3), Vector::Unit(4, 1), Vector::Unit(5, 0), Vector::Unit(6, 2)};
  CHECK(conditional_uncertainty(m, peaked, w) < 1e-6);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  ForwardTrace r = t;
  for (auto& v : r.activations[1]) v = u(rng);
  for (auto& v : r.activations[2]) v = u(rng);
  ForwardTrace doubled = r;
  doubled.activations[1] *= 2.0;
  doubled.activations[2] *= 2.0;
  CHECK(conditional_uncertainty(m, doubled, w) == doctest::Approx(conditional_uncertainty(m, r, w)).epsilon(1e-9));
}

TEST_CASE("training stability endpoints") {
  LossHistory h(8);
  CHECK(training_stability(h, 1) == 1.0);
  for (std::uint64_t v = 1; v <= 4; ++v) h.record(1, v, 0.3);
  CHECK(training_stability(h, 1) == doctest::Approx(1.0));
  h.record(2, 1, 0.0);
  h.record(2, 2, 5.0);
  CHECK(training_stability(h, 2) == doctest::Approx(0.0).epsilon(1e-9));
  h.record(3, 1, 0.0);
  h.record(3, 2, 1.0);
  CHECK(training_stability(h, 3) == doctest::Approx(1.0 - 0.25 / 6.25));
}

TEST_CASE("compose_dvc hand examples") {
  MetricWeights w;
  w.layer = {0.5, 0.3};
  w.global = 0.2;
  w.layer_metric = {1.0, 0.0, 0.0};
  w.global_metric = {1.0, 0.0, 0.0};
  NormalizedMetrics n;
  n.quality = {0.8, 0.6};
  n.relevance = {0.0, 0.0};
  n.diversity = {0.0, 0.0};
  n.gradient_impact = 0.5;
  const auto out = compose_dvc(n, w);
  CHECK(out.lvc[0] == doctest::Approx(0.8));
  CHECK(out.lvc[1] == doctest::Approx(0.6));
  CHECK(out.gvc == doctest::Approx(0.5));
  CHECK(out.dvc == doctest::Approx(0.68));

  std::mt19937_64 rng(1);
  NormalizedMetrics ones = random_normalized(2, rng);
  std::fill(ones.quality.begin(), ones.quality.end(), 1.0);
  std::fill(ones.relevance.begin(), ones.relevance.end(), 1.0);
  std::fill(ones.diversity.begin(), ones.diversity.end(), 1.0);
  ones.gradient_impact = ones.uncertainty = ones.stability = 1.0;
  for (int i = 0; i < 20; ++i) CHECK(compose_dvc(ones, random_weights(2, rng)).dvc == doctest::Approx(1.0));

  MetricWeights global = random_weights(2, rng);
  global.layer = {0.0, 0.0};
  global.global = 1.0;
  const auto g = compose_dvc(n, global);
  CHECK(g.dvc == g.gvc);
}

TEST_CASE("compose_dvc rejects weights off the simplex") {
  MetricWeights w = MetricWeights::uniform(2);
  w.layer[0] += 0.1;
  NormalizedMetrics n;
  n.quality = n.relevance = n.diversity = {0.5, 0.5};
  try {
    compose_dvc(n, w);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  MetricWeights neg = MetricWeights::uniform(2);
  neg.global_metric = {1.2, -0.2, 0.0};
  CHECK_THROWS_AS(compose_dvc(n, neg), Error);
}

TEST_CASE("DVC is bounded by its smallest and largest normalised component") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t layers = 1 + static_cast<std::size_t>(trial % 4);
    const auto n = random_normalized(layers, rng);
    const auto w = random_weights(layers, rng);
    std::vector<double> all;
    for (std::size_t l = 0; l < layers; ++l) all.insert(all.end(), {n.quality[l], n.relevance[l], n.diversity[l]});
    all.insert(all.end(), {n.gradient_impact, n.uncertainty, n.stability});
    const double d = compose_dvc(n, w).dvc;
    CHECK(d >= *std::min_element(all.begin(), all.end()) - 1e-12);
    CHECK(d <= *std::max_element(all.begin(), all.end()) + 1e-12);
  }
}

TEST_CASE("normaliser squashes into [0, 1] and ignores positive rescaling of gradient impact") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  const std::size_t layers = 2;
  std::vector<RawMetrics> raws;
  for (int i = 0; i < 60; ++i) {
    RawMetrics r;
    for (std::size_t l = 0; l < layers; ++l) {
      r.quality.push_back(sigmoid(g(rng)));
      r.relevance.push_back(std::tanh(g(rng)));
      r.diversity.push_back(std::abs(g(rng)) * 5.0);
    }
    r.gradient_impact = g(rng) * 3.0;
    r.uncertainty = std::abs(g(rng));
    r.stability = sigmoid(g(rng));
    raws.push_back(r);
  }
  auto ranking = [&](double scale) {
    MetricNormalizer norm(layers);
    std::vector<RawMetrics> scaled = raws;
    for (auto& r : scaled) {
      r.gradient_impact *= scale;
      norm.observe(r);
    }
    const MetricWeights w = MetricWeights::uniform(layers);
    std::vector<std::pair<double, int>> v;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      const auto n = norm.normalize(scaled[i]);
      for (double x : {n.gradient_impact, n.uncertainty, n.stability}) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
      }
      v.emplace_back(-compose_dvc(n, w).dvc, static_cast<int>(i));
    }
    std::sort(v.begin(), v.end());
    std::vector<int> order;
    for (auto& p : v) order.push_back(p.second);
    return order;
  };
  const auto base = ranking(1.0);
  CHECK(ranking(7.5) == base);
  CHECK(ranking(0.01) == base);
}

TEST_CASE("an unwarmed normaliser maps everything to 0.5") {
  MetricNormalizer norm(1);
  RawMetrics r;
  r.quality = {0.9};
  r.relevance = {-0.4};
  r.diversity = {12.0};
  const auto n = norm.normalize(r);
  CHECK(n.quality[0] == 0.5);
  CHECK(n.gradient_impact == 0.5);
}

TEST_CASE("a disabled metric has no influence on DVC") {
  std::mt19937_64 rng(5);
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    AblationMask mask;
    mask.disabled[m] = true;
    const MetricWeights w = MetricWeights::uniform(3, mask);
    w.validate();
    for (int trial = 0; trial < 20; ++trial) {
      NormalizedMetrics a = random_normalized(3, rng);
      NormalizedMetrics b = a;
      std::uniform_real_distribution<double> u(0.0, 1.0);
      switch (static_cast<Metric>(m)) {
        case Metric::Quality: for (auto& x : b.quality) x = u(rng); break;
        case Metric::Relevance: for (auto& x : b.relevance) x = u(rng); break;
        case Metric::Diversity: for (auto& x : b.diversity) x = u(rng); break;
        case Metric::GradientImpact: b.gradient_impact = u(rng); break;
        case Metric::Uncertainty: b.uncertainty = u(rng); break;
        case Metric::Stability: b.stability = u(rng); break;
      }
      CHECK(compose_dvc(a, w).dvc == compose_dvc(b, w).dvc);
    }
  }
}

TEST_CASE("ablation variants parse and unknown names are configuration errors") {
  CHECK(AblationMask::from_variant("no_stability").disabled[5]);
  const auto layer_only = AblationMask::from_variant("layer_only");
  CHECK_FALSE(layer_only.any_global_metric());
  CHECK(layer_only.any_layer_metric());
  CHECK_FALSE(AblationMask::from_variant("global_only").any_layer_metric());
  CHECK_THROWS_AS(AblationMask::from_variant("no_such_metric"), Error);
  AblationMask all;
  all.disabled.fill(true);
  CHECK_THROWS_AS(MetricWeights::uniform(2, all), Error);
}

TEST_CASE("flatten and unflatten round-trip") {
  std::mt19937_64 rng(6);
  const auto w = random_weights(3, rng);
  const auto back = MetricWeights::unflatten(w.flatten(), 3);
  CHECK(back.flatten() == w.flatten());
  CHECK_THROWS_AS(MetricWeights::unflatten(Vector::Zero(4), 3), Error);
}

TEST_CASE("raw metrics from a live model: bounds and duplicate penalty") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  MlpModel model({5, 8, 6, 3}, Activation::ReLU, OutputKind::Softmax, 3);
  OnlineStats stats(model.layer_dims());
  std::vector<LshIndex> indices;
  for (std::size_t l = 1; l <= 3; ++l) indices.emplace_back(LshParams{model.layer_dims()[l], 6, 8, l});
  LossHistory history;
  const MetricWeights w = MetricWeights::uniform(3);
  GradCache cache;
  std::vector<Vector> xs;
  for (int i = 0; i < 40; ++i) {
    Vector x(5);
    for (auto& v : x) v = g(rng);
    xs.push_back(x);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    const auto e = cache.get_or_compute(model, xs[i], i % 3, LossKind::cross_entropy());
    stats.update(e->trace, e->grads);
    for (std::size_t l = 1; l <= 3; ++l) indices[l - 1].insert(i, e->trace.activations[l]);
  }
  ValuationContext ctx{&model, &stats, &indices, &history, &w, 20, {}};
  for (std::size_t i = 0; i < 40; ++i) {
    const auto e = cache.get_or_compute(model, xs[i], i % 3, LossKind::cross_entropy());
    const auto raw = compute_raw_metrics(ctx, *e, sample_digest(xs[i], i % 3));
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(raw.quality[l] > 0.0);
      CHECK(raw.quality[l] < 1.0);
      CHECK(std::abs(raw.relevance[l]) <= 1.0);
      CHECK(raw.diversity[l] >= 0.0);
      // Indexed samples are exact duplicates of themselves. A single stored
      // copy among 20 seen gives density >= 1/20.
      if (i < 20) CHECK(raw.diversity[l] <= std::log(20.0) + 1e-9);
    }
    CHECK(raw.uncertainty >= 0.0);
    CHECK(raw.stability >= 0.0);
    CHECK(raw.stability <= 1.0);
  }
}

TEST_CASE("exact duplicate of the only seen sample scores zero diversity at every layer") {
  MlpModel model({4, 6, 3}, Activation::Tanh, OutputKind::Softmax, 8);
  std::vector<LshIndex> indices;
  for (std::size_t l = 1; l <= 2; ++l) indices.emplace_back(LshParams{model.layer_dims()[l], 6, 8, l});
  const Vector x = Vector::LinSpaced(4, -1.0, 1.0);
  const auto t = forward(model, x, std::size_t{1}, LossKind::cross_entropy());
  for (std::size_t l = 1; l <= 2; ++l) indices[l - 1].insert(0, t.activations[l]);
  for (std::size_t l = 1; l <= 2; ++l) CHECK(diversity(t, indices[l - 1], l, 0.5, 1) == 0.0);
}
