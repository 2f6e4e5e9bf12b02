#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/LU>

#include "doctest.h"
#include "dvc/error.hpp"
#include "dvc/weight_learner.hpp"

using namespace dvc;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  std::copy(xs.begin(), xs.end(), v.data());
  return v;
}

// Projection by bisection on the threshold tau in sum(max(v - tau, 0)) = 1.
Vector bisection_projection(const Vector& v) {
  double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    ((v.array() - mid).cwiseMax(0.0).sum() > 1.0 ? lo : hi) = mid;
  }
  return (v.array() - 0.5 * (lo + hi)).cwiseMax(0.0).matrix();
}

// Textbook GP posterior mean with an explicit inverse.
double textbook_mean(const std::vector<double>& xs, const std::vector<double>& ys, double x, double ell,
                     double sf2, double jitter) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Matrix K(n, n);
  Vector k(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(j)];
      K(i, j) = sf2 * std::exp(-d * d / (2 * ell * ell)) + (i == j ? jitter : 0.0);
    }
    const double d = x - xs[static_cast<std::size_t>(i)];
    k[i] = sf2 * std::exp(-d * d / (2 * ell * ell));
    y[i] = ys[static_cast<std::size_t>(i)];
  }
  return k.dot(K.fullPivLu().solve(y));
}

void check_simplex(const MetricWeights& w) {
  auto check = [](auto begin, auto end) {
    double s = 0.0;
    for (auto it = begin; it != end; ++it) {
      CHECK(*it >= -1e-9);
      s += *it;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  };
  std::vector<double> outer = w.layer;
  outer.push_back(w.global);
  check(outer.begin(), outer.end());
  check(w.layer_metric.begin(), w.layer_metric.end());
  check(w.global_metric.begin(), w.global_metric.end());
}

}  // namespace

TEST_CASE("simplex projection hand examples") {
  const Vector on = vec({0.2, 0.3, 0.5});
  CHECK((project_to_simplex(on) - on).norm() < 1e-15);
  CHECK((project_to_simplex(vec({2.0, 0.0})) - vec({1.0, 0.0})).norm() < 1e-15);
  CHECK((project_to_simplex(vec({0.5, 0.5, 0.5})) - Vector::Constant(3, 1.0 / 3.0)).norm() < 1e-15);
  CHECK_THROWS_AS(project_to_simplex(Vector()), Error);
}

TEST_CASE("simplex projection agrees with a bisection oracle and is idempotent") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    Vector v(2 + trial % 6);
    for (auto& x : v) x = g(rng);
    const Vector p = project_to_simplex(v);
    CHECK((p - bisection_projection(v)).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK((project_to_simplex(p) - p).norm() < 1e-12);
  }
}

TEST_CASE("masked projection pins disabled coordinates to zero") {
  MetricWeights w = MetricWeights::uniform(2);
  w.layer_metric = {0.7, 0.7, 0.7};
  const auto mask = AblationMask::from_variant("no_relevance");
  const auto p = project_weights(w, mask);
  CHECK(p.layer_metric[1] == 0.0);
  CHECK(p.layer_metric[0] == doctest::Approx(0.5));
  check_simplex(p);
  const auto glob = project_weights(MetricWeights::uniform(2), AblationMask::from_variant("global_only"));
  CHECK(glob.global == doctest::Approx(1.0));
}

TEST_CASE("GP interpolates observations and reverts to the prior far away") {
  GpSurrogate gp;
  const std::vector<Vector> xs{vec({0.0, 0.0}), vec({0.5, 0.1}), vec({0.2, 0.9})};
  const std::vector<double> ys{0.3, -0.2, 0.8};
  gp.fit(xs, ys);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = gp.predict(xs[i]);
    CHECK(std::abs(p.mean - ys[i]) < 1e-4);
    CHECK(p.variance < 1e-4);
    CHECK(p.variance >= 0.0);
  }
  const auto far = gp.predict(vec({50.0, -40.0}));
  CHECK(std::abs(far.mean) < 1e-12);
  CHECK(far.variance == doctest::Approx(1.0));
}

TEST_CASE("GP posterior mean matches a textbook implementation") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x1;
  std::vector<Vector> xs;
  std::vector<double> ys;
  for (int i = 0; i < 20; ++i) {
    const double x = u(rng);
    x1.push_back(x);
    xs.push_back(vec({x}));
    ys.push_back(std::sin(3.0 * x) + 0.1 * x * x);
  }
  GpParams params;
  params.length_scale = 0.4;
  params.jitter = 1e-3;  // keeps the explicit inverse well conditioned
  GpSurrogate gp(params);
  gp.fit(xs, ys);
  REQUIRE(gp.effective_jitter() == params.jitter);
  for (double x = -2.5; x <= 2.5; x += 0.1) {
    CHECK(std::abs(gp.predict(vec({x})).mean - textbook_mean(x1, ys, x, 0.4, 1.0, 1e-3)) < 1e-8);
  }
}

TEST_CASE("GP variance shrinks as observations pile up at the query point") {
  std::vector<Vector> xs{vec({0.0})};
  std::vector<double> ys{0.0};
  const Vector q = vec({0.3});
  double last = 2.0;
  for (int i = 0; i < 5; ++i) {
    GpSurrogate gp;
    gp.fit(xs, ys);
    const double v = gp.predict(q).variance;
    CHECK(v <= last + 1e-9);
    last = v;
    xs.push_back(q);
    ys.push_back(0.1);
  }
}

TEST_CASE("GP fit errors") {
  GpSurrogate gp;
  CHECK_THROWS_AS(gp.fit({}, {}), Error);
  CHECK_THROWS_AS(gp.fit({vec({1.0})}, {1.0, 2.0}), Error);
  try {
    gp.fit({vec({std::nan("")}), vec({1.0})}, {0.0, 1.0});
    FAIL("non-finite kernel accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numerics);
  }
}

TEST_CASE("expected improvement closed forms") {
  CHECK(expected_improvement(0.5, 0.0, 0.5) == 0.0);
  CHECK(expected_improvement(0.5, 1.0, 0.5) == doctest::Approx(0.3989422804).epsilon(1e-9));
  CHECK(expected_improvement(1.5, 1e-9, 0.5) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(expected_improvement(0.2, 0.0, 0.5) == 0.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) CHECK(expected_improvement(g(rng), std::abs(g(rng)), g(rng)) >= 0.0);
}

TEST_CASE("proposals: exploration after one observation, incumbent on all-zero EI") {
  std::mt19937_64 rng(4);
  const MetricWeights start = MetricWeights::uniform(2);
  GpSurrogate gp;
  gp.fit({start.flatten()}, {0.0});
  const auto p = propose_weights(gp, start, 0.0, {}, {}, rng);
  CHECK(p.expected_improvement > 0.0);
  CHECK((p.weights.flatten() - start.flatten()).norm() > 1e-6);
  check_simplex(p.weights);

  const auto stuck = propose_weights(gp, start, 1e9, {}, {}, rng);
  CHECK(stuck.expected_improvement == 0.0);
  CHECK(stuck.weights.flatten() == start.flatten());
}

TEST_CASE("every emitted weight vector lies on the simplices, with and without masks") {
  for (const char* variant : {"full", "no_quality", "no_stability", "layer_only", "global_only"}) {
    const auto mask = AblationMask::from_variant(variant);
    WeightLearnerConfig cfg;
    cfg.max_evaluations = 12;
    cfg.patience = 100;
    WeightLearner learner(3, cfg, mask);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    check_simplex(learner.current());
    for (int i = 0; i < 12; ++i) {
      learner.observe(static_cast<std::size_t>(i), u(rng), rng);
      check_simplex(learner.current());
      // A disabled metric carries zero effective weight: either its own
      // coordinate or its whole group's outer weight is zero.
      const auto& w = learner.current();
      const double layer_total = std::accumulate(w.layer.begin(), w.layer.end(), 0.0);
      for (std::size_t m = 0; m < kMetricCount; ++m) {
        if (!mask.disabled[m]) continue;
        const double effective = m < 3 ? layer_total * w.layer_metric[m] : w.global * w.global_metric[m - 3];
        CHECK(effective == 0.0);
      }
    }
  }
}

TEST_CASE("update gate fires only on multiples of the period") {
  WeightLearnerConfig cfg;
  cfg.update_every = 5;
  WeightLearner learner(2, cfg);
  for (std::size_t r = 1; r <= 30; ++r) CHECK(learner.due(r) == (r % 5 == 0));
}

TEST_CASE("convergence after the evaluation budget or a stale patience window") {
  std::mt19937_64 rng(6);
  WeightLearnerConfig budget;
  budget.max_evaluations = 4;
  budget.patience = 100;
  WeightLearner a(2, budget);
  for (int i = 0; i < 4; ++i) {
    CHECK_FALSE(a.converged());
    a.observe(static_cast<std::size_t>(i), 0.1 * i, rng);
  }
  CHECK(a.converged());
  CHECK_FALSE(a.due(5));
  CHECK(a.current().flatten() == a.best_weights().flatten());

  WeightLearnerConfig flat;
  flat.patience = 3;
  flat.min_improvement = 0.002;
  WeightLearner b(2, flat);
  b.observe(0, 0.5, rng);
  b.observe(1, 0.501, rng);
  b.observe(2, 0.5005, rng);
  CHECK_FALSE(b.converged());
  b.observe(3, 0.4, rng);
  CHECK(b.converged());
  CHECK(b.best_performance() == 0.501);
  CHECK_THROWS_AS(b.observe(4, std::nan(""), rng), Error);
}

TEST_CASE("BO loop closes in on the optimum of a quadratic over the simplices") {
  MetricWeights target;
  target.layer = {0.15, 0.35};
  target.global = 0.5;
  target.layer_metric = {0.2, 0.5, 0.3};
  target.global_metric = {0.6, 0.1, 0.3};
  const Vector t = target.flatten();
  WeightLearnerConfig cfg;
  cfg.max_evaluations = 30;
  cfg.patience = 30;
  cfg.min_improvement = 0.0;
  int close = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WeightLearner learner(2, cfg);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < 30; ++i) {
      learner.observe(i, -(learner.current().flatten() - t).squaredNorm(), rng);
    }
    close += (learner.best_weights().flatten() - t).lpNorm<1>() <= 0.1;
  }
  CHECK(close >= 4);
}

TEST_CASE("probe performance: memorisable subset, chance level, determinism, empty inputs") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  Matrix sx(6, 10);
  std::vector<std::size_t> sy(10);
  for (int i = 0; i < 10; ++i) {
    for (int r = 0; r < 6; ++r) sx(r, i) = g(rng);
    sy[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i % 2);
  }
  ProbeConfig probe{{6, 16, 2}, Activation::ReLU, {200, 0.1, 10}, 3};
  CHECK(evaluate_performance(sx, sy, sx, sy, probe) >= 0.9);
  CHECK(evaluate_performance(sx, sy, sx, sy, probe) == evaluate_performance(sx, sy, sx, sy, probe));

  // No signal in the features, four balanced classes, no training.
  Matrix vx(6, 4000);
  std::vector<std::size_t> vy(4000);
  for (int i = 0; i < 4000; ++i) {
    for (int r = 0; r < 6; ++r) vx(r, i) = g(rng);
    vy[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i % 4);
  }
  ProbeConfig untrained{{6, 16, 4}, Activation::ReLU, {0, 0.1, 10}, 3};
  Matrix one = vx.leftCols(1);
  const double acc = evaluate_performance(one, std::span(vy).first(1), vx, vy, untrained);
  CHECK(std::abs(acc - 0.25) < 0.05);

  try {
    evaluate_performance(Matrix(6, 0), {}, vx, vy, probe);
    FAIL("empty subset accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  CHECK_THROWS_AS(evaluate_performance(sx, sy, Matrix(6, 0), {}, probe), Error);
}
