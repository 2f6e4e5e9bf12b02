#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dvc/error.hpp"
#include "dvc/mlp.hpp"
#include "oracles.hpp"

using namespace dvc;

namespace {

Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& e : v) e = g(rng);
  return v;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected a dvc::Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("identity layer with zero residual has zero loss and zero gradients") {
  MlpModel m({2, 2}, Activation::ReLU, OutputKind::Identity, 1);
  Vector theta = Vector::Zero(6);
  theta[0] = 1.0;  // W column-major: W(0,0)
  theta[3] = 1.0;  // W(1,1)
  m.set_flat_parameters(theta);
  const Vector x = Vector::Unit(2, 0);
  const Target y = Vector(Vector::Unit(2, 0));
  const auto trace = forward(m, x, y, LossKind::mse());
  CHECK(trace.loss == 0.0);
  const auto g = backward(m, trace, y, LossKind::mse());
  CHECK(g.param_grad_flat.isZero(0.0));
  for (const auto& h : g.hidden_grads) CHECK(h.isZero(0.0));
}

TEST_CASE("all-zero logits give ln C cross-entropy for any label") {
  MlpModel m({3, 4}, Activation::ReLU, OutputKind::Softmax, 2);
  m.set_flat_parameters(Vector::Zero(static_cast<Eigen::Index>(m.parameter_count())));
  for (std::size_t label = 0; label < 4; ++label) {
    CHECK(forward(m, Vector::Ones(3), label, LossKind::cross_entropy()).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("forward loss matches a scalar re-implementation") {
  std::mt19937_64 rng(7);
  for (auto act : {Activation::ReLU, Activation::Tanh}) {
    MlpModel m({5, 7, 3}, act, OutputKind::Softmax, 11);
    const Vector x = random_vector(5, rng);
    for (std::size_t label = 0; label < 3; ++label) {
      const double got = forward(m, x, label, LossKind::cross_entropy()).loss;
      CHECK(std::abs(got - oracle::scalar_loss(m, x, label, LossKind::cross_entropy())) < 1e-12);
    }
    MlpModel r({5, 6, 4}, act, OutputKind::Identity, 12);
    const Target t = random_vector(2, rng);
    CHECK(std::abs(forward(r, x, t, LossKind::gaussian_nll()).loss -
                   oracle::scalar_loss(r, x, t, LossKind::gaussian_nll())) < 1e-12);
  }
}

TEST_CASE("trace shapes and softmax normalisation") {
  std::mt19937_64 rng(3);
  MlpModel m({6, 9, 5, 4}, Activation::ReLU, OutputKind::Softmax, 5);
  for (int i = 0; i < 20; ++i) {
    const auto trace = forward(m, random_vector(6, rng, 3.0), std::size_t{1}, LossKind::cross_entropy());
    REQUIRE(trace.activations.size() == 4);
    for (std::size_t l = 0; l < 4; ++l) CHECK(static_cast<std::size_t>(trace.activations[l].size()) == m.layer_dims()[l]);
    CHECK(std::abs(trace.output().sum() - 1.0) < 1e-9);
    CHECK(trace.output().minCoeff() >= 0.0);
    CHECK(trace.loss >= 0.0);
    const auto g = backward(m, trace, std::size_t{1}, LossKind::cross_entropy());
    CHECK(static_cast<std::size_t>(g.param_grad_flat.size()) == m.parameter_count());
    REQUIRE(g.hidden_grads.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(static_cast<std::size_t>(g.hidden_grads[l].size()) == m.layer_dims()[l]);
  }
}

TEST_CASE("weight shapes chain through the layers") {
  MlpModel m({4, 8, 3}, Activation::ReLU, OutputKind::Softmax, 0);
  CHECK(m.weight(1).rows() == 8);
  CHECK(m.weight(1).cols() == 4);
  CHECK(m.weight(2).rows() == 3);
  CHECK(m.weight(2).cols() == 8);
  CHECK(m.parameter_count() == 4 * 8 + 8 + 8 * 3 + 3);
}

TEST_CASE("parameter gradients match central finite differences") {
  std::mt19937_64 rng(21);
  const LossKind kinds[] = {LossKind::cross_entropy(), LossKind::mse(), LossKind::gaussian_nll()};
  for (const auto& loss : kinds) {
    for (int trial = 0; trial < 3; ++trial) {
      const bool cls = loss.is_classification();
      const std::size_t out = loss.type == LossKind::Type::GaussianNll ? 4 : 3;
      MlpModel m({4, 6, 5, out}, Activation::Tanh, cls ? OutputKind::Softmax : OutputKind::Identity,
                 100 + static_cast<std::uint64_t>(trial));
      const Vector x = random_vector(4, rng);
      const Target y = cls ? Target{std::size_t{static_cast<std::size_t>(trial) % 3}}
                           : Target{random_vector(loss.type == LossKind::Type::GaussianNll ? 2 : 3, rng)};
      const auto g = backward(m, forward(m, x, y, loss), y, loss);
      const Vector fd = oracle::fd_param_grad(m, x, y, loss);
      double worst = 0.0;
      for (Eigen::Index i = 0; i < fd.size(); ++i) worst = std::max(worst, oracle::relative_error(g.param_grad_flat[i], fd[i]));
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("hidden-state gradients match finite differences at every layer boundary") {
  std::mt19937_64 rng(22);
  MlpModel m({5, 7, 6, 3}, Activation::Tanh, OutputKind::Softmax, 9);
  const Vector x = random_vector(5, rng);
  const Target y = std::size_t{2};
  const auto trace = forward(m, x, y, LossKind::cross_entropy());
  const auto g = backward(m, trace, y, LossKind::cross_entropy());
  for (std::size_t l = 0; l < 3; ++l) {
    const Vector fd = oracle::fd_hidden_grad(m, l, trace.activations[l], y, LossKind::cross_entropy());
    for (Eigen::Index i = 0; i < fd.size(); ++i) CHECK(oracle::relative_error(g.hidden_grads[l][i], fd[i]) < 1e-4);
    CHECK(loss_from_layer(m, l, trace.activations[l], y, LossKind::cross_entropy()) ==
          doctest::Approx(trace.loss).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects a trace from another model version") {
  MlpModel m({3, 4, 2}, Activation::ReLU, OutputKind::Softmax, 1);
  const auto trace = forward(m, Vector::Ones(3), std::size_t{0}, LossKind::cross_entropy());
  m.apply_gradient(Vector::Zero(static_cast<Eigen::Index>(m.parameter_count())), 0.1);
  CHECK(kind_of([&] { backward(m, trace, std::size_t{0}, LossKind::cross_entropy()); }) == ErrorKind::Staleness);
}

TEST_CASE("forward validates shapes and inputs") {
  MlpModel m({3, 4, 2}, Activation::ReLU, OutputKind::Softmax, 1);
  CHECK(kind_of([&] { forward(m, Vector::Ones(2), std::size_t{0}, LossKind::cross_entropy()); }) == ErrorKind::Shape);
  Vector bad = Vector::Ones(3);
  bad[1] = std::nan("");
  CHECK(kind_of([&] { forward(m, bad, std::size_t{0}, LossKind::cross_entropy()); }) == ErrorKind::Input);
  CHECK(kind_of([&] { forward(m, Vector::Ones(3), std::size_t{2}, LossKind::cross_entropy()); }) == ErrorKind::Input);
  CHECK(kind_of([&] { forward(m, Vector::Ones(3), std::size_t{0}, LossKind::mse()); }) == ErrorKind::UnsupportedLoss);
  MlpModel odd({3, 3}, Activation::ReLU, OutputKind::Identity, 1);
  CHECK(kind_of([&] { forward(odd, Vector::Ones(3), Vector(Vector::Ones(1)), LossKind::gaussian_nll()); }) == ErrorKind::Shape);
}

TEST_CASE("sgd_step: zero learning rate, batch of one, and linearity of the mean step") {
  std::mt19937_64 rng(5);
  MlpModel m({4, 5, 3}, Activation::Tanh, OutputKind::Softmax, 4);
  const Vector start = m.flat_parameters();

  Matrix xs(4, 2);
  xs.col(0) = random_vector(4, rng);
  xs.col(1) = random_vector(4, rng);
  std::vector<Target> ys{std::size_t{0}, std::size_t{2}};

  const auto v0 = m.version();
  sgd_step(m, xs.leftCols(1), std::span(ys).first(1), 0.0, LossKind::cross_entropy());
  CHECK(m.version() == v0 + 1);
  CHECK(m.flat_parameters() == start);

  const double lr = 0.3;
  auto single = [&](int col) {
    MlpModel c = m;
    const auto g = backward(c, forward(c, xs.col(col), ys[static_cast<std::size_t>(col)], LossKind::cross_entropy()),
                            ys[static_cast<std::size_t>(col)], LossKind::cross_entropy());
    return g.param_grad_flat;
  };
  const Vector g0 = single(0), g1 = single(1);

  MlpModel one = m;
  sgd_step(one, xs.leftCols(1), std::span(ys).first(1), lr, LossKind::cross_entropy());
  CHECK((one.flat_parameters() - (start - lr * g0)).lpNorm<Eigen::Infinity>() < 1e-14);

  MlpModel two = m;
  sgd_step(two, xs, ys, lr, LossKind::cross_entropy());
  const Vector averaged = 0.5 * ((start - lr * g0) + (start - lr * g1));
  CHECK((two.flat_parameters() - averaged).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK(two.version() == m.version() + 1);
}

TEST_CASE("sgd_step aborts on a non-finite gradient without touching the model") {
  MlpModel m({2, 2}, Activation::ReLU, OutputKind::Identity, 3);
  Vector theta = m.flat_parameters();
  theta.fill(1e200);
  m.set_flat_parameters(theta);
  const auto version = m.version();
  Matrix xs = Matrix::Constant(2, 1, 1e200);
  std::vector<Target> ys{Vector(Vector::Zero(2))};
  CHECK(kind_of([&] { sgd_step(m, xs, ys, 0.1, LossKind::mse()); }) == ErrorKind::Numerics);
  CHECK(m.flat_parameters() == theta);
  CHECK(m.version() == version);
}

TEST_CASE("version increases strictly over a sequence of updates") {
  std::mt19937_64 rng(8);
  MlpModel m({3, 4, 2}, Activation::ReLU, OutputKind::Softmax, 2);
  std::vector<Target> ys{std::size_t{1}};
  auto last = m.version();
  for (int i = 0; i < 25; ++i) {
    Matrix xs = random_vector(3, rng);
    sgd_step(m, xs, ys, 0.05, LossKind::cross_entropy());
    CHECK(m.version() > last);
    last = m.version();
  }
}

TEST_CASE("prediction entropy bounds and hand-computed values") {
  CHECK(shannon_entropy(Vector::Constant(10, 0.1)) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(shannon_entropy(Vector::Unit(4, 2)) < 1e-9);
  Vector half(4);
  half << 0.5, 0.5, 0.0, 0.0;
  CHECK(shannon_entropy(half) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  MlpModel uniform({3, 10}, Activation::ReLU, OutputKind::Softmax, 1);
  uniform.set_flat_parameters(Vector::Zero(static_cast<Eigen::Index>(uniform.parameter_count())));
  CHECK(predict_entropy(uniform, Vector::Ones(3)) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  std::mt19937_64 rng(1);
  MlpModel m({3, 8, 5}, Activation::ReLU, OutputKind::Softmax, 6);
  for (int i = 0; i < 50; ++i) {
    const double h = predict_entropy(m, random_vector(3, rng, 4.0));
    CHECK(h >= 0.0);
    CHECK(h <= std::log(5.0) + 1e-12);
  }
  MlpModel reg({3, 2}, Activation::ReLU, OutputKind::Identity, 1);
  CHECK(kind_of([&] { predict_entropy(reg, Vector::Ones(3)); }) == ErrorKind::UnsupportedLoss);
}

TEST_CASE("forward is deterministic for identical inputs") {
  std::mt19937_64 rng(4);
  MlpModel m({6, 10, 4}, Activation::ReLU, OutputKind::Softmax, 13);
  const Vector x = random_vector(6, rng);
  const auto a = forward(m, x, std::size_t{3}, LossKind::cross_entropy());
  const auto b = forward(m, x, std::size_t{3}, LossKind::cross_entropy());
  CHECK(a.loss == b.loss);
  for (std::size_t l = 0; l < a.activations.size(); ++l) CHECK(a.activations[l] == b.activations[l]);
}

TEST_CASE("predict_labels breaks ties toward the lower class and accuracy counts matches") {
  MlpModel m({2, 3}, Activation::ReLU, OutputKind::Softmax, 1);
  m.set_flat_parameters(Vector::Zero(static_cast<Eigen::Index>(m.parameter_count())));
  Matrix xs = Matrix::Ones(2, 4);
  const auto labels = predict_labels(m, xs);
  for (auto l : labels) CHECK(l == 0);
  const std::vector<std::size_t> truth{0, 1, 0, 2};
  CHECK(accuracy(m, xs, truth) == doctest::Approx(0.5));
  CHECK(kind_of([&] { accuracy(m, xs, std::vector<std::size_t>{0}); }) == ErrorKind::Input);
}

TEST_CASE("training reduces the loss on a separable toy problem") {
  std::mt19937_64 rng(10);
  Matrix xs(2, 200);
  std::vector<std::size_t> ys(200);
  for (int i = 0; i < 200; ++i) {
    ys[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i % 2);
    xs.col(i) = random_vector(2, rng, 0.3);
    xs(0, i) += i % 2 ? 2.0 : -2.0;
  }
  MlpModel m = MlpModel::classifier({2, 8, 2}, 3);
  train_classifier(m, xs, ys, {20, 0.1, 16}, rng);
  CHECK(accuracy(m, xs, ys) > 0.97);
}
