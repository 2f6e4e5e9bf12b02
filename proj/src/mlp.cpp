#include "dvc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dvc/digest.hpp"
#include "dvc/error.hpp"

namespace dvc {
namespace {

constexpr double kProbFloor = 1e-12;

std::string dims_message(const char* what, std::size_t got, std::size_t want) {
  return std::string(what) + ": got " + std::to_string(got) + ", expected " + std::to_string(want);
}

void apply_hidden(Activation act, Eigen::Ref<Matrix> z) {
  if (act == Activation::ReLU) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// Derivative of the hidden activation expressed through its output.
Matrix hidden_derivative(Activation act, const Matrix& h) {
  if (act == Activation::ReLU) return (h.array() > 0.0).cast<double>().matrix();
  return (1.0 - h.array().square()).matrix();
}

void softmax_columns(Eigen::Ref<Matrix> z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    const double m = col.maxCoeff();
    col = (col.array() - m).exp().matrix();
    col /= col.sum();
  }
}

void check_model_loss(const MlpModel& model, const LossKind& loss) {
  if (loss.is_classification() != (model.output_kind() == OutputKind::Softmax)) {
    throw Error(ErrorKind::UnsupportedLoss,
                "loss kind does not match the model output layer (softmax <-> cross-entropy)");
  }
  if (loss.type == LossKind::Type::GaussianNll && model.output_dim() % 2 != 0) {
    throw Error(ErrorKind::Shape, "gaussian NLL needs an even output dimension (mean, log-variance)");
  }
}

void check_target(const MlpModel& model, const Target& y, const LossKind& loss) {
  if (loss.is_classification()) {
    const auto* label = std::get_if<std::size_t>(&y);
    if (!label) throw Error(ErrorKind::Input, "cross-entropy needs a class index target");
    if (*label >= model.output_dim()) {
      throw Error(ErrorKind::Input, "class index " + std::to_string(*label) + " out of range");
    }
    return;
  }
  const auto* v = std::get_if<Vector>(&y);
  if (!v) throw Error(ErrorKind::Input, "regression loss needs a real-vector target");
  const std::size_t want =
      loss.type == LossKind::Type::GaussianNll ? model.output_dim() / 2 : model.output_dim();
  if (static_cast<std::size_t>(v->size()) != want) {
    throw Error(ErrorKind::Shape, dims_message("target dimension", v->size(), want));
  }
  if (!v->allFinite()) throw Error(ErrorKind::Input, "non-finite target");
}

void check_input(const MlpModel& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim()) {
    throw Error(ErrorKind::Shape, dims_message("input dimension", x.size(), model.input_dim()));
  }
  if (!x.allFinite()) throw Error(ErrorKind::Input, "non-finite input");
}

// Loss and dl/dz_L for one output column.
double output_loss_and_grad(const LossKind& loss, const Eigen::Ref<const Vector>& out,
                            const Target& y, Vector* grad) {
  switch (loss.type) {
    case LossKind::Type::CrossEntropy: {
      const std::size_t label = std::get<std::size_t>(y);
      if (grad) {
        *grad = out;
        (*grad)[static_cast<Eigen::Index>(label)] -= 1.0;
      }
      return -std::log(std::clamp(out[static_cast<Eigen::Index>(label)], kProbFloor, 1.0));
    }
    case LossKind::Type::MeanSquaredError: {
      const Vector& target = std::get<Vector>(y);
      const Vector diff = out - target;
      if (grad) *grad = diff;
      return 0.5 * diff.squaredNorm();
    }
    case LossKind::Type::GaussianNll: {
      const Vector& target = std::get<Vector>(y);
      const Eigen::Index m = target.size();
      double value = 0.0;
      if (grad) grad->resize(2 * m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const double mean = out[j];
        const double log_var = out[m + j];
        double var = std::exp(log_var);
        const bool floored = !(var >= loss.variance_floor);
        if (floored) var = loss.variance_floor;
        const double r = target[j] - mean;
        value += 0.5 * (r * r / var + std::log(var));
        if (grad) {
          (*grad)[j] = -r / var;
          (*grad)[m + j] = floored ? 0.0 : 0.5 * (1.0 - r * r / var);
        }
      }
      return value;
    }
  }
  return 0.0;
}

// Runs layers [first + 1, L] starting from `h`, which plays the role of h_first.
void propagate(const MlpModel& model, std::size_t first, std::vector<Vector>& acts) {
  const std::size_t layers = model.num_layers();
  for (std::size_t l = first + 1; l <= layers; ++l) {
    Vector z = model.weight(l) * acts[l - 1] + model.bias(l);
    if (l < layers) {
      apply_hidden(model.hidden_activation(), z);
    } else if (model.output_kind() == OutputKind::Softmax) {
      softmax_columns(z);
    }
    acts[l] = std::move(z);
  }
}

}  // namespace

std::uint64_t sample_digest(const Vector& x, const Target& y) {
  Digest d;
  d.vec(x);
  if (const auto* label = std::get_if<std::size_t>(&y)) {
    d.u64(0).u64(*label);
  } else {
    d.u64(1).vec(std::get<Vector>(y));
  }
  return d.value();
}

MlpModel::MlpModel(std::vector<std::size_t> layer_dims, Activation hidden, OutputKind output,
                   std::uint64_t seed)
    : dims_(std::move(layer_dims)), hidden_(hidden), output_(output) {
  if (dims_.size() < 2) throw Error(ErrorKind::Config, "an MLP needs at least input and output dims");
  for (std::size_t d : dims_) {
    if (d == 0) throw Error(ErrorKind::Config, "layer dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  const std::size_t layers = dims_.size() - 1;
  for (std::size_t l = 1; l <= layers; ++l) {
    const auto fan_in = static_cast<double>(dims_[l - 1]);
    // He-uniform in front of ReLU units, LeCun-uniform otherwise.
    const bool feeds_relu = l < layers && hidden_ == Activation::ReLU;
    const double a = std::sqrt((feeds_relu ? 6.0 : 3.0) / fan_in);
    std::uniform_real_distribution<double> dist(-a, a);
    Matrix w(dims_[l], dims_[l - 1]);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Vector::Zero(static_cast<Eigen::Index>(dims_[l])));
    param_count_ += dims_[l] * dims_[l - 1] + dims_[l];
  }
}

Vector MlpModel::flat_parameters() const {
  Vector flat(static_cast<Eigen::Index>(param_count_));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    flat.segment(off, w.size()) = w.reshaped();
    off += w.size();
    flat.segment(off, biases_[l].size()) = biases_[l];
    off += biases_[l].size();
  }
  return flat;
}

void MlpModel::set_flat_parameters(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != param_count_) {
    throw Error(ErrorKind::Shape, dims_message("parameter vector", flat.size(), param_count_));
  }
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    w.reshaped() = flat.segment(off, w.size());
    off += w.size();
    biases_[l] = flat.segment(off, biases_[l].size());
    off += biases_[l].size();
  }
  ++version_;
}

void MlpModel::apply_gradient(const Vector& flat_grad, double lr) {
  if (static_cast<std::size_t>(flat_grad.size()) != param_count_) {
    throw Error(ErrorKind::Shape, dims_message("gradient vector", flat_grad.size(), param_count_));
  }
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    w.reshaped() -= lr * flat_grad.segment(off, w.size());
    off += w.size();
    biases_[l] -= lr * flat_grad.segment(off, biases_[l].size());
    off += biases_[l].size();
  }
  ++version_;
}

ForwardTrace forward(const MlpModel& model, const Vector& x, const Target& y, const LossKind& loss) {
  check_model_loss(model, loss);
  check_input(model, x);
  check_target(model, y, loss);

  ForwardTrace trace;
  trace.model_version = model.version();
  trace.activations.resize(model.num_layers() + 1);
  trace.activations[0] = x;
  propagate(model, 0, trace.activations);
  trace.loss = output_loss_and_grad(loss, trace.activations.back(), y, nullptr);
  return trace;
}

LayerGradients backward(const MlpModel& model, const ForwardTrace& trace, const Target& y,
                        const LossKind& loss) {
  if (trace.model_version != model.version()) {
    throw Error(ErrorKind::Staleness, "forward trace was computed under model version " +
                                          std::to_string(trace.model_version) + ", model is at " +
                                          std::to_string(model.version()));
  }
  if (trace.activations.size() != model.num_layers() + 1) {
    throw Error(ErrorKind::Shape, "forward trace does not match the model depth");
  }
  check_model_loss(model, loss);
  check_target(model, y, loss);

  const std::size_t layers = model.num_layers();
  LayerGradients out;
  out.model_version = model.version();
  out.hidden_grads.resize(layers);
  out.deltas.resize(layers);
  out.param_grad_flat.resize(static_cast<Eigen::Index>(model.parameter_count()));

  // Parameter offsets of each layer inside the flat vector.
  std::vector<Eigen::Index> offsets(layers + 1, 0);
  for (std::size_t l = 1; l <= layers; ++l) {
    offsets[l] = offsets[l - 1] + model.weight(l).size() + model.bias(l).size();
  }

  Vector delta;
  output_loss_and_grad(loss, trace.activations.back(), y, &delta);
  out.output_grad = delta;
  for (std::size_t l = layers; l >= 1; --l) {
    const Vector& h_prev = trace.activations[l - 1];
    const Matrix& w = model.weight(l);
    const Eigen::Index off = offsets[l - 1];
    out.param_grad_flat.segment(off, w.size()).reshaped(w.rows(), w.cols()) =
        delta * h_prev.transpose();
    out.param_grad_flat.segment(off + w.size(), delta.size()) = delta;
    out.deltas[l - 1] = delta;
    Vector grad_h = w.transpose() * delta;
    if (l > 1) {
      delta = grad_h.cwiseProduct(hidden_derivative(model.hidden_activation(), h_prev));
    }
    out.hidden_grads[l - 1] = std::move(grad_h);
  }
  return out;
}

double loss_from_layer(const MlpModel& model, std::size_t layer, const Vector& h, const Target& y,
                       const LossKind& loss) {
  if (layer >= model.num_layers()) throw Error(ErrorKind::Shape, "layer index out of range");
  if (static_cast<std::size_t>(h.size()) != model.layer_dims()[layer]) {
    throw Error(ErrorKind::Shape, dims_message("layer width", h.size(), model.layer_dims()[layer]));
  }
  check_model_loss(model, loss);
  check_target(model, y, loss);
  std::vector<Vector> acts(model.num_layers() + 1);
  acts[layer] = h;
  propagate(model, layer, acts);
  return output_loss_and_grad(loss, acts.back(), y, nullptr);
}

namespace {

std::vector<Matrix> forward_batch(const MlpModel& model, const Matrix& xs) {
  const std::size_t layers = model.num_layers();
  std::vector<Matrix> acts(layers + 1);
  acts[0] = xs;
  for (std::size_t l = 1; l <= layers; ++l) {
    Matrix z = model.weight(l) * acts[l - 1];
    z.colwise() += model.bias(l);
    if (l < layers) {
      apply_hidden(model.hidden_activation(), z);
    } else if (model.output_kind() == OutputKind::Softmax) {
      softmax_columns(z);
    }
    acts[l] = std::move(z);
  }
  return acts;
}

}  // namespace

BatchGradient batch_gradient(const MlpModel& model, const Matrix& xs, std::span<const Target> ys,
                             const LossKind& loss) {
  check_model_loss(model, loss);
  if (xs.cols() == 0 || static_cast<std::size_t>(xs.cols()) != ys.size()) {
    throw Error(ErrorKind::Input, "batch must be non-empty with one target per column");
  }
  if (static_cast<std::size_t>(xs.rows()) != model.input_dim()) {
    throw Error(ErrorKind::Shape, dims_message("input dimension", xs.rows(), model.input_dim()));
  }
  if (!xs.allFinite()) throw Error(ErrorKind::Input, "non-finite input");
  for (const Target& y : ys) check_target(model, y, loss);

  const std::size_t layers = model.num_layers();
  const auto acts = forward_batch(model, xs);
  const auto n = static_cast<double>(xs.cols());

  BatchGradient result;
  Matrix delta(acts.back().rows(), xs.cols());
  Vector col_grad;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    result.mean_loss += output_loss_and_grad(loss, acts.back().col(j), ys[j], &col_grad);
    delta.col(j) = col_grad / n;
  }
  result.mean_loss /= n;

  result.mean_grad.resize(static_cast<Eigen::Index>(model.parameter_count()));
  std::vector<Eigen::Index> offsets(layers + 1, 0);
  for (std::size_t l = 1; l <= layers; ++l) {
    offsets[l] = offsets[l - 1] + model.weight(l).size() + model.bias(l).size();
  }
  for (std::size_t l = layers; l >= 1; --l) {
    const Matrix& w = model.weight(l);
    const Eigen::Index off = offsets[l - 1];
    result.mean_grad.segment(off, w.size()).reshaped(w.rows(), w.cols()) =
        delta * acts[l - 1].transpose();
    result.mean_grad.segment(off + w.size(), w.rows()) = delta.rowwise().sum();
    if (l > 1) {
      Matrix grad_h = w.transpose() * delta;
      delta = grad_h.cwiseProduct(hidden_derivative(model.hidden_activation(), acts[l - 1]));
    }
  }
  return result;
}

void sgd_step(MlpModel& model, const Matrix& xs, std::span<const Target> ys, double lr,
              const LossKind& loss) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::Config, "learning rate must be >= 0");
  const BatchGradient g = batch_gradient(model, xs, ys, loss);
  if (!g.mean_grad.allFinite()) {
    throw Error(ErrorKind::Numerics, "non-finite gradient; SGD step aborted");
  }
  model.apply_gradient(g.mean_grad, lr);
}

Matrix predict(const MlpModel& model, const Matrix& xs) {
  if (static_cast<std::size_t>(xs.rows()) != model.input_dim()) {
    throw Error(ErrorKind::Shape, dims_message("input dimension", xs.rows(), model.input_dim()));
  }
  return forward_batch(model, xs).back();
}

double shannon_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbFloor, 1.0);
    h -= q * std::log(q);
  }
  return std::max(h, 0.0);
}

double predict_entropy(const MlpModel& model, const Vector& x) {
  if (model.output_kind() != OutputKind::Softmax) {
    throw Error(ErrorKind::UnsupportedLoss, "prediction entropy needs a softmax classifier");
  }
  check_input(model, x);
  std::vector<Vector> acts(model.num_layers() + 1);
  acts[0] = x;
  propagate(model, 0, acts);
  return shannon_entropy(acts.back());
}

std::vector<std::size_t> predict_labels(const MlpModel& model, const Matrix& xs) {
  const Matrix out = predict(model, xs);
  std::vector<std::size_t> labels(static_cast<std::size_t>(out.cols()));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    Eigen::Index best = 0;
    out.col(j).maxCoeff(&best);
    labels[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
  }
  return labels;
}

double accuracy(const MlpModel& model, const Matrix& xs, std::span<const std::size_t> labels) {
  if (static_cast<std::size_t>(xs.cols()) != labels.size()) {
    throw Error(ErrorKind::Input, "one label per column required");
  }
  if (labels.empty()) return 0.0;
  const auto predicted = predict_labels(model, xs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

void train_classifier(MlpModel& model, const Matrix& xs, std::span<const std::size_t> labels,
                      const TrainOptions& options, std::mt19937_64& rng) {
  if (xs.cols() == 0) return;
  if (static_cast<std::size_t>(xs.cols()) != labels.size()) {
    throw Error(ErrorKind::Input, "one label per column required");
  }
  const auto n = static_cast<std::size_t>(xs.cols());
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const LossKind ce = LossKind::cross_entropy();
  Matrix bx;
  std::vector<Target> by;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      bx.resize(xs.rows(), static_cast<Eigen::Index>(end - start));
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.col(static_cast<Eigen::Index>(i - start)) = xs.col(static_cast<Eigen::Index>(order[i]));
        by.emplace_back(labels[order[i]]);
      }
      sgd_step(model, bx, by, options.lr, ce);
    }
  }
}

}  // namespace dvc
