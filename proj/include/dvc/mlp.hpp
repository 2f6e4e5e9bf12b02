#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace dvc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { ReLU, Tanh };
enum class OutputKind { Softmax, Identity };

struct LossKind {
  enum class Type { CrossEntropy, MeanSquaredError, GaussianNll };

  Type type = Type::CrossEntropy;
  // Only read for GaussianNll: sigma^2 is clamped from below at this value.
  double variance_floor = 1e-6;

  static LossKind cross_entropy() { return {Type::CrossEntropy, 1e-6}; }
  static LossKind mse() { return {Type::MeanSquaredError, 1e-6}; }
  static LossKind gaussian_nll(double floor = 1e-6) { return {Type::GaussianNll, floor}; }

  bool is_classification() const noexcept { return type == Type::CrossEntropy; }
};

/// Class index for classification, real vector for the regression losses.
using Target = std::variant<std::size_t, Vector>;

std::uint64_t sample_digest(const Vector& x, const Target& y);

/// Dense feed-forward network. Layer l in [1, L] maps h_{l-1} to
/// h_l = f_l(W_l h_{l-1} + b_l); hidden layers use `hidden_activation`, the
/// last layer is either softmax or identity.
///
/// Every mutation of the parameters increments `version()`.
class MlpModel {
 public:
  MlpModel(std::vector<std::size_t> layer_dims, Activation hidden, OutputKind output,
           std::uint64_t seed);

  static MlpModel classifier(std::vector<std::size_t> layer_dims, std::uint64_t seed,
                             Activation hidden = Activation::ReLU) {
    return MlpModel(std::move(layer_dims), hidden, OutputKind::Softmax, seed);
  }

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t num_layers() const noexcept { return dims_.size() - 1; }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  Activation hidden_activation() const noexcept { return hidden_; }
  OutputKind output_kind() const noexcept { return output_; }

  /// `layer` is 1-based, in [1, L].
  const Matrix& weight(std::size_t layer) const { return weights_.at(layer - 1); }
  const Vector& bias(std::size_t layer) const { return biases_.at(layer - 1); }

  std::size_t parameter_count() const noexcept { return param_count_; }
  std::uint64_t version() const noexcept { return version_; }

  /// Flattened as [vec(W_1), b_1, vec(W_2), b_2, ...] with column-major vec().
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  /// theta <- theta - lr * grad. Increments the version even when lr == 0.
  void apply_gradient(const Vector& flat_grad, double lr);

 private:
  std::vector<std::size_t> dims_;
  Activation hidden_;
  OutputKind output_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  std::size_t param_count_ = 0;
  std::uint64_t version_ = 0;
};

struct ForwardTrace {
  /// h_0 (the input) through h_L (probabilities or raw outputs).
  std::vector<Vector> activations;
  double loss = 0.0;
  std::uint64_t model_version = 0;

  const Vector& output() const { return activations.back(); }
};

struct LayerGradients {
  /// dl/dh_l for l = 0..L-1.
  std::vector<Vector> hidden_grads;
  /// dl/dz_L, the gradient at the output pre-activation (logits).
  Vector output_grad;
  /// dl/dz_l for l = 1..L. Layer l's weight gradient is deltas[l-1] h_{l-1}^T.
  std::vector<Vector> deltas;
  Vector param_grad_flat;
  std::uint64_t model_version = 0;
};

ForwardTrace forward(const MlpModel& model, const Vector& x, const Target& y, const LossKind& loss);
LayerGradients backward(const MlpModel& model, const ForwardTrace& trace, const Target& y,
                        const LossKind& loss);

/// Loss obtained by injecting `h` as h_layer and running the remaining layers.
/// `layer` in [0, L-1].
double loss_from_layer(const MlpModel& model, std::size_t layer, const Vector& h, const Target& y,
                       const LossKind& loss);

struct BatchGradient {
  double mean_loss = 0.0;
  Vector mean_grad;
};

/// Mean loss and mean parameter gradient over the columns of `xs`.
BatchGradient batch_gradient(const MlpModel& model, const Matrix& xs, std::span<const Target> ys,
                             const LossKind& loss);

/// One mini-batch SGD update. On a non-finite gradient the model is left
/// untouched and a numerics error is thrown.
void sgd_step(MlpModel& model, const Matrix& xs, std::span<const Target> ys, double lr,
              const LossKind& loss);

/// Output layer activations for every column of `xs`.
Matrix predict(const MlpModel& model, const Matrix& xs);

double predict_entropy(const MlpModel& model, const Vector& x);

/// Arg-max class per column (ties resolve to the lowest index).
std::vector<std::size_t> predict_labels(const MlpModel& model, const Matrix& xs);
double accuracy(const MlpModel& model, const Matrix& xs, std::span<const std::size_t> labels);

/// Shannon entropy (nats) of a probability vector, entries clamped to [1e-12, 1].
double shannon_entropy(const Vector& p);

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

/// Mini-batch SGD over the columns of `xs`, reshuffled each epoch.
void train_classifier(MlpModel& model, const Matrix& xs, std::span<const std::size_t> labels,
                      const TrainOptions& options, std::mt19937_64& rng);

}  // namespace dvc
