#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedil {

enum class Activation { kTanh, kRelu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Fully connected classifier: input -> hidden... -> num_classes, softmax output.
struct ModelArch {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 2;
  Activation activation = Activation::kTanh;

  /// Throws ConfigError when any width is zero or num_classes < 2.
  void validate() const;

  /// Widths of every layer including input and output.
  std::vector<std::size_t> layer_widths() const;

  /// Total number of parameters P. Layer l stores a row-major
  /// (out x in) weight matrix followed by its bias.
  std::size_t param_count() const;

  bool operator==(const ModelArch&) const = default;
};

/// Flattened model weights.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}

  std::size_t size() const noexcept { return values.size(); }
  bool all_finite() const noexcept;
  bool operator==(const ParamVector&) const = default;
};

struct GradVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  bool all_finite() const noexcept;
};

/// Length-C probability vector.
struct ProbDist {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  /// Lowest index among ties.
  std::size_t argmax() const;
  double max() const;
  /// Throws InputError unless entries lie in [0,1] and sum to 1 within tol.
  void validate(double tol = 1e-9) const;
};

/// Floor applied to probabilities inside every logarithm.
inline constexpr double kProbFloor = 1e-12;

/// One dense layer viewed inside a ParamVector.
struct LayerView {
  std::size_t in = 0;
  std::size_t out = 0;
  std::span<const double> weights;  // out * in, row-major
  std::span<const double> bias;     // out
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

std::vector<LayerView> layer_views(const ParamVector& params, const ModelArch& arch);
std::vector<DenseLayer> unflatten(const ParamVector& params, const ModelArch& arch);
ParamVector flatten(std::span<const DenseLayer> layers);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights, zero biases.
ParamVector init_params(const ModelArch& arch, std::uint64_t seed);

std::vector<double> softmax(std::span<const double> logits);

std::vector<double> forward_logits(const ParamVector& params, const ModelArch& arch,
                                   std::span<const double> x);
ProbDist forward(const ParamVector& params, const ModelArch& arch, std::span<const double> x);

double cross_entropy(const ProbDist& pred, std::size_t label);

/// KL(p || q) = sum_j p_j log(p_j / q_j), with 0 log 0 = 0.
double kl_divergence(const ProbDist& p, const ProbDist& q);

/// One summand of a training objective. The objective is
/// sum_k weight_k * term_k where a term is either the cross-entropy of
/// f(input) against a hard label or KL(reference || f(input)).
struct LossTerm {
  enum class Kind { kCrossEntropy, kKlDivergence };

  Kind kind = Kind::kCrossEntropy;
  std::span<const double> input;
  std::size_t label = 0;
  std::span<const double> reference;
  double weight = 1.0;

  static LossTerm ce(std::span<const double> x, std::size_t label, double weight) {
    return {Kind::kCrossEntropy, x, label, {}, weight};
  }
  static LossTerm kl(std::span<const double> x, std::span<const double> reference,
                     double weight) {
    return {Kind::kKlDivergence, x, 0, reference, weight};
  }
};

struct LossAndGrad {
  double loss = 0.0;
  GradVector grad;
};

/// Loss value of a weighted term list.
double evaluate_loss(const ParamVector& params, const ModelArch& arch,
                     std::span<const LossTerm> terms);

/// Exact gradient of the weighted loss; throws InputError on an empty batch.
LossAndGrad loss_and_gradient(const ParamVector& params, const ModelArch& arch,
                              std::span<const LossTerm> terms);

GradVector backward(const ParamVector& params, const ModelArch& arch,
                    std::span<const LossTerm> terms);

/// params - lr * grad. Throws TrainingError on a non-finite gradient.
ParamVector sgd_step(const ParamVector& params, const GradVector& grad, double lr);

/// In-place variant used inside training loops.
void sgd_step_inplace(ParamVector& params, const GradVector& grad, double lr);

}  // namespace fedil
