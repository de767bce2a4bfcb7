#include "fedil/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedil/errors.hpp"
#include "fedil/rng.hpp"

namespace fedil {

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + name + "' (expected tanh or relu)");
}

void ModelArch::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden layer width must be positive");
  }
}

std::vector<std::size_t> ModelArch::layer_widths() const {
  std::vector<std::size_t> w;
  w.reserve(hidden_dims.size() + 2);
  w.push_back(input_dim);
  w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
  w.push_back(num_classes);
  return w;
}

std::size_t ModelArch::param_count() const {
  const auto w = layer_widths();
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) p += w[l + 1] * w[l] + w[l + 1];
  return p;
}

namespace {

bool finite_all(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_params(const ParamVector& params, const ModelArch& arch) {
  if (params.size() != arch.param_count()) {
    std::ostringstream msg;
    msg << "parameter vector has length " << params.size() << ", architecture needs "
        << arch.param_count();
    throw ConfigError(msg.str());
  }
}

void check_input(std::span<const double> x, const ModelArch& arch) {
  if (x.size() != arch.input_dim) {
    std::ostringstream msg;
    msg << "input has dimension " << x.size() << ", model expects " << arch.input_dim;
    throw ConfigError(msg.str());
  }
}

double activate(Activation a, double z) {
  return a == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the pre-activation z and activation value y.
double activate_grad(Activation a, double z, double y) {
  return a == Activation::kTanh ? 1.0 - y * y : (z > 0.0 ? 1.0 : 0.0);
}

// Forward pass that keeps pre-activations and activations of every layer.
struct Tape {
  std::vector<std::vector<double>> pre;   // per layer output, before activation
  std::vector<std::vector<double>> post;  // post[0] = input, post[l+1] = act(pre[l])
};

void dense(const LayerView& layer, std::span<const double> in, std::vector<double>& out) {
  out.assign(layer.out, 0.0);
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* w = layer.weights.data() + o * layer.in;
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

void run_forward(const std::vector<LayerView>& layers, Activation act,
                 std::span<const double> x, Tape& tape) {
  const std::size_t n = layers.size();
  tape.pre.resize(n);
  tape.post.resize(n + 1);
  tape.post[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < n; ++l) {
    dense(layers[l], tape.post[l], tape.pre[l]);
    if (l + 1 < n) {
      tape.post[l + 1].resize(tape.pre[l].size());
      for (std::size_t k = 0; k < tape.pre[l].size(); ++k) {
        tape.post[l + 1][k] = activate(act, tape.pre[l][k]);
      }
    } else {
      tape.post[l + 1] = softmax(tape.pre[l]);
    }
  }
}

double term_loss(const LossTerm& term, const std::vector<double>& probs) {
  if (term.kind == LossTerm::Kind::kCrossEntropy) {
    return -std::log(std::max(probs[term.label], kProbFloor));
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double p = term.reference[j];
    if (p > 0.0) kl += p * (std::log(std::max(p, kProbFloor)) - std::log(std::max(probs[j], kProbFloor)));
  }
  return std::max(kl, 0.0);
}

void check_term(const LossTerm& term, const ModelArch& arch) {
  check_input(term.input, arch);
  if (term.kind == LossTerm::Kind::kCrossEntropy) {
    if (term.label >= arch.num_classes) {
      throw InputError("label " + std::to_string(term.label) + " out of range for " +
                       std::to_string(arch.num_classes) + " classes");
    }
  } else if (term.reference.size() != arch.num_classes) {
    throw InputError("KL reference distribution has wrong length");
  }
}

}  // namespace

bool ParamVector::all_finite() const noexcept { return finite_all(values); }
bool GradVector::all_finite() const noexcept { return finite_all(values); }

std::size_t ProbDist::argmax() const {
  if (probs.empty()) throw InputError("argmax of an empty distribution");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double ProbDist::max() const {
  if (probs.empty()) throw InputError("max of an empty distribution");
  return *std::max_element(probs.begin(), probs.end());
}

void ProbDist::validate(double tol) const {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol) throw InputError("probabilities do not sum to 1");
}

std::vector<LayerView> layer_views(const ParamVector& params, const ModelArch& arch) {
  check_params(params, arch);
  const auto w = arch.layer_widths();
  std::vector<LayerView> views;
  views.reserve(w.size() - 1);
  std::size_t offset = 0;
  const std::span<const double> all(params.values);
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    LayerView v;
    v.in = w[l];
    v.out = w[l + 1];
    v.weights = all.subspan(offset, v.in * v.out);
    offset += v.in * v.out;
    v.bias = all.subspan(offset, v.out);
    offset += v.out;
    views.push_back(v);
  }
  return views;
}

std::vector<DenseLayer> unflatten(const ParamVector& params, const ModelArch& arch) {
  std::vector<DenseLayer> layers;
  for (const LayerView& v : layer_views(params, arch)) {
    layers.push_back({v.in, v.out, {v.weights.begin(), v.weights.end()},
                      {v.bias.begin(), v.bias.end()}});
  }
  return layers;
}

ParamVector flatten(std::span<const DenseLayer> layers) {
  ParamVector out;
  for (const DenseLayer& l : layers) {
    if (l.weights.size() != l.in * l.out || l.bias.size() != l.out) {
      throw ConfigError("dense layer storage does not match its shape");
    }
    out.values.insert(out.values.end(), l.weights.begin(), l.weights.end());
    out.values.insert(out.values.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

ParamVector init_params(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, {tag(Stream::kInit)}));
  ParamVector params;
  params.values.reserve(arch.param_count());
  const auto w = arch.layer_widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double a = 1.0 / std::sqrt(static_cast<double>(w[l]));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t k = 0; k < w[l] * w[l + 1]; ++k) params.values.push_back(dist(rng));
    params.values.insert(params.values.end(), w[l + 1], 0.0);
  }
  return params;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - m);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> forward_logits(const ParamVector& params, const ModelArch& arch,
                                   std::span<const double> x) {
  check_input(x, arch);
  const auto layers = layer_views(params, arch);
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    dense(layers[l], cur, next);
    if (l + 1 < layers.size()) {
      for (double& z : next) z = activate(arch.activation, z);
    }
    cur.swap(next);
  }
  return cur;
}

ProbDist forward(const ParamVector& params, const ModelArch& arch, std::span<const double> x) {
  return ProbDist{softmax(forward_logits(params, arch, x))};
}

double cross_entropy(const ProbDist& pred, std::size_t label) {
  if (label >= pred.size()) {
    throw InputError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(pred.size()) + " classes");
  }
  return -std::log(std::max(pred.probs[label], kProbFloor));
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) throw InputError("KL divergence of distributions of different length");
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p.probs[j] > 0.0) {
      kl += p.probs[j] *
            (std::log(std::max(p.probs[j], kProbFloor)) - std::log(std::max(q.probs[j], kProbFloor)));
    }
  }
  return std::max(kl, 0.0);
}

double evaluate_loss(const ParamVector& params, const ModelArch& arch,
                     std::span<const LossTerm> terms) {
  const auto layers = layer_views(params, arch);
  Tape tape;
  double loss = 0.0;
  for (const LossTerm& term : terms) {
    check_term(term, arch);
    if (term.weight == 0.0) continue;
    run_forward(layers, arch.activation, term.input, tape);
    loss += term.weight * term_loss(term, tape.post.back());
  }
  return loss;
}

LossAndGrad loss_and_gradient(const ParamVector& params, const ModelArch& arch,
                              std::span<const LossTerm> terms) {
  if (terms.empty()) throw InputError("backward called on an empty batch");
  const auto layers = layer_views(params, arch);
  const std::size_t n_layers = layers.size();

  // Offsets of each layer's weight and bias blocks inside the flat gradient.
  std::vector<std::size_t> w_off(n_layers), b_off(n_layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    w_off[l] = offset;
    offset += layers[l].in * layers[l].out;
    b_off[l] = offset;
    offset += layers[l].out;
  }

  LossAndGrad result;
  result.grad.values.assign(params.size(), 0.0);
  double* g = result.grad.values.data();

  Tape tape;
  std::vector<double> delta, delta_prev;
  for (const LossTerm& term : terms) {
    check_term(term, arch);
    if (term.weight == 0.0) continue;
    run_forward(layers, arch.activation, term.input, tape);
    const std::vector<double>& probs = tape.post.back();
    result.loss += term.weight * term_loss(term, probs);

    // dLoss/dlogits: weight * (q - target), target one-hot or reference.
    delta.assign(probs.begin(), probs.end());
    if (term.kind == LossTerm::Kind::kCrossEntropy) {
      delta[term.label] -= 1.0;
    } else {
      for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= term.reference[j];
    }
    for (double& d : delta) d *= term.weight;

    for (std::size_t l = n_layers; l-- > 0;) {
      const LayerView& layer = layers[l];
      const std::vector<double>& a_in = tape.post[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* gw = g + w_off[l] + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += d * a_in[i];
        g[b_off[l] + o] += d;
      }
      if (l == 0) break;
      delta_prev.assign(layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* w = layer.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) delta_prev[i] += w[i] * d;
      }
      for (std::size_t i = 0; i < layer.in; ++i) {
        delta_prev[i] *= activate_grad(arch.activation, tape.pre[l - 1][i], a_in[i]);
      }
      delta.swap(delta_prev);
    }
  }
  return result;
}

GradVector backward(const ParamVector& params, const ModelArch& arch,
                    std::span<const LossTerm> terms) {
  return loss_and_gradient(params, arch, terms).grad;
}

void sgd_step_inplace(ParamVector& params, const GradVector& grad, double lr) {
  if (params.size() != grad.size()) throw InputError("gradient length does not match parameters");
  if (!grad.all_finite()) throw TrainingError("non-finite gradient");
  for (std::size_t k = 0; k < params.size(); ++k) params.values[k] -= lr * grad.values[k];
}

ParamVector sgd_step(const ParamVector& params, const GradVector& grad, double lr) {
  ParamVector out = params;
  sgd_step_inplace(out, grad, lr);
  return out;
}

}  // namespace fedil
