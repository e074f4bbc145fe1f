#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ace/errors.hpp"
#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

enum class Activation { relu, identity };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::relu;
  // Dropout applied to this layer's activated output.
  double dropout_rate = 0.0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Builds the spec list for an MLP `in -> hidden... -> out` with ReLU hidden
// layers and an identity output layer.
inline std::vector<LayerSpec> mlp_specs(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                                        std::size_t out_dim, double dropout_rate = 0.0) {
  std::vector<LayerSpec> specs;
  std::size_t prev = in_dim;
  for (std::size_t h : hidden) {
    specs.push_back({prev, h, Activation::relu, dropout_rate});
    prev = h;
  }
  specs.push_back({prev, out_dim, Activation::identity, 0.0});
  return specs;
}

inline void validate_specs(const std::vector<LayerSpec>& specs, bool classifier) {
  if (specs.empty()) throw ConfigError("layer stack is empty");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.in_dim == 0 || s.out_dim == 0) {
      throw ConfigError("layer " + std::to_string(i) + " has a zero dimension");
    }
    if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0)) {
      throw ConfigError("layer " + std::to_string(i) + " dropout rate must lie in [0,1)");
    }
    if (i > 0 && specs[i - 1].out_dim != s.in_dim) {
      throw ConfigError("layer " + std::to_string(i) + " input dimension " +
                        std::to_string(s.in_dim) + " does not chain with previous output " +
                        std::to_string(specs[i - 1].out_dim));
    }
  }
  if (classifier) {
    const auto& last = specs.back();
    if (last.activation != Activation::identity || last.dropout_rate != 0.0) {
      throw ConfigError("final classifier layer must be identity (logits) without dropout");
    }
  }
}

struct Dense {
  LayerSpec spec;
  std::vector<double> weights;  // out_dim x in_dim, row-major
  std::vector<double> bias;     // out_dim

  explicit Dense(LayerSpec s = {})
      : spec(s), weights(s.in_dim * s.out_dim, 0.0), bias(s.out_dim, 0.0) {}

  double& w(std::size_t row, std::size_t col) { return weights[row * spec.in_dim + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * spec.in_dim + col]; }

  friend bool operator==(const Dense&, const Dense&) = default;
};

/// Feed-forward layer stack. Used both as a plain classifier (final layer
/// emits logits) and as a building block (backbone, heads) of SelNet.
struct Network {
  std::vector<Dense> layers;
  std::size_t class_count = 0;
  // Provenance only: the seed the parameters were initialised/trained from.
  std::uint64_t seed = 0;

  Network() = default;

  explicit Network(const std::vector<LayerSpec>& specs, bool classifier = true) {
    validate_specs(specs, classifier);
    for (const auto& s : specs) layers.emplace_back(s);
    class_count = classifier ? specs.back().out_dim : 0;
  }

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().spec.in_dim; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().spec.out_dim; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers) out.push_back(l.spec);
    return out;
  }

  bool has_dropout() const {
    return std::any_of(layers.begin(), layers.end(),
                       [](const Dense& l) { return l.spec.dropout_rate > 0.0; });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

// Zero-filled copy with identical topology, used as a gradient accumulator.
inline Network zeros_like(const Network& net) {
  Network z;
  z.class_count = net.class_count;
  for (const auto& l : net.layers) z.layers.emplace_back(l.spec);
  return z;
}

// Uniform fan-based initialisation in [-a, a], a = sqrt(6 / (in + out)); zero biases.
inline Network init_network(const std::vector<LayerSpec>& specs, Rng& rng, bool classifier = true) {
  Network net(specs, classifier);
  for (auto& layer : net.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(layer.spec.in_dim + layer.spec.out_dim));
    for (double& w : layer.weights) w = rng.uniform(-a, a);
  }
  return net;
}

/// Everything needed to backpropagate through one forward pass, including the
/// dropout masks that were sampled (mask entries are 0 or 1/keep_probability).
struct ForwardTrace {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;    // per layer, before activation
  std::vector<std::vector<double>> post;   // per layer, after activation and mask
  std::vector<std::vector<double>> masks;  // per layer; empty when no dropout applied
  Tensor logits;                           // copy of post.back()

  bool has_masks() const {
    return std::any_of(masks.begin(), masks.end(), [](const auto& m) { return !m.empty(); });
  }
};

namespace detail {

inline void check_input(const Network& net, std::span<const double> x) {
  if (net.layers.empty()) throw ConfigError("network has no layers");
  if (x.size() != net.input_dim()) {
    throw DimensionError("input has " + std::to_string(x.size()) + " features, network expects " +
                         std::to_string(net.input_dim()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("non-finite input feature");
  }
}

inline void dense_apply(const Dense& layer, std::span<const double> in, std::vector<double>& out) {
  const std::size_t rows = layer.spec.out_dim;
  const std::size_t cols = layer.spec.in_dim;
  out.resize(rows);
  const double* w = layer.weights.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = layer.bias[r];
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * in[c];
    out[r] = acc;
  }
}

// `masks` supplies pre-drawn masks (replay); otherwise masks are drawn from rng
// when dropout is enabled.
inline ForwardTrace forward_impl(const Network& net, std::span<const double> x,
                                 bool dropout_enabled, Rng* rng,
                                 const std::vector<std::vector<double>>* replay_masks) {
  check_input(net, x);
  ForwardTrace t;
  t.input.assign(x.begin(), x.end());
  const std::size_t n_layers = net.layers.size();
  t.pre.resize(n_layers);
  t.post.resize(n_layers);
  t.masks.resize(n_layers);
  if (replay_masks && replay_masks->size() != n_layers) {
    throw DimensionError("replayed trace has a different layer count");
  }
  std::span<const double> current = t.input;
  for (std::size_t li = 0; li < n_layers; ++li) {
    const Dense& layer = net.layers[li];
    dense_apply(layer, current, t.pre[li]);
    auto& post = t.post[li];
    post = t.pre[li];
    if (layer.spec.activation == Activation::relu) {
      for (double& v : post) v = v > 0.0 ? v : 0.0;
    }
    auto& mask = t.masks[li];
    if (replay_masks) {
      mask = (*replay_masks)[li];
      if (!mask.empty() && mask.size() != post.size()) {
        throw DimensionError("replayed mask has wrong width at layer " + std::to_string(li));
      }
    } else if (dropout_enabled && layer.spec.dropout_rate > 0.0) {
      if (rng == nullptr) throw ConfigError("dropout-enabled forward pass requires an rng");
      const double keep = 1.0 - layer.spec.dropout_rate;
      mask.resize(post.size());
      for (double& m : mask) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    if (!mask.empty()) {
      for (std::size_t i = 0; i < post.size(); ++i) post[i] *= mask[i];
    }
    current = post;
  }
  t.logits = Tensor::vector(t.post.back());
  return t;
}

}  // namespace detail

inline ForwardTrace forward(const Network& net, std::span<const double> x,
                            bool dropout_enabled = false, Rng* rng = nullptr) {
  return detail::forward_impl(net, x, dropout_enabled, rng, nullptr);
}

inline ForwardTrace forward(const Network& net, const Tensor& x, bool dropout_enabled = false,
                            Rng* rng = nullptr) {
  return forward(net, x.values(), dropout_enabled, rng);
}

// Forward pass at `x` reusing the dropout masks recorded in `masks_from`.
inline ForwardTrace forward_replay(const Network& net, std::span<const double> x,
                                   const ForwardTrace& masks_from) {
  return detail::forward_impl(net, x, false, nullptr, &masks_from.masks);
}

inline ForwardTrace forward_replay(const Network& net, const Tensor& x,
                                   const ForwardTrace& masks_from) {
  return forward_replay(net, x.values(), masks_from);
}

inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

inline Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("softmax of empty tensor");
  if (!logits.all_finite()) throw DomainError("softmax of non-finite logits");
  Tensor out(logits.shape());
  softmax_into(logits.values(), out.values());
  return out;
}

// Index of the largest value; ties go to the smallest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline std::size_t predict(const Network& net, const Tensor& x) {
  return argmax(forward(net, x).logits.values());
}

inline constexpr double kProbabilityFloor = 1e-12;

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw DomainError("label out of range");
  return -std::log(std::max(probs[label], kProbabilityFloor));
}

inline double cross_entropy(const Tensor& probs, std::size_t label) {
  return cross_entropy(probs.values(), label);
}

/// Backpropagates `d_out` (gradient w.r.t. the final layer output) through a
/// recorded pass. Returns the gradient w.r.t. the input; when `param_grads`
/// is given, parameter gradients are accumulated into it.
///
/// ReLU uses subgradient 0 at a pre-activation of exactly 0.
inline std::vector<double> backward(const Network& net, const ForwardTrace& trace,
                                    std::span<const double> d_out, Network* param_grads = nullptr) {
  const std::size_t n_layers = net.layers.size();
  if (d_out.size() != net.output_dim()) throw DimensionError("backward: output gradient width");
  std::vector<double> delta(d_out.begin(), d_out.end());
  std::vector<double> d_in;
  for (std::size_t k = n_layers; k-- > 0;) {
    const Dense& layer = net.layers[k];
    const auto& mask = trace.masks[k];
    if (!mask.empty()) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= mask[i];
    }
    if (layer.spec.activation == Activation::relu) {
      const auto& pre = trace.pre[k];
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(pre[i] > 0.0)) delta[i] = 0.0;
      }
    }
    const std::size_t rows = layer.spec.out_dim;
    const std::size_t cols = layer.spec.in_dim;
    const std::vector<double>& in = k == 0 ? trace.input : trace.post[k - 1];
    if (param_grads) {
      Dense& g = param_grads->layers[k];
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        g.bias[r] += d;
        double* grow = g.weights.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += d * in[c];
      }
    }
    d_in.assign(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = layer.weights.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d_in[c] += d * row[c];
    }
    delta.swap(d_in);
  }
  return delta;
}

// d p_k / d logits = p_k (e_k - p)
inline void softmax_probability_logit_grad(std::span<const double> probs, std::size_t k,
                                           std::span<double> out) {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[k] * ((i == k ? 1.0 : 0.0) - probs[i]);
  }
}

// Chain rule through softmax: given dL/dp, returns dL/dlogits = p * (g - <g, p>).
inline void softmax_backward(std::span<const double> probs, std::span<const double> d_probs,
                             std::span<double> out) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += d_probs[i] * probs[i];
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (d_probs[i] - dot);
}

// d(sum p ln p)/dp_i = ln p_i + 1, i.e. the gradient of the negated entropy.
inline void negative_entropy_prob_grad(std::span<const double> probs, std::span<double> out) {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] > 0.0 ? std::log(probs[i]) + 1.0 : 0.0;
  }
}

inline double negative_entropy(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) {
    if (p > 0.0) s += p * std::log(p);
  }
  return s;
}

// Scalars of a single forward pass that input_gradient can differentiate.
struct ClassProbability {
  std::size_t label = 0;
};
struct NegativeEntropy {};
using Head = std::variant<ClassProbability, NegativeEntropy>;

// Value of `head` on a recorded pass.
inline double head_value(const ForwardTrace& trace, const Head& head) {
  const Tensor probs = softmax(trace.logits);
  if (const auto* cp = std::get_if<ClassProbability>(&head)) {
    if (cp->label >= probs.size()) throw DomainError("head class out of range");
    return probs[cp->label];
  }
  return negative_entropy(probs.values());
}

/// Exact gradient of a head scalar w.r.t. the input. With `replay`, the masks
/// of that pass are reused so the differentiated function is the sampled one.
inline Tensor input_gradient(const Network& net, const Tensor& x, const Head& head,
                             const ForwardTrace* replay = nullptr) {
  const ForwardTrace trace = replay ? forward_replay(net, x, *replay) : forward(net, x);
  const Tensor probs = softmax(trace.logits);
  std::vector<double> d_logits(probs.size());
  if (const auto* cp = std::get_if<ClassProbability>(&head)) {
    if (cp->label >= probs.size()) throw DomainError("head class out of range");
    softmax_probability_logit_grad(probs.values(), cp->label, d_logits);
  } else {
    std::vector<double> d_probs(probs.size());
    negative_entropy_prob_grad(probs.values(), d_probs);
    softmax_backward(probs.values(), d_probs, d_logits);
  }
  return Tensor(x.shape(), backward(net, trace, d_logits));
}

}  // namespace ace
