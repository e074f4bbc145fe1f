#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ace/dataset.hpp"
#include "ace/errors.hpp"
#include "ace/nn.hpp"
#include "ace/rng.hpp"

namespace ace {

struct SgdConfig {
  double learning_rate = 0.05;
  int epochs = 30;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  double momentum = 0.0;
};

template <typename Params>
struct TrainResult {
  Params params;
  double train_accuracy = 0.0;
  double final_loss = 0.0;  // mean training loss over the last epoch
};

namespace detail {

inline void check_training_data(const LabeledDataset& data, std::size_t in_dim,
                                std::size_t class_count) {
  if (data.empty()) throw ConfigError("training data is empty");
  data.validate();
  if (data.dim() != in_dim) {
    throw DimensionError("training features have " + std::to_string(data.dim()) +
                         " dims, network expects " + std::to_string(in_dim));
  }
  if (data.class_count > class_count) {
    throw ConfigError("dataset has more classes than the network outputs");
  }
}

// velocity <- momentum * velocity - lr * grad / batch; params += velocity
inline void sgd_step(Network& params, Network& velocity, const Network& grads, double lr,
                     double momentum, double batch) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto step = [&](std::vector<double>& p, std::vector<double>& v, const std::vector<double>& g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum * v[i] - lr * g[i] / batch;
        p[i] += v[i];
      }
    };
    step(params.layers[l].weights, velocity.layers[l].weights, grads.layers[l].weights);
    step(params.layers[l].bias, velocity.layers[l].bias, grads.layers[l].bias);
  }
}

inline void clear(Network& grads) {
  for (auto& l : grads.layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

}  // namespace detail

inline double accuracy(const Network& net, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict(net, data.features[i]) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Mini-batch SGD on mean cross-entropy. Dropout layers are active during
/// training. Fully determined by (specs, data, cfg).
inline TrainResult<Network> train_sgd(const std::vector<LayerSpec>& specs,
                                      const LabeledDataset& data, const SgdConfig& cfg) {
  validate_specs(specs, true);
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  detail::check_training_data(data, specs.front().in_dim, specs.back().out_dim);

  Rng init_rng(derive_seed(cfg.seed, {fnv1a("init")}));
  Rng order_rng(derive_seed(cfg.seed, {fnv1a("order")}));
  Rng dropout_rng(derive_seed(cfg.seed, {fnv1a("dropout")}));

  TrainResult<Network> result{init_network(specs, init_rng), 0.0, 0.0};
  Network& net = result.params;
  net.seed = cfg.seed;
  Network grads = zeros_like(net);
  Network velocity = zeros_like(net);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> probs(net.class_count);
  std::vector<double> d_logits(net.class_count);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, order_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      detail::clear(grads);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const ForwardTrace trace = forward(net, data.features[i], true, &dropout_rng);
        softmax_into(trace.logits.values(), probs);
        epoch_loss += cross_entropy(probs, data.labels[i]);
        for (std::size_t c = 0; c < probs.size(); ++c) {
          d_logits[c] = probs[c] - (c == data.labels[i] ? 1.0 : 0.0);
        }
        backward(net, trace, d_logits, &grads);
      }
      detail::sgd_step(net, velocity, grads, cfg.learning_rate, cfg.momentum,
                       static_cast<double>(stop - start));
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw TrainingError("training loss diverged", epoch);
    result.final_loss = epoch_loss;
  }
  result.train_accuracy = accuracy(net, data);
  return result;
}

}  // namespace ace
