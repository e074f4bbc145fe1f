#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ace/dataset.hpp"
#include "ace/errors.hpp"
#include "ace/nn.hpp"
#include "ace/rng.hpp"
#include "ace/train.hpp"

namespace ace {

/// SelectiveNet-style model: a ReLU backbone shared by a prediction head
/// (logits), a selector head (stack ending in one sigmoid unit) and an
/// auxiliary head used only during training.
struct SelNetParams {
  Network backbone;
  Network prediction_head;
  Network selector_head;
  Network auxiliary_head;
  std::size_t class_count = 0;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return backbone.input_dim(); }

  friend bool operator==(const SelNetParams&, const SelNetParams&) = default;
};

struct SelNetArchitecture {
  std::size_t input_dim = 2;
  std::vector<std::size_t> backbone_hidden{32, 32};
  std::vector<std::size_t> selector_hidden{16};
  std::size_t class_count = 2;
};

struct SelNetTrainConfig {
  double target_coverage = 0.7;
  double constraint_weight = 32.0;  // lambda
  double aux_mix = 0.5;             // alpha
  SgdConfig sgd;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

struct SelNetSpecs {
  std::vector<LayerSpec> backbone, prediction, selector, auxiliary;
};

inline SelNetSpecs selnet_specs(const SelNetArchitecture& arch) {
  if (arch.backbone_hidden.empty()) throw ConfigError("selnet backbone needs at least one layer");
  if (arch.class_count < 2) throw ConfigError("selnet needs at least 2 classes");
  SelNetSpecs s;
  std::size_t prev = arch.input_dim;
  for (std::size_t h : arch.backbone_hidden) {
    s.backbone.push_back({prev, h, Activation::relu, 0.0});
    prev = h;
  }
  const std::size_t features = prev;
  s.prediction = {{features, arch.class_count, Activation::identity, 0.0}};
  s.auxiliary = s.prediction;
  s.selector = mlp_specs(features, arch.selector_hidden, 1);
  return s;
}

}  // namespace detail

// All-zero parameters when rng is null, otherwise fan-based uniform init.
inline SelNetParams make_selnet(const SelNetArchitecture& arch, Rng* rng = nullptr) {
  const auto s = detail::selnet_specs(arch);
  SelNetParams p;
  if (rng) {
    p.backbone = init_network(s.backbone, *rng, false);
    p.prediction_head = init_network(s.prediction, *rng);
    p.selector_head = init_network(s.selector, *rng);
    p.auxiliary_head = init_network(s.auxiliary, *rng);
  } else {
    p.backbone = Network(s.backbone, false);
    p.prediction_head = Network(s.prediction);
    p.selector_head = Network(s.selector);
    p.auxiliary_head = Network(s.auxiliary);
  }
  p.class_count = arch.class_count;
  return p;
}

inline void validate(const SelNetParams& p) {
  const std::size_t features = p.backbone.output_dim();
  if (p.prediction_head.input_dim() != features || p.selector_head.input_dim() != features ||
      p.auxiliary_head.input_dim() != features) {
    throw DimensionError("selnet heads do not consume the backbone output");
  }
  if (p.prediction_head.output_dim() != p.class_count ||
      p.auxiliary_head.output_dim() != p.class_count || p.selector_head.output_dim() != 1) {
    throw DimensionError("selnet head widths do not match class count");
  }
}

struct SelNetTrace {
  ForwardTrace backbone, prediction, selector, auxiliary;
  double selector_value = 0.0;
};

inline SelNetTrace selnet_trace(const SelNetParams& p, std::span<const double> x,
                                bool dropout_enabled = false, Rng* rng = nullptr) {
  SelNetTrace t;
  t.backbone = forward(p.backbone, x, dropout_enabled, rng);
  const auto& features = t.backbone.post.back();
  t.prediction = forward(p.prediction_head, features);
  t.selector = forward(p.selector_head, features);
  t.auxiliary = forward(p.auxiliary_head, features);
  t.selector_value = sigmoid(t.selector.logits[0]);
  return t;
}

struct SelNetOutput {
  Tensor pred_probs;
  double selector = 0.0;
  Tensor aux_probs;
};

inline SelNetOutput selnet_forward(const SelNetParams& p, const Tensor& x) {
  const SelNetTrace t = selnet_trace(p, x.values());
  return {softmax(t.prediction.logits), t.selector_value, softmax(t.auxiliary.logits)};
}

inline std::size_t predict(const SelNetParams& p, const Tensor& x) {
  const SelNetTrace t = selnet_trace(p, x.values());
  return argmax(t.prediction.logits.values());
}

// Gradient of the selector output w.r.t. the input.
inline Tensor selector_gradient(const SelNetParams& p, const Tensor& x) {
  const SelNetTrace t = selnet_trace(p, x.values());
  const double s = t.selector_value;
  const double d_logit = s * (1.0 - s);
  const auto d_features = backward(p.selector_head, t.selector, std::span<const double>(&d_logit, 1));
  return Tensor(x.shape(), backward(p.backbone, t.backbone, d_features));
}

// Gradient of the prediction head's softmax probability of `label` w.r.t. the input.
inline Tensor prediction_probability_gradient(const SelNetParams& p, const Tensor& x,
                                              std::size_t label) {
  if (label >= p.class_count) throw DomainError("head class out of range");
  const SelNetTrace t = selnet_trace(p, x.values());
  const Tensor probs = softmax(t.prediction.logits);
  std::vector<double> d_logits(probs.size());
  softmax_probability_logit_grad(probs.values(), label, d_logits);
  const auto d_features = backward(p.prediction_head, t.prediction, d_logits);
  return Tensor(x.shape(), backward(p.backbone, t.backbone, d_features));
}

struct SelNetTrainResult {
  SelNetParams params;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
  // Fraction of training points with selector > 0.5 after training.
  double empirical_coverage = 0.0;
};

/// Trains with, per batch,
///   L = a * (sum(l_i s_i) / sum(s_i) + lambda * max(0, c - mean(s))^2) + (1 - a) * mean CE(aux)
/// where l_i is the prediction-head cross-entropy and s_i the selector output.
inline SelNetTrainResult selnet_train(const SelNetArchitecture& arch, const LabeledDataset& data,
                                      const SelNetTrainConfig& cfg) {
  if (!(cfg.target_coverage > 0.0 && cfg.target_coverage <= 1.0)) {
    throw ConfigError("target coverage must lie in (0,1]");
  }
  if (!(cfg.constraint_weight > 0.0)) throw ConfigError("constraint weight must be positive");
  if (!(cfg.aux_mix >= 0.0 && cfg.aux_mix <= 1.0)) throw ConfigError("aux mix must lie in [0,1]");
  if (cfg.sgd.batch == 0) throw ConfigError("batch size must be positive");
  if (cfg.sgd.epochs < 0) throw ConfigError("epochs must be >= 0");
  detail::check_training_data(data, arch.input_dim, arch.class_count);

  Rng init_rng(derive_seed(cfg.sgd.seed, {fnv1a("selnet-init")}));
  Rng order_rng(derive_seed(cfg.sgd.seed, {fnv1a("order")}));
  Rng dropout_rng(derive_seed(cfg.sgd.seed, {fnv1a("dropout")}));

  SelNetTrainResult result;
  result.params = make_selnet(arch, &init_rng);
  SelNetParams& p = result.params;
  p.seed = cfg.sgd.seed;

  struct Slot {
    Network* params;
    Network grads, velocity;
  };
  std::array<Slot, 4> slots{Slot{&p.backbone, zeros_like(p.backbone), zeros_like(p.backbone)},
                            Slot{&p.prediction_head, zeros_like(p.prediction_head),
                                 zeros_like(p.prediction_head)},
                            Slot{&p.selector_head, zeros_like(p.selector_head),
                                 zeros_like(p.selector_head)},
                            Slot{&p.auxiliary_head, zeros_like(p.auxiliary_head),
                                 zeros_like(p.auxiliary_head)}};

  const double alpha = cfg.aux_mix;
  const double lambda = cfg.constraint_weight;
  const double c = cfg.target_coverage;
  const std::size_t k = arch.class_count;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SelNetTrace> traces;
  std::vector<double> pred_probs, aux_probs, losses, sel;
  std::vector<double> d_pred(k), d_aux(k), d_features;

  for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    shuffle(order, order_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.sgd.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.sgd.batch);
      const std::size_t b = stop - start;
      const double bd = static_cast<double>(b);
      traces.clear();
      pred_probs.assign(b * k, 0.0);
      aux_probs.assign(b * k, 0.0);
      losses.assign(b, 0.0);
      sel.assign(b, 0.0);
      double sel_sum = 0.0, risk_sum = 0.0, aux_loss = 0.0;
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t i = order[start + j];
        traces.push_back(selnet_trace(p, data.features[i].values(), true, &dropout_rng));
        const auto& t = traces.back();
        std::span<double> pp(pred_probs.data() + j * k, k), ap(aux_probs.data() + j * k, k);
        softmax_into(t.prediction.logits.values(), pp);
        softmax_into(t.auxiliary.logits.values(), ap);
        losses[j] = cross_entropy(pp, data.labels[i]);
        aux_loss += cross_entropy(ap, data.labels[i]);
        sel[j] = t.selector_value;
        sel_sum += sel[j];
        risk_sum += losses[j] * sel[j];
      }
      const double shortfall = std::max(0.0, c - sel_sum / bd);
      const double batch_loss = alpha * (risk_sum / sel_sum + lambda * shortfall * shortfall) +
                                (1.0 - alpha) * aux_loss / bd;
      epoch_loss += batch_loss;
      ++batches;

      for (auto& s : slots) detail::clear(s.grads);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t y = data.labels[order[start + j]];
        const auto& t = traces[j];
        for (std::size_t cls = 0; cls < k; ++cls) {
          const double onehot = cls == y ? 1.0 : 0.0;
          d_pred[cls] = alpha * sel[j] / sel_sum * (pred_probs[j * k + cls] - onehot);
          d_aux[cls] = (1.0 - alpha) / bd * (aux_probs[j * k + cls] - onehot);
        }
        const double d_sel = alpha * ((losses[j] * sel_sum - risk_sum) / (sel_sum * sel_sum) -
                                      2.0 * lambda * shortfall / bd);
        const double d_sel_logit = d_sel * sel[j] * (1.0 - sel[j]);

        d_features = backward(p.prediction_head, t.prediction, d_pred, &slots[1].grads);
        const auto from_sel = backward(p.selector_head, t.selector,
                                       std::span<const double>(&d_sel_logit, 1), &slots[2].grads);
        const auto from_aux = backward(p.auxiliary_head, t.auxiliary, d_aux, &slots[3].grads);
        for (std::size_t f = 0; f < d_features.size(); ++f) d_features[f] += from_sel[f] + from_aux[f];
        backward(p.backbone, t.backbone, d_features, &slots[0].grads);
      }
      for (auto& s : slots) {
        detail::sgd_step(*s.params, s.velocity, s.grads, cfg.sgd.learning_rate, cfg.sgd.momentum, 1.0);
      }
    }
    epoch_loss /= static_cast<double>(batches);
    if (!std::isfinite(epoch_loss)) throw TrainingError("selnet training loss diverged", epoch);
    result.final_loss = epoch_loss;
  }

  std::size_t hits = 0, covered = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto t = selnet_trace(p, data.features[i].values());
    hits += argmax(t.prediction.logits.values()) == data.labels[i];
    covered += t.selector_value > 0.5;
  }
  result.train_accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  result.empirical_coverage = static_cast<double>(covered) / static_cast<double>(data.size());
  return result;
}

struct Calibration {
  double threshold = 0.0;
  double coverage = 0.0;  // achieved fraction with score > threshold
};

/// Picks the threshold whose coverage (fraction of scores strictly above it)
/// is the largest achievable value not exceeding `target`. The threshold is
/// placed midway between the last rejected and first accepted distinct score;
/// for full coverage it sits just below the minimum.
inline Calibration calibrate_scores(std::vector<double> scores, double target) {
  if (scores.empty()) throw ConfigError("calibration set is empty");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  if (target >= 1.0) {
    return {std::nextafter(scores.front(), -std::numeric_limits<double>::infinity()), 1.0};
  }
  // Candidate thresholds are the distinct scores; scanning upward, coverage
  // decreases, so the first candidate whose coverage fits is maximal.
  for (std::size_t i = 0; i < scores.size();) {
    std::size_t j = i;
    while (j < scores.size() && scores[j] == scores[i]) ++j;
    const double coverage = static_cast<double>(scores.size() - j) / n;
    if (coverage <= target) {
      double theta = scores[i];
      if (j < scores.size()) {
        const double mid = scores[i] + 0.5 * (scores[j] - scores[i]);
        if (mid < scores[j]) theta = mid;
      }
      return {theta, coverage};
    }
    i = j;
  }
  return {scores.back(), 0.0};
}

inline Calibration calibrate_threshold(const SelNetParams& p, const LabeledDataset& validation,
                                       double target) {
  if (validation.empty()) throw ConfigError("validation set is empty");
  std::vector<double> scores;
  scores.reserve(validation.size());
  for (const auto& x : validation.features) scores.push_back(selnet_trace(p, x.values()).selector_value);
  return calibrate_scores(std::move(scores), target);
}

}  // namespace ace
