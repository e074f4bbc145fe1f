#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ace/errors.hpp"
#include "ace/model_io.hpp"
#include "ace/nn.hpp"
#include "ace/rng.hpp"
#include "ace/selnet.hpp"
#include "ace/tensor.hpp"

namespace ace {

// Confidence scores kappa(x, label | f). Every kind is oriented so that a
// larger value means "more confident"; only the induced ordering matters.
enum class ScorerKind { softmax_response, ensemble_mean_softmax, mc_entropy, mc_variance, selector_head };

inline const char* to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::softmax_response: return "softmax_response";
    case ScorerKind::ensemble_mean_softmax: return "ensemble_mean_softmax";
    case ScorerKind::mc_entropy: return "mc_entropy";
    case ScorerKind::mc_variance: return "mc_variance";
    case ScorerKind::selector_head: return "selector_head";
  }
  return "?";
}

inline ScorerKind parse_scorer_kind(std::string_view s) {
  for (auto k : {ScorerKind::softmax_response, ScorerKind::ensemble_mean_softmax,
                 ScorerKind::mc_entropy, ScorerKind::mc_variance, ScorerKind::selector_head}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown scorer kind '" + std::string(s) + "'");
}

using NetworkHandle = std::shared_ptr<const Network>;
using SelNetHandle = std::shared_ptr<const SelNetParams>;

struct ConfidenceScorer {
  ScorerKind kind = ScorerKind::softmax_response;
  // Plain models. softmax_response and the MC kinds use models[0].
  std::vector<NetworkHandle> models;
  // softmax_response may instead read a SelNet prediction head; selector_head requires it.
  SelNetHandle selnet;
  std::size_t passes = 10;  // MC kinds only

  bool is_stochastic() const {
    return kind == ScorerKind::mc_entropy || kind == ScorerKind::mc_variance;
  }

  std::size_t class_count() const { return selnet ? selnet->class_count : models.at(0)->class_count; }
  std::size_t input_dim() const { return selnet ? selnet->input_dim() : models.at(0)->input_dim(); }

  void validate() const {
    switch (kind) {
      case ScorerKind::softmax_response:
        if (models.empty() && !selnet) throw ConfigError("softmax scorer needs a model");
        break;
      case ScorerKind::ensemble_mean_softmax:
        if (models.size() < 2) throw ConfigError("ensemble scorer needs at least 2 models");
        for (const auto& m : models) {
          if (m->class_count != models.front()->class_count ||
              m->input_dim() != models.front()->input_dim()) {
            throw ConfigError("ensemble members disagree on class count or input dimension");
          }
        }
        break;
      case ScorerKind::mc_entropy:
      case ScorerKind::mc_variance:
        if (models.empty()) throw ConfigError("MC scorer needs a model");
        if (!models.front()->has_dropout()) throw ConfigError("MC scorer needs a dropout-bearing model");
        if (passes < 1) throw ConfigError("MC scorer needs at least one pass");
        if (kind == ScorerKind::mc_variance && passes < 2) {
          throw ConfigError("variance scorer needs at least 2 passes");
        }
        break;
      case ScorerKind::selector_head:
        if (!selnet) throw ConfigError("selector scorer needs a selnet model");
        break;
    }
  }
};

inline ConfidenceScorer softmax_scorer(NetworkHandle model) {
  return {ScorerKind::softmax_response, {std::move(model)}, nullptr, 1};
}
inline ConfidenceScorer softmax_scorer(SelNetHandle model) {
  return {ScorerKind::softmax_response, {}, std::move(model), 1};
}
inline ConfidenceScorer ensemble_scorer(std::vector<NetworkHandle> members) {
  ConfidenceScorer s{ScorerKind::ensemble_mean_softmax, std::move(members), nullptr, 1};
  s.validate();
  return s;
}
inline ConfidenceScorer mc_scorer(ScorerKind kind, NetworkHandle model, std::size_t passes) {
  ConfidenceScorer s{kind, {std::move(model)}, nullptr, passes};
  s.validate();
  return s;
}
inline ConfidenceScorer selector_scorer(SelNetHandle model) {
  return {ScorerKind::selector_head, {}, std::move(model), 1};
}

// ---------------------------------------------------------------------------
// Individual kappa functions.

inline double kappa_softmax(const Network& f, const Tensor& x, std::size_t label) {
  if (label >= f.class_count) throw DomainError("label out of range");
  return softmax(forward(f, x).logits)[label];
}

inline Tensor ensemble_mean_probs(const std::vector<NetworkHandle>& models, const Tensor& x) {
  Tensor mean = Tensor::zeros(models.at(0)->class_count);
  for (const auto& m : models) {
    if (m->class_count != mean.size()) throw ConfigError("ensemble members disagree on class count");
    const Tensor p = softmax(forward(*m, x).logits);
    for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
  }
  for (double& v : mean) v /= static_cast<double>(models.size());
  return mean;
}

inline double kappa_ensemble(const std::vector<NetworkHandle>& models, const Tensor& x,
                             std::size_t label) {
  const Tensor mean = ensemble_mean_probs(models, x);
  if (label >= mean.size()) throw DomainError("label out of range");
  return mean[label];
}

/// N dropout-enabled passes with their traces (for gradient replay).
struct McPasses {
  std::vector<ForwardTrace> traces;
  std::vector<Tensor> probs;
  Tensor mean;
};

inline McPasses mc_passes(const Network& f, const Tensor& x, std::size_t n, Rng& rng) {
  if (n < 1) throw ConfigError("MC scoring needs at least one pass");
  McPasses out;
  out.mean = Tensor::zeros(f.class_count);
  for (std::size_t t = 0; t < n; ++t) {
    out.traces.push_back(forward(f, x, true, &rng));
    out.probs.push_back(softmax(out.traces.back().logits));
    for (std::size_t i = 0; i < f.class_count; ++i) out.mean[i] += out.probs.back()[i];
  }
  for (double& v : out.mean) v /= static_cast<double>(n);
  return out;
}

inline double mc_entropy_value(const McPasses& passes) { return negative_entropy(passes.mean.values()); }

// Negated population variance of the per-pass probability of `label`.
inline double mc_variance_value(const McPasses& passes, std::size_t label) {
  const double n = static_cast<double>(passes.probs.size());
  double mean = 0.0;
  for (const auto& p : passes.probs) mean += p[label];
  mean /= n;
  double var = 0.0;
  for (const auto& p : passes.probs) var += (p[label] - mean) * (p[label] - mean);
  return -var / n;
}

// -H(mean of N dropout softmax outputs).
inline double kappa_mc_entropy(const Network& f, const Tensor& x, std::size_t n, Rng& rng) {
  return mc_entropy_value(mc_passes(f, x, n, rng));
}

inline double kappa_mc_variance(const Network& f, const Tensor& x, std::size_t n, Rng& rng,
                                std::size_t label) {
  if (n < 2) throw ConfigError("variance scorer needs at least 2 passes");
  if (label >= f.class_count) throw DomainError("label out of range");
  return mc_variance_value(mc_passes(f, x, n, rng), label);
}

// Variance of the probability of the deterministic predicted label.
inline double kappa_mc_variance(const Network& f, const Tensor& x, std::size_t n, Rng& rng) {
  return kappa_mc_variance(f, x, n, rng, predict(f, x));
}

inline double kappa_selector(const SelNetParams& s, const Tensor& x) {
  return selnet_trace(s, x.values()).selector_value;
}

inline double kappa_selector(const Model& model, const Tensor& x) {
  const auto* s = std::get_if<SelNetParams>(&model);
  if (!s) throw ConfigError("selector confidence requires a selnet model");
  return kappa_selector(*s, x);
}

// ---------------------------------------------------------------------------
// Scorer-level interface.

// Deterministic prediction: argmax of the dropout-disabled (or ensemble-mean,
// or prediction-head) distribution.
inline std::size_t predict(const ConfidenceScorer& s, const Tensor& x) {
  if (s.selnet) return predict(*s.selnet, x);
  if (s.kind == ScorerKind::ensemble_mean_softmax) return argmax(ensemble_mean_probs(s.models, x).values());
  return predict(*s.models.front(), x);
}

struct Evaluation {
  double kappa = 0.0;
  Tensor probs;  // distribution used for NLL / Brier
};

// kappa and the probability vector from one shared set of MC passes.
inline Evaluation evaluate(const ConfidenceScorer& s, const Tensor& x, std::size_t label, Rng& rng) {
  if (label >= s.class_count()) throw DomainError("label out of range");
  switch (s.kind) {
    case ScorerKind::softmax_response: {
      Tensor p = s.selnet ? selnet_forward(*s.selnet, x).pred_probs
                          : softmax(forward(*s.models.front(), x).logits);
      const double k = p[label];
      return {k, std::move(p)};
    }
    case ScorerKind::ensemble_mean_softmax: {
      Tensor p = ensemble_mean_probs(s.models, x);
      const double k = p[label];
      return {k, std::move(p)};
    }
    case ScorerKind::mc_entropy: {
      McPasses passes = mc_passes(*s.models.front(), x, s.passes, rng);
      return {mc_entropy_value(passes), std::move(passes.mean)};
    }
    case ScorerKind::mc_variance: {
      McPasses passes = mc_passes(*s.models.front(), x, s.passes, rng);
      return {mc_variance_value(passes, label), std::move(passes.mean)};
    }
    case ScorerKind::selector_head: {
      SelNetOutput out = selnet_forward(*s.selnet, x);
      return {out.selector, std::move(out.pred_probs)};
    }
  }
  throw ConfigError("unknown scorer kind");
}

inline double kappa(const ConfidenceScorer& s, const Tensor& x, std::size_t label, Rng& rng) {
  return evaluate(s, x, label, rng).kappa;
}

/// Analytic gradient of kappa(x, label) w.r.t. x. For MC kinds the passes are
/// drawn from `rng` and differentiated exactly as sampled, so a copy of `rng`
/// taken before the call reproduces the differentiated function.
inline Tensor kappa_gradient(const ConfidenceScorer& s, const Tensor& x, std::size_t label, Rng& rng) {
  if (label >= s.class_count()) throw DomainError("label out of range");
  switch (s.kind) {
    case ScorerKind::softmax_response:
      if (s.selnet) return prediction_probability_gradient(*s.selnet, x, label);
      return input_gradient(*s.models.front(), x, ClassProbability{label});
    case ScorerKind::ensemble_mean_softmax: {
      Tensor g = Tensor::zeros(x.size());
      for (const auto& m : s.models) {
        const Tensor gm = input_gradient(*m, x, ClassProbability{label});
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gm[i];
      }
      for (double& v : g) v /= static_cast<double>(s.models.size());
      return Tensor(x.shape(), std::vector<double>(g.begin(), g.end()));
    }
    case ScorerKind::mc_entropy:
    case ScorerKind::mc_variance: {
      const Network& f = *s.models.front();
      const McPasses passes = mc_passes(f, x, s.passes, rng);
      const std::size_t k = f.class_count;
      const double n = static_cast<double>(s.passes);
      std::vector<double> d_probs(k), d_logits(k);
      std::vector<double> grad(x.size(), 0.0);
      double mean_label = 0.0;
      if (s.kind == ScorerKind::mc_entropy) {
        negative_entropy_prob_grad(passes.mean.values(), d_probs);
        for (double& v : d_probs) v /= n;
      } else {
        for (const auto& p : passes.probs) mean_label += p[label] / n;
      }
      for (std::size_t t = 0; t < s.passes; ++t) {
        const auto p = passes.probs[t].values();
        if (s.kind == ScorerKind::mc_entropy) {
          softmax_backward(p, d_probs, d_logits);
        } else {
          // d(-Var)/dq_t = -2 (q_t - mean) / N
          const double coef = -2.0 * (p[label] - mean_label) / n;
          softmax_probability_logit_grad(p, label, d_logits);
          for (double& v : d_logits) v *= coef;
        }
        const auto gx = backward(f, passes.traces[t], d_logits);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gx[i];
      }
      return Tensor(x.shape(), std::move(grad));
    }
    case ScorerKind::selector_head:
      return selector_gradient(*s.selnet, x);
  }
  throw ConfigError("unknown scorer kind");
}

// sign(grad kappa), with sign(0) = 0.
inline Tensor kappa_signed_gradient(const ConfidenceScorer& gradient_source, const Tensor& x,
                                    std::size_t label, Rng& rng) {
  Tensor g = kappa_gradient(gradient_source, x, label, rng);
  for (double& v : g) {
    if (!std::isfinite(v)) throw NumericError("non-finite confidence gradient");
    v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  return g;
}

/// One evaluated sample.
struct ScoredItem {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double kappa = 0.0;
  Tensor probs;
  int loss01 = 0;
};

inline ScoredItem score_item(const ConfidenceScorer& s, const Tensor& x, std::size_t y, Rng& rng,
                             std::size_t index = 0) {
  ScoredItem item;
  item.index = index;
  item.label = y;
  item.predicted = predict(s, x);
  Evaluation e = evaluate(s, x, item.predicted, rng);
  item.kappa = e.kappa;
  item.probs = std::move(e.probs);
  item.loss01 = item.predicted != y ? 1 : 0;
  return item;
}

}  // namespace ace
