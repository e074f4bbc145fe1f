#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ace/confidence.hpp"
#include "ace/dataset.hpp"
#include "ace/errors.hpp"
#include "ace/parallel.hpp"
#include "ace/rng.hpp"
#include "ace/tensor.hpp"

namespace ace {

enum class AttackMode { white_box, black_box };
enum class AttackTarget { direct, indirect_softmax };

inline const char* to_string(AttackMode m) { return m == AttackMode::white_box ? "whitebox" : "blackbox"; }
inline const char* to_string(AttackTarget t) { return t == AttackTarget::direct ? "direct" : "indirect"; }

inline AttackMode parse_attack_mode(std::string_view s) {
  if (s == "whitebox" || s == "white_box") return AttackMode::white_box;
  if (s == "blackbox" || s == "black_box") return AttackMode::black_box;
  throw ConfigError("unknown attack mode '" + std::string(s) + "'");
}

inline AttackTarget parse_attack_target(std::string_view s) {
  if (s == "direct") return AttackTarget::direct;
  if (s == "indirect" || s == "indirect_softmax") return AttackTarget::indirect_softmax;
  throw ConfigError("unknown attack target '" + std::string(s) + "'");
}

// Per-feature bounds applied to every candidate before its label check.
struct ClampDomain {
  std::vector<double> lo;
  std::vector<double> hi;

  static ClampDomain uniform(std::size_t dim, double lo, double hi) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
  }

  void apply(Tensor& x) const {
    if (lo.size() != x.size() || hi.size() != x.size()) {
      throw DimensionError("clamp domain width does not match input");
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  }
};

struct AttackConfig {
  double epsilon = 0.005;
  double epsilon_decay = 0.5;
  int max_iterations = 15;
  AttackMode mode = AttackMode::white_box;
  AttackTarget target = AttackTarget::direct;
  std::optional<ClampDomain> clamp;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be a finite value >= 0");
    if (!(epsilon_decay > 0.0 && epsilon_decay < 1.0)) throw ConfigError("epsilon decay must lie in (0,1)");
    if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  }
};

struct AttackOutcome {
  Tensor x_tilde;
  double effective_epsilon = 0.0;
  int iterations_used = 0;
  bool perturbed = false;
  std::size_t victim_label = 0;  // victim's prediction on the clean input
};

/// Label-only access to the victim. Every call counts as one query; the
/// counter is atomic so concurrent attacks produce the same total.
class LabelOracle {
 public:
  explicit LabelOracle(std::function<std::size_t(const Tensor&)> fn) : fn_(std::move(fn)) {}

  std::size_t operator()(const Tensor& x) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return fn_(x);
  }

  std::uint64_t queries() const { return queries_.load(); }

 private:
  std::function<std::size_t(const Tensor&)> fn_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

inline LabelOracle label_oracle(ConfidenceScorer victim) {
  return LabelOracle([v = std::move(victim)](const Tensor& x) { return predict(v, x); });
}

// Softmax response of the same model(s): the "indirect" target.
inline ConfidenceScorer softmax_view(const ConfidenceScorer& s) {
  if (s.kind == ScorerKind::ensemble_mean_softmax) return s;
  if (s.selnet) return softmax_scorer(s.selnet);
  return softmax_scorer(s.models.at(0));
}

/// The scorer whose gradient drives the attack. White-box attacks
/// differentiate the victim's own kappa (direct) or its softmax response
/// (indirect); black-box attacks differentiate the proxy.
inline ConfidenceScorer gradient_source(const ConfidenceScorer& victim, const AttackConfig& cfg,
                                        const ConfidenceScorer* proxy) {
  if (cfg.mode == AttackMode::black_box) {
    if (!proxy) throw ConfigError("black-box attack needs a proxy model");
    return cfg.target == AttackTarget::direct ? *proxy : softmax_view(*proxy);
  }
  return cfg.target == AttackTarget::direct ? victim : softmax_view(victim);
}

/// Attack on confidence estimation for one sample. The signed gradient of
/// kappa (computed once, with the proxy, at the victim's predicted label)
/// moves a correctly classified input towards lower confidence and a
/// misclassified one towards higher confidence. A step is accepted only if the
/// victim's label is unchanged; otherwise epsilon decays and the step is
/// retried. On exhaustion the input is returned untouched.
inline AttackOutcome ace(const LabelOracle& victim, const ConfidenceScorer& proxy, const Tensor& x,
                         std::size_t y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  AttackOutcome out;
  out.x_tilde = x;
  out.victim_label = victim(x);
  if (cfg.epsilon == 0.0) return out;

  const Tensor eta = kappa_signed_gradient(proxy, x, out.victim_label, rng);
  const double direction = out.victim_label == y ? -1.0 : 1.0;
  double eps = cfg.epsilon;
  Tensor candidate = x;
  for (int i = 0; i < cfg.max_iterations; ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) candidate[j] = x[j] + direction * eps * eta[j];
    if (cfg.clamp) cfg.clamp->apply(candidate);
    if (!candidate.all_finite()) throw NumericError("attack produced a non-finite input");
    ++out.iterations_used;
    if (victim(candidate) == out.victim_label) {
      out.x_tilde = std::move(candidate);
      out.effective_epsilon = eps;
      out.perturbed = true;
      return out;
    }
    eps *= cfg.epsilon_decay;
  }
  return out;
}

struct AttackSummary {
  double mean_effective_epsilon = 0.0;  // zeros from unperturbed samples included
  std::uint64_t query_count = 0;
  double fraction_perturbed = 0.0;
};

struct AttackRun {
  std::vector<AttackOutcome> outcomes;
  AttackSummary summary;
};

// Per-sample attack stream; independent of scheduling.
inline Rng attack_rng(std::uint64_t seed, std::size_t index) {
  return Rng(derive_seed(seed, {fnv1a("attack"), index}));
}

inline AttackRun attack_dataset(const LabelOracle& victim, const ConfidenceScorer& proxy,
                                const LabeledDataset& data, const AttackConfig& cfg,
                                std::uint64_t seed, std::size_t threads = 0) {
  if (data.empty()) throw ConfigError("attack_dataset needs a non-empty dataset");
  cfg.validate();
  AttackRun run;
  run.outcomes.resize(data.size());
  const std::uint64_t queries_before = victim.queries();
  parallel_for(data.size(), threads, [&](std::size_t i) {
    Rng rng = attack_rng(seed, i);
    try {
      run.outcomes[i] = ace(victim, proxy, data.features[i], data.labels[i], cfg, rng);
    } catch (const NumericError& e) {
      throw NumericError("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  std::size_t perturbed = 0;
  double eps_sum = 0.0;
  for (const auto& o : run.outcomes) {
    eps_sum += o.effective_epsilon;
    perturbed += o.perturbed;
  }
  const double n = static_cast<double>(data.size());
  run.summary.mean_effective_epsilon = eps_sum / n;
  run.summary.fraction_perturbed = static_cast<double>(perturbed) / n;
  run.summary.query_count = victim.queries() - queries_before;
  return run;
}

inline LabeledDataset apply_outcomes(const LabeledDataset& data, const std::vector<AttackOutcome>& outcomes) {
  if (outcomes.size() != data.size()) throw DimensionError("outcome count does not match dataset");
  LabeledDataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) out.features[i] = outcomes[i].x_tilde;
  return out;
}

}  // namespace ace
