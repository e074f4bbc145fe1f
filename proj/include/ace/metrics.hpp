#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "ace/confidence.hpp"
#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/nn.hpp"

namespace ace {

// Selection rule: an item is covered iff kappa > theta (strict).

inline double empirical_coverage(std::span<const ScoredItem> items, double theta) {
  if (items.empty()) throw ConfigError("coverage of an empty item set");
  std::size_t covered = 0;
  for (const auto& it : items) covered += it.kappa > theta;
  return static_cast<double>(covered) / static_cast<double>(items.size());
}

inline double empirical_selective_risk(std::span<const ScoredItem> items, double theta) {
  std::size_t covered = 0, errors = 0;
  for (const auto& it : items) {
    if (it.kappa > theta) {
      ++covered;
      errors += it.loss01;
    }
  }
  if (covered == 0) throw UndefinedRiskError("selective risk is undefined at zero coverage");
  return static_cast<double>(errors) / static_cast<double>(covered);
}

struct RCPoint {
  double coverage = 0.0;
  double risk = 0.0;
  // Largest threshold that yields this coverage under the strict rule.
  double threshold = 0.0;

  friend bool operator==(const RCPoint&, const RCPoint&) = default;
};

struct RCCurve {
  std::vector<RCPoint> points;  // coverage strictly increasing; last point has coverage 1
};

namespace detail {

inline std::vector<std::size_t> order_by_confidence_desc(std::span<const ScoredItem> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].kappa > items[b].kappa; });
  return order;
}

}  // namespace detail

/// One point per distinct kappa value: covering every item whose kappa is at
/// least that value. Tied items enter coverage together.
inline RCCurve rc_curve(std::span<const ScoredItem> items) {
  if (items.empty()) throw ConfigError("rc curve of an empty item set");
  const auto order = detail::order_by_confidence_desc(items);
  const double n = static_cast<double>(items.size());
  RCCurve curve;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double level = items[order[i]].kappa;
    std::size_t j = i;
    while (j < order.size() && items[order[j]].kappa == level) errors += items[order[j++]].loss01;
    const double threshold = j < order.size()
                                 ? items[order[j]].kappa
                                 : std::nextafter(level, -std::numeric_limits<double>::infinity());
    curve.points.push_back({static_cast<double>(j) / n,
                            static_cast<double>(errors) / static_cast<double>(j), threshold});
    i = j;
  }
  return curve;
}

/// Mean over the n items of the selective risk at the threshold each item's
/// kappa induces (ties: every tied item contributes the risk of the full tie
/// group). Equals the area under the RC curve when all kappas are distinct.
inline double aurc(std::span<const ScoredItem> items) {
  if (items.empty()) throw ConfigError("AURC of an empty item set");
  const auto order = detail::order_by_confidence_desc(items);
  double total = 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double level = items[order[i]].kappa;
    std::size_t j = i;
    while (j < order.size() && items[order[j]].kappa == level) errors += items[order[j++]].loss01;
    total += static_cast<double>(j - i) * static_cast<double>(errors) / static_cast<double>(j);
    i = j;
  }
  return total / static_cast<double>(items.size());
}

// Worst possible curve for a model with this many right/wrong predictions:
// every incorrect prediction outranks every correct one. Points are the n
// achievable coverages k/n; thresholds refer to the ranks n..1 of that
// hypothetical ordering.
inline RCCurve worst_case_rc(std::size_t n_correct, std::size_t n_incorrect) {
  const std::size_t n = n_correct + n_incorrect;
  if (n == 0) throw ConfigError("worst-case curve needs at least one item");
  RCCurve curve;
  for (std::size_t k = 1; k <= n; ++k) {
    curve.points.push_back({static_cast<double>(k) / static_cast<double>(n),
                            static_cast<double>(std::min(k, n_incorrect)) / static_cast<double>(k),
                            static_cast<double>(n - k)});
  }
  return curve;
}

// Mean of the curve's risks weighted by the number of items each point adds.
inline double curve_area(const RCCurve& curve, std::size_t n) {
  double total = 0.0;
  long long prev = 0;
  for (const auto& p : curve.points) {
    const long long count = std::llround(p.coverage * static_cast<double>(n));
    total += static_cast<double>(count - prev) * p.risk;
    prev = count;
  }
  return total / static_cast<double>(n);
}

// Mean negative log-likelihood of the true label, probabilities floored at 1e-12.
inline double nll(std::span<const ScoredItem> items) {
  if (items.empty()) throw ConfigError("NLL of an empty item set");
  double total = 0.0;
  for (const auto& it : items) total += cross_entropy(it.probs, it.label);
  return total / static_cast<double>(items.size());
}

inline double brier(std::span<const ScoredItem> items) {
  if (items.empty()) throw ConfigError("Brier score of an empty item set");
  double total = 0.0;
  for (const auto& it : items) {
    for (std::size_t j = 0; j < it.probs.size(); ++j) {
      const double d = it.probs[j] - (j == it.label ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(items.size());
}

inline double accuracy(std::span<const ScoredItem> items) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& it : items) hits += it.loss01 == 0;
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

struct ConfidenceHistograms {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> correct;
  std::vector<std::size_t> incorrect;
};

inline std::size_t histogram_bin(double kappa, double lo, double hi, std::size_t bins) {
  if (!(hi > lo)) return 0;
  const double pos = (kappa - lo) / (hi - lo) * static_cast<double>(bins);
  const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(pos)));
  return std::min(b, bins - 1);
}

// Equal-width bins over [min kappa, max kappa]; the maximum lands in the last bin.
inline ConfidenceHistograms confidence_histograms(std::span<const ScoredItem> items, std::size_t bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  ConfidenceHistograms h;
  h.correct.assign(bins, 0);
  h.incorrect.assign(bins, 0);
  if (items.empty()) return h;
  const auto [mn, mx] = std::minmax_element(items.begin(), items.end(),
                                            [](const auto& a, const auto& b) { return a.kappa < b.kappa; });
  h.lo = mn->kappa;
  h.hi = mx->kappa;
  for (const auto& it : items) {
    auto& hist = it.loss01 ? h.incorrect : h.correct;
    ++hist[histogram_bin(it.kappa, h.lo, h.hi, bins)];
  }
  return h;
}

/// One row of a results table.
struct EvalReport {
  double epsilon = 0.0;
  double effective_epsilon = 0.0;
  double aurc_x1000 = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double accuracy_percent = 0.0;
  // Selective risk at the calibrated coverage (SelNet tables only; NaN otherwise).
  double selective_risk = std::numeric_limits<double>::quiet_NaN();

  bool has_selective_risk() const { return !std::isnan(selective_risk); }
};

inline EvalReport evaluate_items(std::span<const ScoredItem> items, double epsilon,
                                 double effective_epsilon) {
  EvalReport r;
  r.epsilon = epsilon;
  r.effective_epsilon = effective_epsilon;
  r.aurc_x1000 = 1000.0 * aurc(items);
  r.nll = nll(items);
  r.brier = brier(items);
  r.accuracy_percent = 100.0 * accuracy(items);
  return r;
}

inline void write_rc_csv(std::ostream& os, const RCCurve& curve) {
  os << "coverage,risk,threshold\n";
  for (const auto& p : curve.points) {
    os << format_exact(p.coverage) << ',' << format_exact(p.risk) << ',' << format_exact(p.threshold)
       << '\n';
  }
}

}  // namespace ace
