#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "ace/ace.hpp"

namespace testing {

inline ace::Network random_network(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                                   std::uint64_t seed, double dropout = 0.0) {
  ace::Rng rng(seed);
  return ace::init_network(ace::mlp_specs(in, hidden, out, dropout), rng);
}

inline ace::NetworkHandle handle(ace::Network n) { return std::make_shared<const ace::Network>(std::move(n)); }

inline ace::Tensor random_input(std::size_t d, ace::Rng& rng, double scale = 1.0) {
  std::vector<double> v(d);
  for (auto& x : v) x = scale * rng.normal();
  return ace::Tensor::vector(std::move(v));
}

// Central differences of f at x with step h.
inline ace::Tensor numeric_gradient(const std::function<double(const ace::Tensor&)>& f, const ace::Tensor& x,
                                    double h = 1e-5) {
  ace::Tensor g = ace::Tensor::zeros(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ace::Tensor hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline double max_abs(const ace::Tensor& t) {
  double m = 0.0;
  for (double v : t) m = std::max(m, std::abs(v));
  return m;
}

// Max-norm relative error between two gradients.
inline double relative_error(const ace::Tensor& analytic, const ace::Tensor& numeric) {
  const double scale = std::max(max_abs(analytic), max_abs(numeric));
  if (scale == 0.0) return 0.0;
  return ace::max_abs_difference(analytic, numeric) / scale;
}

// Smallest |pre-activation| over the hidden ReLU units of a pass.
inline double kink_distance(const ace::Network& net, const ace::ForwardTrace& t) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].spec.activation != ace::Activation::relu) continue;
    for (double v : t.pre[l]) m = std::min(m, std::abs(v));
  }
  return m;
}

inline ace::ScoredItem item(double kappa, int loss01, std::size_t index = 0) {
  ace::ScoredItem it;
  it.index = index;
  it.kappa = kappa;
  it.loss01 = loss01;
  it.label = 0;
  it.predicted = loss01 ? 1 : 0;
  return it;
}

}  // namespace testing
