// Analytic input gradients of every confidence kind against central finite
// differences, on randomly drawn models and inputs.

#include <catch_amalgamated.hpp>

#include <functional>
#include <string>

#include "helpers.hpp"

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-5;
constexpr int kTrials = 120;
// Inputs whose ReLU pre-activations come this close to zero are redrawn so
// the finite-difference stencil stays on one linear piece.
constexpr double kKinkMargin = 1e-3;

struct Case {
  ace::ConfidenceScorer scorer;
  std::function<double(const ace::Tensor&, std::uint64_t)> kink;  // distance to the nearest kink
};

struct Outcome {
  int checked = 0;
  double worst = 0.0;
};

ace::Network draw_network(ace::Rng& rng, double dropout = 0.0) {
  const std::size_t d = 2 + rng.below(4);
  const std::size_t k = 2 + rng.below(4);
  std::vector<std::size_t> hidden(1 + rng.below(2));
  for (auto& h : hidden) h = 3 + rng.below(8);
  return testing::random_network(d, hidden, k, rng(), dropout);
}

double mc_kink(const ace::Network& f, const ace::Tensor& x, std::size_t passes, std::uint64_t seed) {
  ace::Rng rng(seed);
  const auto mc = ace::mc_passes(f, x, passes, rng);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : mc.traces) m = std::min(m, testing::kink_distance(f, t));
  return m;
}

Outcome run(const std::function<Case(ace::Rng&)>& make, std::uint64_t seed) {
  Outcome out;
  ace::Rng rng(seed);
  int attempts = 0;
  while (out.checked < kTrials) {
    REQUIRE(++attempts < 20 * kTrials);
    const Case c = make(rng);
    const auto x = testing::random_input(c.scorer.input_dim(), rng);
    const std::uint64_t pass_seed = rng();
    if (c.kink(x, pass_seed) < kKinkMargin) continue;
    const std::size_t label = ace::predict(c.scorer, x);
    auto f = [&](const ace::Tensor& at) {
      ace::Rng r(pass_seed);
      return ace::kappa(c.scorer, at, label, r);
    };
    ace::Rng r(pass_seed);
    const auto analytic = ace::kappa_gradient(c.scorer, x, label, r);
    const auto numeric = testing::numeric_gradient(f, x, kStep);
    // Saturated outputs have gradients below the finite-difference noise floor.
    if (testing::max_abs(numeric) < 1e-6) continue;
    const double err = testing::relative_error(analytic, numeric);
    out.worst = std::max(out.worst, err);
    ++out.checked;
  }
  return out;
}

void check(const std::string& kind, const Outcome& o) {
  INFO(kind << ": worst relative error " << o.worst << " over " << o.checked << " trials");
  CHECK(o.checked >= 100);
  CHECK(o.worst < kTolerance);
}

}  // namespace

TEST_CASE("softmax response gradient") {
  check("softmax", run([](ace::Rng& rng) {
          auto net = testing::handle(draw_network(rng));
          return Case{ace::softmax_scorer(net), [net](const ace::Tensor& x, std::uint64_t) {
                        return testing::kink_distance(*net, ace::forward(*net, x));
                      }};
        },
        1));
}

TEST_CASE("ensemble mean softmax gradient") {
  check("ensemble", run([](ace::Rng& rng) {
          const auto base = draw_network(rng);
          std::vector<ace::NetworkHandle> members;
          const std::size_t m = 2 + rng.below(4);
          for (std::size_t i = 0; i < m; ++i) {
            ace::Rng init(rng());
            members.push_back(testing::handle(ace::init_network(base.specs(), init)));
          }
          return Case{ace::ensemble_scorer(members), [members](const ace::Tensor& x, std::uint64_t) {
                        double d = std::numeric_limits<double>::infinity();
                        for (const auto& n : members) d = std::min(d, testing::kink_distance(*n, ace::forward(*n, x)));
                        return d;
                      }};
        },
        2));
}

TEST_CASE("MC-dropout entropy gradient with replayed masks") {
  check("mc_entropy", run([](ace::Rng& rng) {
          auto net = testing::handle(draw_network(rng, 0.2));
          const std::size_t passes = 2 + rng.below(9);
          return Case{ace::mc_scorer(ace::ScorerKind::mc_entropy, net, passes),
                      [net, passes](const ace::Tensor& x, std::uint64_t seed) {
                        return mc_kink(*net, x, passes, seed);
                      }};
        },
        3));
}

TEST_CASE("MC-dropout variance gradient with replayed masks") {
  check("mc_variance", run([](ace::Rng& rng) {
          auto net = testing::handle(draw_network(rng, 0.2));
          const std::size_t passes = 2 + rng.below(9);
          return Case{ace::mc_scorer(ace::ScorerKind::mc_variance, net, passes),
                      [net, passes](const ace::Tensor& x, std::uint64_t seed) { return mc_kink(*net, x, passes, seed); }};
        },
        4));
}

TEST_CASE("selector head gradient") {
  check("selector", run([](ace::Rng& rng) {
          ace::SelNetArchitecture arch;
          arch.input_dim = 2 + rng.below(3);
          arch.class_count = 2 + rng.below(3);
          arch.backbone_hidden = {4 + rng.below(6)};
          arch.selector_hidden = {3 + rng.below(4)};
          ace::Rng init(rng());
          auto p = std::make_shared<const ace::SelNetParams>(ace::make_selnet(arch, &init));
          return Case{ace::selector_scorer(p), [p](const ace::Tensor& x, std::uint64_t) {
                        const auto t = ace::selnet_trace(*p, x.values());
                        return std::min(testing::kink_distance(p->backbone, t.backbone),
                                        testing::kink_distance(p->selector_head, t.selector));
                      }};
        },
        5));
}

TEST_CASE("SelNet prediction-head softmax gradient") {
  check("selnet_softmax", run([](ace::Rng& rng) {
          ace::SelNetArchitecture arch;
          arch.input_dim = 2 + rng.below(3);
          arch.class_count = 2 + rng.below(3);
          arch.backbone_hidden = {4 + rng.below(6)};
          ace::Rng init(rng());
          auto p = std::make_shared<const ace::SelNetParams>(ace::make_selnet(arch, &init));
          return Case{ace::softmax_scorer(p), [p](const ace::Tensor& x, std::uint64_t) {
                        const auto t = ace::selnet_trace(*p, x.values());
                        return testing::kink_distance(p->backbone, t.backbone);
                      }};
        },
        6));
}

TEST_CASE("signed gradient maps zero to zero and rejects non-finite values") {
  // Constant classifier: zero input weights give a zero gradient.
  ace::Network net({{2, 2, ace::Activation::identity, 0.0}});
  net.layers[0].bias = {1.0, 0.0};
  const auto s = ace::softmax_scorer(testing::handle(net));
  ace::Rng rng(1);
  const auto g = ace::kappa_signed_gradient(s, ace::Tensor::vector({0.5, -0.5}), 0, rng);
  REQUIRE(g == ace::Tensor::vector({0.0, 0.0}));

  ace::Network bad({{1, 2, ace::Activation::identity, 0.0}});
  bad.layers[0].weights = {NAN, 1.0};
  const auto sb = ace::softmax_scorer(testing::handle(bad));
  REQUIRE_THROWS(ace::kappa_signed_gradient(sb, ace::Tensor::vector({1.0}), 1, rng));
}
