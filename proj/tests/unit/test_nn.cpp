#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// 1-in, 2-out linear classifier with logits [w0*x + b0, w1*x + b1].
ace::Network linear2(double w0, double w1, double b0 = 0.0, double b1 = 0.0) {
  ace::Network net({{1, 2, ace::Activation::identity, 0.0}});
  net.layers[0].weights = {w0, w1};
  net.layers[0].bias = {b0, b1};
  return net;
}

}  // namespace

TEST_CASE("softmax matches a high-precision reference") {
  const auto p = ace::softmax(ace::Tensor::vector({1.0, 2.0, 3.0}));
  CHECK_THAT(p[0], WithinAbs(0.090030573170380457998, 1e-15));
  CHECK_THAT(p[1], WithinAbs(0.24472847105479765247, 1e-15));
  CHECK_THAT(p[2], WithinAbs(0.66524095577482188953, 1e-15));
}

TEST_CASE("softmax is shift invariant and stable for large logits") {
  const auto a = ace::softmax(ace::Tensor::vector({1000.0, 1001.0}));
  const auto b = ace::softmax(ace::Tensor::vector({0.0, 1.0}));
  CHECK(ace::max_abs_difference(a, b) < 1e-15);
  REQUIRE(a.all_finite());
  REQUIRE_THROWS_AS(ace::softmax(ace::Tensor::vector({1.0, NAN})), ace::DomainError);
  REQUIRE_THROWS_AS(ace::softmax(ace::Tensor{}), ace::DimensionError);
}

TEST_CASE("cross entropy and the probability floor") {
  CHECK_THAT(ace::cross_entropy(ace::Tensor::vector({0.2, 0.8}), 0), WithinAbs(1.6094379124341003746, 1e-12));
  CHECK_THAT(ace::cross_entropy(ace::Tensor::vector({0.0, 1.0}), 0), WithinRel(-std::log(1e-12), 1e-12));
  REQUIRE_THROWS_AS(ace::cross_entropy(ace::Tensor::vector({0.5, 0.5}), 2), ace::DomainError);
}

TEST_CASE("softmax confidence of logits [3,1]") {
  const auto net = linear2(3.0, 1.0);
  const auto x = ace::Tensor::vector({1.0});
  REQUIRE(ace::predict(net, x) == 0);
  CHECK_THAT(ace::kappa_softmax(net, x, 0), WithinAbs(0.88079707797788244406, 1e-12));
}

TEST_CASE("argmax ties go to the lowest index") {
  const std::vector<double> v{0.3, 0.7, 0.7};
  REQUIRE(ace::argmax(v) == 1);
  const auto net = linear2(1.0, 1.0);
  REQUIRE(ace::predict(net, ace::Tensor::vector({2.0})) == 0);
}

TEST_CASE("layer specs are validated") {
  using A = ace::Activation;
  REQUIRE_THROWS_AS(ace::Network(std::vector<ace::LayerSpec>{}), ace::ConfigError);
  REQUIRE_THROWS_AS(ace::Network({{2, 3, A::relu, 0.0}, {4, 2, A::identity, 0.0}}), ace::ConfigError);
  REQUIRE_THROWS_AS(ace::Network({{2, 3, A::relu, 1.0}, {3, 2, A::identity, 0.0}}), ace::ConfigError);
  REQUIRE_THROWS_AS(ace::Network({{2, 3, A::relu, 0.0}, {3, 2, A::relu, 0.0}}), ace::ConfigError);
  REQUIRE_THROWS_AS(ace::Network({{2, 0, A::identity, 0.0}}), ace::ConfigError);
  REQUIRE_NOTHROW(ace::Network({{2, 3, A::relu, 0.0}, {3, 1, A::relu, 0.0}}, false));
}

TEST_CASE("forward checks its input") {
  const auto net = testing::random_network(2, {4}, 3, 1, 0.5);
  REQUIRE_THROWS_AS(ace::forward(net, ace::Tensor::vector({1.0})), ace::DimensionError);
  REQUIRE_THROWS_AS(ace::forward(net, ace::Tensor::vector({1.0, INFINITY})), ace::DomainError);
  REQUIRE_THROWS_AS(ace::forward(net, ace::Tensor::vector({1.0, 2.0}), true, nullptr), ace::ConfigError);
}

TEST_CASE("dropout masks use inverted scaling and replay exactly") {
  const double rate = 0.25;
  const auto net = testing::random_network(3, {64, 64}, 4, 5, rate);
  ace::Rng rng(11);
  const auto x = ace::Tensor::vector({0.3, -1.2, 0.8});
  const auto t = ace::forward(net, x, true, &rng);
  REQUIRE(t.has_masks());
  std::size_t zeros = 0, total = 0;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    for (double m : t.masks[l]) {
      REQUIRE((m == 0.0 || m == 1.0 / (1.0 - rate)));
      zeros += (m == 0.0);
      ++total;
    }
  }
  REQUIRE(t.masks.back().empty());
  CHECK(zeros > 0);
  CHECK(zeros < total / 2);

  const auto replay = ace::forward_replay(net, x, t);
  REQUIRE(replay.logits == t.logits);
  const auto plain = ace::forward(net, x);
  REQUIRE_FALSE(plain.has_masks());
  REQUIRE(plain.logits != t.logits);
}

TEST_CASE("relu subgradient at zero is zero") {
  ace::Network net({{1, 1, ace::Activation::relu, 0.0}, {1, 2, ace::Activation::identity, 0.0}});
  net.layers[0].weights = {1.0};
  net.layers[0].bias = {0.0};
  net.layers[1].weights = {1.0, -1.0};
  net.layers[1].bias = {0.0, 0.0};
  const auto x = ace::Tensor::vector({0.0});
  const auto g = ace::input_gradient(net, x, ace::ClassProbability{0});
  REQUIRE(g[0] == 0.0);
}

TEST_CASE("parameter gradients match finite differences") {
  auto net = testing::random_network(3, {5, 4}, 3, 21);
  const auto x = ace::Tensor::vector({0.4, -0.7, 1.1});
  const std::size_t label = 2;
  auto loss = [&](const ace::Network& n) {
    return ace::cross_entropy(ace::softmax(ace::forward(n, x).logits), label);
  };
  const auto trace = ace::forward(net, x);
  const auto probs = ace::softmax(trace.logits);
  std::vector<double> d_logits(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) d_logits[k] = probs[k] - (k == label ? 1.0 : 0.0);
  auto grads = ace::zeros_like(net);
  ace::backward(net, trace, d_logits, &grads);

  const double h = 1e-6;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].weights.size(); ++i) {
      auto hi = net, lo = net;
      hi.layers[l].weights[i] += h;
      lo.layers[l].weights[i] -= h;
      const double fd = (loss(hi) - loss(lo)) / (2 * h);
      CHECK_THAT(grads.layers[l].weights[i], WithinAbs(fd, 1e-7));
    }
    for (std::size_t i = 0; i < net.layers[l].bias.size(); ++i) {
      auto hi = net, lo = net;
      hi.layers[l].bias[i] += h;
      lo.layers[l].bias[i] -= h;
      const double fd = (loss(hi) - loss(lo)) / (2 * h);
      CHECK_THAT(grads.layers[l].bias[i], WithinAbs(fd, 1e-7));
    }
  }
}

TEST_CASE("head values and out-of-range heads") {
  const auto net = testing::random_network(2, {3}, 3, 4);
  const auto t = ace::forward(net, ace::Tensor::vector({0.1, 0.2}));
  const auto p = ace::softmax(t.logits);
  REQUIRE(ace::head_value(t, ace::ClassProbability{1}) == p[1]);
  REQUIRE(ace::head_value(t, ace::NegativeEntropy{}) == ace::negative_entropy(p.values()));
  REQUIRE_THROWS_AS(ace::head_value(t, ace::ClassProbability{3}), ace::DomainError);
  REQUIRE_THROWS_AS(ace::input_gradient(net, ace::Tensor::vector({0.1, 0.2}), ace::ClassProbability{5}),
                    ace::DomainError);
}

TEST_CASE("initialisation is seed-determined with zero biases") {
  const auto a = testing::random_network(2, {8}, 3, 77);
  const auto b = testing::random_network(2, {8}, 3, 77);
  const auto c = testing::random_network(2, {8}, 3, 78);
  REQUIRE(a == b);
  REQUIRE_FALSE(a == c);
  const double bound = std::sqrt(6.0 / 10.0);
  for (double w : a.layers[0].weights) REQUIRE(std::abs(w) <= bound);
  for (double v : a.layers[0].bias) REQUIRE(v == 0.0);
  REQUIRE(a.parameter_count() == 2 * 8 + 8 + 8 * 3 + 3);
}
