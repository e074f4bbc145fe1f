#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

namespace {

// Logistic model in one dimension: logits [0, w x + b].
ace::ConfidenceScorer logistic(double w = 1.0, double b = 0.0) {
  ace::Network net({{1, 2, ace::Activation::identity, 0.0}});
  net.layers[0].weights = {0.0, w};
  net.layers[0].bias = {0.0, b};
  return ace::softmax_scorer(testing::handle(std::move(net)));
}

ace::AttackConfig config(double eps) {
  ace::AttackConfig c;
  c.epsilon = eps;
  return c;
}

ace::AttackOutcome attack(const ace::ConfidenceScorer& s, double x, std::size_t y, const ace::AttackConfig& cfg) {
  const auto oracle = ace::label_oracle(s);
  ace::Rng rng(1);
  return ace::ace(oracle, s, ace::Tensor::vector({x}), y, cfg, rng);
}

// Number of halvings the logistic oracle needs before a step keeps the label.
// A correct positive sample moves to x - e and keeps class 1 iff x - e > 0
// (a tie at 0 resolves to class 0). A correct negative sample moves to x + e
// and keeps class 0 iff x + e <= 0. Misclassified samples move away from the
// boundary and never need a halving.
int predicted_halvings(double x, bool correct, double eps, int max_iter) {
  if (!correct) return 0;
  double e = eps;
  for (int k = 0; k < max_iter; ++k) {
    const bool keeps = x > 0 ? (x - e > 0) : (x + e <= 0);
    if (keeps) return k;
    e *= 0.5;
  }
  return -1;
}

}  // namespace

TEST_CASE("closed-form logistic steps") {
  const auto s = logistic();
  auto o = attack(s, 2.0, 1, config(0.1));
  REQUIRE(o.perturbed);
  REQUIRE(o.x_tilde[0] == 2.0 - 0.1);
  REQUIRE(o.effective_epsilon == 0.1);
  REQUIRE(o.iterations_used == 1);

  o = attack(s, 0.05, 1, config(0.1));
  REQUIRE(o.effective_epsilon == 0.025);
  REQUIRE(o.iterations_used == 3);
  REQUIRE(o.x_tilde[0] == 0.05 - 0.025);

  // Misclassified: confidence is pushed up, away from the boundary.
  o = attack(s, 2.0, 0, config(0.1));
  REQUIRE(o.x_tilde[0] == 2.0 + 0.1);
  REQUIRE(o.victim_label == 1);
}

TEST_CASE("effective epsilon follows the geometric decay schedule") {
  const auto s = logistic();
  ace::Rng rng(99);
  int checked = 0, exhausted = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const double x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::pow(10.0, rng.uniform(-7.0, 0.5));
    const double eps = std::pow(10.0, rng.uniform(-3.0, 0.0));
    const std::size_t predicted = x > 0 ? 1 : 0;
    const bool correct = rng.uniform() < 0.7;
    const std::size_t y = correct ? predicted : 1 - predicted;
    auto cfg = config(eps);
    const auto o = attack(s, x, y, cfg);
    const int k = predicted_halvings(x, correct, eps, cfg.max_iterations);
    if (k < 0) {
      ++exhausted;
      REQUIRE_FALSE(o.perturbed);
      REQUIRE(o.effective_epsilon == 0.0);
      REQUIRE(o.x_tilde[0] == x);
      REQUIRE(o.iterations_used == cfg.max_iterations);
    } else {
      REQUIRE(o.perturbed);
      REQUIRE(o.effective_epsilon == eps * std::pow(0.5, k));
      REQUIRE(o.iterations_used == k + 1);
    }
    ++checked;
  }
  REQUIRE(checked == 2000);
  REQUIRE(exhausted > 0);
}

TEST_CASE("zero epsilon leaves inputs untouched") {
  const auto s = logistic();
  const auto o = attack(s, 0.7, 1, config(0.0));
  REQUIRE_FALSE(o.perturbed);
  REQUIRE(o.x_tilde[0] == 0.7);
  REQUIRE(o.iterations_used == 0);
}

TEST_CASE("the clamp is applied before the label check") {
  const auto s = logistic();
  auto cfg = config(1.0);
  cfg.clamp = ace::ClampDomain::uniform(1, 0.2, 5.0);
  const auto o = attack(s, 0.5, 1, cfg);
  REQUIRE(o.perturbed);
  REQUIRE(o.x_tilde[0] == 0.2);
  REQUIRE(o.effective_epsilon == 1.0);

  cfg.clamp = ace::ClampDomain::uniform(2, 0.0, 1.0);
  REQUIRE_THROWS_AS(attack(s, 0.5, 1, cfg), ace::DimensionError);
}

TEST_CASE("attack config validation") {
  const auto s = logistic();
  REQUIRE_THROWS_AS(attack(s, 1.0, 1, config(-0.1)), ace::ConfigError);
  REQUIRE_THROWS_AS(attack(s, 1.0, 1, config(NAN)), ace::ConfigError);
  auto cfg = config(0.1);
  cfg.epsilon_decay = 1.0;
  REQUIRE_THROWS_AS(attack(s, 1.0, 1, cfg), ace::ConfigError);
  cfg = config(0.1);
  cfg.max_iterations = 0;
  REQUIRE_THROWS_AS(attack(s, 1.0, 1, cfg), ace::ConfigError);
  REQUIRE(ace::parse_attack_mode("blackbox") == ace::AttackMode::black_box);
  REQUIRE(ace::parse_attack_target("indirect") == ace::AttackTarget::indirect_softmax);
  REQUIRE_THROWS_AS(ace::parse_attack_mode("greybox"), ace::ConfigError);
}

namespace {

struct DirectionStats {
  int correct = 0, incorrect = 0;
  int correct_violations = 0, incorrect_violations = 0;
};

// Random linear-softmax victims with `classes` outputs, attacked at random
// epsilons; counts accepted steps that fail to move kappa the intended way.
DirectionStats direction_trials(std::size_t classes, std::uint64_t seed) {
  DirectionStats st;
  ace::Rng rng(seed);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    auto net = testing::random_network(d, {}, classes, rng());
    for (auto& b : net.layers[0].bias) b = rng.normal();
    const auto s = ace::softmax_scorer(testing::handle(net));
    const auto oracle = ace::label_oracle(s);
    for (int j = 0; j < 10; ++j) {
      const auto x = testing::random_input(d, rng, 2.0);
      const std::size_t y = rng.below(classes);
      ace::Rng r(rng());
      const auto o = ace::ace(oracle, s, x, y, config(std::pow(10.0, rng.uniform(-3.0, 0.0))), r);
      if (!o.perturbed) continue;
      ace::Rng r1(0), r2(0);
      const double before = ace::kappa(s, x, o.victim_label, r1);
      const double after = ace::kappa(s, o.x_tilde, o.victim_label, r2);
      if (o.victim_label == y) {
        ++st.correct;
        st.correct_violations += !(after < before);
      } else {
        ++st.incorrect;
        st.incorrect_violations += !(after > before);
      }
    }
  }
  return st;
}

}  // namespace

// log p_y is concave in x for linear logits, so a descent step on a correct
// sample always lowers confidence, for any number of classes.
TEST_CASE("accepted steps lower confidence of correct samples on linear softmax victims") {
  for (std::size_t k = 2; k <= 6; ++k) {
    const auto st = direction_trials(k, 100 + k);
    INFO("classes " << k);
    REQUIRE(st.correct > 200);
    REQUIRE(st.correct_violations == 0);
  }
}

// With two classes kappa is monotone along the sign direction.
TEST_CASE("accepted steps raise confidence of incorrect samples on binary linear victims") {
  const auto st = direction_trials(2, 7);
  REQUIRE(st.incorrect > 200);
  REQUIRE(st.incorrect_violations == 0);
}

TEST_CASE("black-box attacks only query victim labels and count them") {
  auto victim_net = testing::random_network(3, {8}, 3, 1);
  auto proxy_net = testing::random_network(3, {8}, 3, 2);
  const auto victim = ace::softmax_scorer(testing::handle(victim_net));
  const auto proxy = ace::softmax_scorer(testing::handle(proxy_net));

  ace::AttackConfig cfg = config(0.3);
  cfg.mode = ace::AttackMode::black_box;
  REQUIRE_THROWS_AS(ace::gradient_source(victim, cfg, nullptr), ace::ConfigError);
  const auto grad = ace::gradient_source(victim, cfg, &proxy);
  REQUIRE(grad.models.front() == proxy.models.front());

  ace::Rng rng(5);
  ace::LabeledDataset data;
  data.class_count = 3;
  for (int i = 0; i < 200; ++i) data.push_back(testing::random_input(3, rng), rng.below(3));
  const auto oracle = ace::label_oracle(victim);
  const auto run = ace::attack_dataset(oracle, grad, data, cfg, 11, 4);
  std::uint64_t expected = 0;
  for (const auto& o : run.outcomes) {
    expected += 1 + static_cast<std::uint64_t>(o.iterations_used);
    REQUIRE(o.victim_label == ace::predict(victim, o.x_tilde));
  }
  REQUIRE(run.summary.query_count == expected);
  REQUIRE(oracle.queries() == expected);

  const auto serial = ace::attack_dataset(ace::label_oracle(victim), grad, data, cfg, 11, 1);
  for (std::size_t i = 0; i < data.size(); ++i) REQUIRE(serial.outcomes[i].x_tilde == run.outcomes[i].x_tilde);
  REQUIRE(serial.summary.mean_effective_epsilon == run.summary.mean_effective_epsilon);
}

TEST_CASE("gradient source selection") {
  auto net = testing::random_network(2, {4}, 3, 3, 0.2);
  const auto mc = ace::mc_scorer(ace::ScorerKind::mc_entropy, testing::handle(net), 5);
  ace::AttackConfig cfg;
  REQUIRE(ace::gradient_source(mc, cfg, nullptr).kind == ace::ScorerKind::mc_entropy);
  cfg.target = ace::AttackTarget::indirect_softmax;
  const auto view = ace::gradient_source(mc, cfg, nullptr);
  REQUIRE(view.kind == ace::ScorerKind::softmax_response);
  REQUIRE(view.models.front() == mc.models.front());
}

TEST_CASE("attacked MC victims keep their deterministic labels") {
  ace::DatasetSpec spec;
  spec.n_train = 400;
  spec.n_validation = 10;
  spec.n_test = 200;
  const auto d = ace::gen_dataset(spec, 8);
  const auto trained = ace::train_sgd(ace::mlp_specs(2, {16}, 4, 0.2), d.train, {0.05, 5, 32, 1, 0.9});
  const auto victim = ace::mc_scorer(ace::ScorerKind::mc_variance, testing::handle(trained.params), 8);
  const auto run = ace::attack_dataset(ace::label_oracle(victim), victim, d.test, config(0.2), 3);
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    REQUIRE(ace::predict(victim, run.outcomes[i].x_tilde) == ace::predict(victim, d.test.features[i]));
  }
  REQUIRE(run.summary.fraction_perturbed > 0.9);
}
