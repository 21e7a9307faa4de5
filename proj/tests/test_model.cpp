#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include <Eigen/Dense>

#include "lmab/io.hpp"
#include "lmab/model.hpp"

using namespace lmab;

namespace {

LmabInstance tiny_instance(std::vector<double> weights, std::vector<double> probs, int actions,
                           int horizon) {
  LmabInstance inst;
  inst.num_contexts = static_cast<int>(weights.size());
  inst.num_actions = actions;
  inst.horizon = horizon;
  inst.support = RewardSupport::bernoulli();
  inst.weights = std::move(weights);
  inst.reward_probs = std::move(probs);
  return inst;
}

LmabInstance random_tiny(Rng& rng, int m, int a, int h) {
  GeneratorOptions gen;
  gen.num_contexts = m;
  gen.num_actions = a;
  gen.num_values = 2;
  gen.horizon = h;
  gen.rank = m;
  return generate_random_instance(gen, rng);
}

PolicyTree random_policy_tree(Rng& rng, int actions, int depth, int branching) {
  PolicyTree tree;
  tree.depth = depth;
  tree.branching = branching;
  // complete tree, one node per history
  int level_start = 0;
  int level_size = 1;
  for (int t = 0; t < depth; ++t) {
    for (int i = 0; i < level_size; ++i) {
      PolicyTree::Node node;
      node.action = rng.uniform_int(actions);
      tree.nodes.push_back(node);
    }
    level_start += level_size;
    level_size *= branching;
  }
  // wire children
  int next_child = 1;
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    if (next_child >= static_cast<int>(tree.nodes.size())) break;
    tree.nodes[i].children.resize(static_cast<size_t>(branching));
    for (int b = 0; b < branching; ++b) tree.nodes[i].children[static_cast<size_t>(b)] = next_child++;
  }
  return tree;
}

}  // namespace

TEST_CASE("validate_instance accepts the minimal instance") {
  const auto inst = tiny_instance({1.0}, {0.5, 0.5}, 1, 1);
  const auto rep = validate_instance(inst);
  CHECK(rep.ok);
  CHECK(rep.violations.empty());
}

TEST_CASE("validate_instance reports weight and row-sum violations") {
  auto inst = tiny_instance({0.6, 0.5}, {0.5, 0.5, 0.5, 0.5}, 1, 1);
  auto rep = validate_instance(inst);
  CHECK_FALSE(rep.ok);
  bool found = false;
  for (const auto& v : rep.violations) found = found || v.find("weights sum") != std::string::npos;
  CHECK(found);

  inst = tiny_instance({1.0}, {0.7, 0.4}, 1, 1);
  rep = validate_instance(inst);
  CHECK_FALSE(rep.ok);
  found = false;
  for (const auto& v : rep.violations) found = found || v.find("row sum") != std::string::npos;
  CHECK(found);
}

TEST_CASE("sample_episode on a degenerate distribution is constant") {
  const auto inst = tiny_instance({1.0}, {0.0, 1.0}, 1, 4);
  Rng rng(3);
  const Episode ep = sample_episode(inst, PolicyTree::fixed_action(0, 4, 2), rng);
  for (double r : ep.rewards) CHECK(r == 1.0);
}

TEST_CASE("sample_episode is deterministic under a fixed seed") {
  Rng gen(11);
  const auto inst = random_tiny(gen, 2, 3, 5);
  const auto policy = PolicyTree::fixed_action(1, 5, 2);
  Rng a(99), b(99);
  const Episode e1 = sample_episode(inst, policy, a);
  const Episode e2 = sample_episode(inst, policy, b);
  CHECK(e1.context == e2.context);
  CHECK(e1.rewards == e2.rewards);
  CHECK(e1.actions == e2.actions);
}

TEST_CASE("point-mass mixing always selects the first context") {
  const auto inst = tiny_instance({1.0, 0.0}, {0.2, 0.8, 0.9, 0.1}, 1, 2);
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Episode ep = sample_episode(inst, PolicyTree::fixed_action(0, 2, 2), rng);
    CHECK(ep.context == 0);
  }
}

TEST_CASE("episode marginal frequencies stay inside the Hoeffding band") {
  Rng gen(21);
  const auto inst = random_tiny(gen, 3, 4, 2);
  const int64_t count = 100000;
  const auto episodes =
      sample_episodes(inst, policy_from_tree(PolicyTree::fixed_action(1, 2, 2)), count, 77);
  std::vector<double> freq(2, 0.0);
  for (const auto& ep : episodes) freq[static_cast<size_t>(ep.reward_idx[0])] += 1.0;
  for (auto& f : freq) f /= static_cast<double>(count);
  const double band = std::sqrt(std::log(2.0 * 2 / 1e-3) / (2.0 * count));
  for (int zi = 0; zi < 2; ++zi) {
    double expect = 0.0;
    for (int m = 0; m < 3; ++m) expect += inst.weights[static_cast<size_t>(m)] * inst.mu(m, 1, zi);
    CHECK(std::abs(freq[static_cast<size_t>(zi)] - expect) <= band);
  }
}

TEST_CASE("generate_random_instance respects the rank constraint") {
  Rng rng(5);
  GeneratorOptions gen;
  gen.num_contexts = 4;
  gen.num_actions = 20;
  gen.num_values = 2;
  gen.horizon = 3;

  SUBCASE("rank 1 collapses the second moment") {
    gen.rank = 1;
    const auto inst = generate_random_instance(gen, rng);
    // eigenvalues of sum_m w_m mu_m mu_m^T via a small Gram computation
    Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(40, 40);
    for (int m = 0; m < 4; ++m) {
      const auto v = inst.mu_vector(m);
      Eigen::VectorXd mu(40);
      for (int i = 0; i < 40; ++i) mu(i) = v[static_cast<size_t>(i)];
      m2 += inst.weights[static_cast<size_t>(m)] * mu * mu.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m2);
    int above = 0;
    for (int i = 0; i < 40; ++i)
      if (es.eigenvalues()(i) > 1e-10) ++above;
    CHECK(above == 1);
  }

  SUBCASE("rank 4 keeps exactly four directions") {
    gen.rank = 4;
    const auto inst = generate_random_instance(gen, rng);
    Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(40, 40);
    for (int m = 0; m < 4; ++m) {
      const auto v = inst.mu_vector(m);
      Eigen::VectorXd mu(40);
      for (int i = 0; i < 40; ++i) mu(i) = v[static_cast<size_t>(i)];
      m2 += inst.weights[static_cast<size_t>(m)] * mu * mu.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m2);
    int above = 0;
    for (int i = 0; i < 40; ++i)
      if (es.eigenvalues()(i) > 1e-10) ++above;
    CHECK(above == 4);
    // (r+1)-th eigenvalue below threshold
    CHECK(es.eigenvalues()(40 - 5) < 1e-10);
  }

  SUBCASE("generated instances validate and separation mode enforces gamma") {
    gen.rank = 3;
    gen.separation = SeparationConfig{0.15, true};
    for (int t = 0; t < 10; ++t) {
      const auto inst = generate_random_instance(gen, rng);
      CHECK(validate_instance(inst).ok);
      CHECK(separation_level(inst) >= 0.15);
    }
  }

  SUBCASE("infeasible rank is rejected") {
    gen.rank = 5;  // > M
    CHECK_THROWS(generate_random_instance(gen, rng));
  }
}

TEST_CASE("exact_policy_value matches the one-step expectation") {
  const auto inst = tiny_instance({0.3, 0.7}, {0.2, 0.8, 0.6, 0.4}, 1, 1);
  const double v = exact_policy_value(inst, PolicyTree::fixed_action(0, 1, 2));
  CHECK(v == doctest::Approx(0.3 * 0.8 + 0.7 * 0.4).epsilon(1e-12));
}

TEST_CASE("deterministic unit rewards give V = H") {
  const auto inst = tiny_instance({1.0}, {0.0, 1.0}, 1, 6);
  CHECK(exact_policy_value(inst, PolicyTree::fixed_action(0, 6, 2)) ==
        doctest::Approx(6.0).epsilon(1e-12));
  const auto mc = monte_carlo_policy_value(inst, PolicyTree::fixed_action(0, 6, 2), 500, 3);
  CHECK(mc.mean == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(mc.stderr_ == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("exact and Monte Carlo values agree on random tiny instances") {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    const auto inst = random_tiny(rng, 2, 2, 3);
    const auto tree = random_policy_tree(rng, 2, 3, 2);
    const double exact = exact_policy_value(inst, tree);
    const auto mc = monte_carlo_policy_value(inst, tree, 20000, derive_seed(55, t));
    CHECK(std::abs(mc.mean - exact) <= 4.0 * std::max(mc.stderr_, 1e-4));
  }
}

TEST_CASE("monte carlo estimates are reproducible") {
  Rng gen(8);
  const auto inst = random_tiny(gen, 2, 3, 4);
  const auto tree = PolicyTree::fixed_action(2, 4, 2);
  const auto a = monte_carlo_policy_value(inst, tree, 5000, 42);
  const auto b = monte_carlo_policy_value(inst, tree, 5000, 42);
  CHECK(a.mean == b.mean);
  CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("trajectory distribution sums to one and matches mu at H=1") {
  const auto inst = tiny_instance({1.0}, {0.35, 0.65}, 1, 1);
  const auto dist = exact_trajectory_distribution(inst, PolicyTree::fixed_action(0, 1, 2));
  REQUIRE(dist.size() == 2);
  double total = 0.0;
  for (const auto& [key, pr] : dist) {
    total += pr;
    CHECK(pr == doctest::Approx(inst.mu(0, 0, key.reward_idx[0])).epsilon(1e-12));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("trajectory distributions sum to one for random policies") {
  Rng rng(23);
  for (int t = 0; t < 10; ++t) {
    const auto inst = random_tiny(rng, 3, 3, 3);
    const auto tree = random_policy_tree(rng, 3, 3, 2);
    const auto dist = exact_trajectory_distribution(inst, tree);
    double total = 0.0;
    for (const auto& [key, pr] : dist) total += pr;
    CHECK(std::abs(total - 1.0) <= 1e-10);
  }
}

TEST_CASE("identical instances have zero total-variation distance") {
  Rng rng(31);
  const auto inst = random_tiny(rng, 2, 2, 2);
  const auto tree = random_policy_tree(rng, 2, 2, 2);
  const auto d1 = exact_trajectory_distribution(inst, tree);
  const auto d2 = exact_trajectory_distribution(inst, tree);
  double tv = 0.0;
  for (const auto& [key, pr] : d1) tv += std::abs(pr - d2.at(key));
  CHECK(tv == 0.0);
}

TEST_CASE("learner-facing episode view hides the context") {
  Rng rng(2);
  const auto inst = random_tiny(rng, 2, 2, 3);
  Rng ep_rng(4);
  const Episode ep = sample_episode(inst, PolicyTree::fixed_action(0, 3, 2), ep_rng);
  const EpisodeView view(ep);
  CHECK(view.actions.size() == 3);
  CHECK(view.rewards.size() == 3);
}

TEST_CASE("instance files round-trip bit-exactly") {
  Rng rng(77);
  for (int t = 0; t < 5; ++t) {
    GeneratorOptions gen;
    gen.num_contexts = 2 + rng.uniform_int(3);
    gen.num_actions = 2 + rng.uniform_int(5);
    gen.num_values = 2 + rng.uniform_int(3);
    gen.horizon = 2 + rng.uniform_int(4);
    gen.rank = 1 + rng.uniform_int(gen.num_contexts);
    const auto inst = generate_random_instance(gen, rng);
    const auto copy = instance_from_text(instance_to_text(inst));
    CHECK(copy.weights == inst.weights);
    CHECK(copy.reward_probs == inst.reward_probs);
    CHECK(copy.support.values == inst.support.values);
    CHECK(copy.horizon == inst.horizon);
    // and the rewrite is byte-identical
    CHECK(instance_to_text(copy) == instance_to_text(inst));
  }
}

TEST_CASE("policy files round-trip") {
  Rng rng(13);
  const auto tree = random_policy_tree(rng, 4, 3, 2);
  const auto copy = policy_from_text(policy_to_text(tree));
  REQUIRE(copy.nodes.size() == tree.nodes.size());
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    CHECK(copy.nodes[i].action == tree.nodes[i].action);
    CHECK(copy.nodes[i].children == tree.nodes[i].children);
  }
}

TEST_CASE("policies shallower than the horizon are rejected") {
  const auto inst = tiny_instance({1.0}, {0.5, 0.5}, 1, 3);
  const auto shallow = PolicyTree::fixed_action(0, 2, 2);
  Rng rng(1);
  CHECK_THROWS(sample_episode(inst, shallow, rng));
  CHECK_THROWS(exact_policy_value(inst, shallow));
}
