#include "lmab/planning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace lmab {

Belief uniform_belief(int contexts) {
  Belief b;
  b.probs.assign(static_cast<size_t>(contexts), 1.0 / contexts);
  return b;
}

Belief belief_update(const LmabInstance& model, const Belief& belief, int action,
                     int reward_idx) {
  if (reward_idx < 0 || reward_idx >= model.z())
    throw std::invalid_argument("reward outside the support");
  Belief next;
  next.probs.resize(belief.probs.size());
  double norm = 0.0;
  for (int m = 0; m < model.num_contexts; ++m) {
    const double v = belief.probs[static_cast<size_t>(m)] * model.mu(m, action, reward_idx);
    next.probs[static_cast<size_t>(m)] = v;
    norm += v;
  }
  if (norm <= 0.0) {
    next = uniform_belief(model.num_contexts);
    next.degenerate = true;
    return next;
  }
  for (auto& v : next.probs) v /= norm;
  return next;
}

namespace {

// quantized belief key, 12 decimal digits
std::string belief_key(int t, const std::vector<double>& b) {
  std::string key = std::to_string(t);
  key.reserve(key.size() + b.size() * 14);
  for (double v : b) {
    const auto q = static_cast<int64_t>(std::llround(v * 1e12));
    key.push_back('|');
    key += std::to_string(q);
  }
  return key;
}

struct Planner {
  const LmabInstance* model;
  int horizon;
  std::unordered_map<std::string, std::pair<double, int>> memo;  // value, argmax action

  std::pair<double, int> value(int t, const std::vector<double>& belief) {
    if (t == horizon) return {0.0, -1};
    const std::string key = belief_key(t, belief);
    const auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    if (memo.size() > static_cast<size_t>(kBeliefGuard))
      throw std::runtime_error("reachable-belief guard exceeded; use the QMDP fallback");

    double best = -std::numeric_limits<double>::infinity();
    int best_action = 0;
    std::vector<double> next(belief.size());
    for (int a = 0; a < model->num_actions; ++a) {
      double q = 0.0;
      for (int zi = 0; zi < model->z(); ++zi) {
        double pz = 0.0;
        for (int m = 0; m < model->num_contexts; ++m)
          pz += belief[static_cast<size_t>(m)] * model->mu(m, a, zi);
        if (pz <= 0.0) continue;
        for (int m = 0; m < model->num_contexts; ++m)
          next[static_cast<size_t>(m)] =
              belief[static_cast<size_t>(m)] * model->mu(m, a, zi) / pz;
        q += pz * (model->support.values[static_cast<size_t>(zi)] + value(t + 1, next).first);
      }
      if (q > best + 1e-15) {
        best = q;
        best_action = a;
      }
    }
    const auto out = std::make_pair(best, best_action);
    memo.emplace(key, out);
    return out;
  }

  int build_tree(PolicyTree& tree, int t, const std::vector<double>& belief) {
    const int action = value(t, belief).second;
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({action, {}});
    if (t + 1 == horizon) return id;
    tree.nodes[static_cast<size_t>(id)].children.assign(static_cast<size_t>(model->z()), -1);
    std::vector<double> next(belief.size());
    for (int zi = 0; zi < model->z(); ++zi) {
      double pz = 0.0;
      for (int m = 0; m < model->num_contexts; ++m)
        pz += belief[static_cast<size_t>(m)] * model->mu(m, action, zi);
      if (pz > 0.0) {
        for (int m = 0; m < model->num_contexts; ++m)
          next[static_cast<size_t>(m)] =
              belief[static_cast<size_t>(m)] * model->mu(m, action, zi) / pz;
      } else {
        // unreachable branch: any continuation is value-neutral
        next.assign(belief.size(), 1.0 / static_cast<double>(belief.size()));
      }
      const int child = build_tree(tree, t + 1, next);
      tree.nodes[static_cast<size_t>(id)].children[static_cast<size_t>(zi)] = child;
    }
    return id;
  }
};

}  // namespace

PlanResult plan_exact(const LmabInstance& model, int horizon) {
  if (model.reward_kind != RewardKind::discrete)
    throw std::invalid_argument("plan_exact requires a discrete model");
  // beliefs depend only on the multiset of (action, value) observations, so
  // the reachable count is bounded by sum_t C(t + AZ - 1, AZ - 1); refuse
  // upfront rather than filling the memo table to its guard
  {
    const int symbols = model.num_actions * model.z();
    double total = 0.0, level = 1.0;
    // leaf level t = H is evaluated without memoization
    for (int t = 0; t < horizon && total <= 2.0 * kBeliefGuard; ++t) {
      total += level;
      level = level * (t + symbols) / (t + 1);
    }
    if (total > static_cast<double>(kBeliefGuard))
      throw std::runtime_error("reachable-belief guard exceeded; use the QMDP fallback");
  }
  Planner planner{&model, horizon, {}};
  PlanResult out;
  std::vector<double> prior = model.weights;
  out.value = planner.value(0, prior).first;
  out.policy.branching = model.z();
  out.policy.depth = horizon;
  planner.build_tree(out.policy, 0, prior);
  out.node_count = static_cast<int64_t>(out.policy.nodes.size());
  out.belief_states = static_cast<int64_t>(planner.memo.size());
  return out;
}

int qmdp_action(const LmabInstance& model, const Belief& belief, int steps_remaining) {
  double best = -std::numeric_limits<double>::infinity();
  int best_action = 0;
  for (int a = 0; a < model.num_actions; ++a) {
    double q = 0.0;
    for (int m = 0; m < model.num_contexts; ++m) {
      double context_best = -std::numeric_limits<double>::infinity();
      for (int a2 = 0; a2 < model.num_actions; ++a2)
        context_best = std::max(context_best, model.mean_reward(m, a2));
      q += belief.probs[static_cast<size_t>(m)] *
           (model.mean_reward(m, a) + (steps_remaining - 1) * context_best);
    }
    if (q > best + 1e-15) {
      best = q;
      best_action = a;
    }
  }
  return best_action;
}

namespace {

int build_qmdp_tree(const LmabInstance& model, PolicyTree& tree, const Belief& belief, int t,
                    int horizon) {
  const int action = qmdp_action(model, belief, horizon - t);
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({action, {}});
  if (t + 1 == horizon) return id;
  tree.nodes[static_cast<size_t>(id)].children.assign(static_cast<size_t>(model.z()), -1);
  for (int zi = 0; zi < model.z(); ++zi) {
    const Belief next = belief_update(model, belief, action, zi);
    const int child = build_qmdp_tree(model, tree, next, t + 1, horizon);
    tree.nodes[static_cast<size_t>(id)].children[static_cast<size_t>(zi)] = child;
  }
  return id;
}

}  // namespace

PolicyTree qmdp_policy_tree(const LmabInstance& model, int horizon) {
  if (model.reward_kind != RewardKind::discrete)
    throw std::invalid_argument("qmdp tree requires a discrete model");
  if (std::pow(static_cast<double>(model.z()), horizon) > kEnumerationGuard)
    throw std::runtime_error("Z^H guard exceeded for tree materialization");
  PolicyTree tree;
  tree.branching = model.z();
  tree.depth = horizon;
  Belief prior;
  prior.probs = model.weights;
  build_qmdp_tree(model, tree, prior, 0, horizon);
  return tree;
}

UcbResult ucb_baseline(BanditEnv& env, int horizon, int64_t episodes, double confidence) {
  const int num_actions = env.instance().num_actions;
  std::vector<int64_t> pulls(static_cast<size_t>(num_actions), 0);
  std::vector<double> means(static_cast<size_t>(num_actions), 0.0);
  int64_t total = 0;
  UcbResult out;
  out.step_rewards.reserve(static_cast<size_t>(episodes));
  for (int64_t ep = 0; ep < episodes; ++ep) {
    env.begin_episode();
    double ep_reward = 0.0;
    for (int t = 0; t < horizon; ++t) {
      int arm = -1;
      for (int a = 0; a < num_actions; ++a)
        if (pulls[static_cast<size_t>(a)] == 0) {
          arm = a;
          break;
        }
      if (arm < 0) {
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < num_actions; ++a) {
          const double index =
              means[static_cast<size_t>(a)] +
              confidence * std::sqrt(std::log(static_cast<double>(std::max<int64_t>(total, 2))) /
                                     static_cast<double>(pulls[static_cast<size_t>(a)]));
          if (index > best + 1e-15) {
            best = index;
            arm = a;
          }
        }
      }
      const auto [r, zi] = env.step(arm);
      (void)zi;
      ++total;
      ++pulls[static_cast<size_t>(arm)];
      means[static_cast<size_t>(arm)] +=
          (r - means[static_cast<size_t>(arm)]) / static_cast<double>(pulls[static_cast<size_t>(arm)]);
      ep_reward += r;
    }
    out.step_rewards.push_back(ep_reward / horizon);
  }
  out.episodes_used = episodes;
  int best = 0;
  for (int a = 1; a < num_actions; ++a)
    if (means[static_cast<size_t>(a)] > means[static_cast<size_t>(best)] + 1e-15) best = a;
  out.best_arm = best;
  out.policy = PolicyTree::fixed_action(best, horizon, env.instance().z());
  return out;
}

}  // namespace lmab
