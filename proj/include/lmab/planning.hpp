#pragma once

#include <cstdint>
#include <vector>

#include "lmab/model.hpp"

namespace lmab {

struct Belief {
  std::vector<double> probs;
  bool degenerate = false;  // set when a zero-likelihood update was hit
};

Belief uniform_belief(int contexts);

// Bayes update b'(m) propto b(m) mu_m(a, r); zero total likelihood returns
// the uniform belief with the degenerate flag set.
Belief belief_update(const LmabInstance& model, const Belief& belief, int action, int reward_idx);

struct PlanResult {
  PolicyTree policy;
  double value = 0.0;
  int64_t node_count = 0;
  int64_t belief_states = 0;
};

inline constexpr int64_t kBeliefGuard = 1000000;

// Exact finite-horizon belief DP (epsilon = 0 planning oracle). Beliefs are
// hash-consed after quantization to 12 decimal digits; ties break toward the
// lowest action index.
PlanResult plan_exact(const LmabInstance& model, int horizon);

// QMDP action chooser: Q(b, a) = sum_m b(m) (r_m(a) + (H - t) max_a' r_m(a'))
// with the known-context optimal completion.
int qmdp_action(const LmabInstance& model, const Belief& belief, int steps_remaining);

// QMDP materialized as a policy tree over reward observations.
PolicyTree qmdp_policy_tree(const LmabInstance& model, int horizon);

struct UcbResult {
  int best_arm = 0;
  PolicyTree policy;                  // stationary: repeat best_arm
  std::vector<double> step_rewards;   // one mean reward per training episode
  int64_t episodes_used = 0;
};

// UCB1 over pooled steps, contexts ignored; returns the empirically best arm
// as a stationary policy.
UcbResult ucb_baseline(BanditEnv& env, int horizon, int64_t episodes, double confidence = 2.0);

}  // namespace lmab
