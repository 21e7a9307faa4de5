#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmab/parallel.hpp"
#include "lmab/rng.hpp"

namespace lmab {

// Ordered finite reward alphabet. value_bound is 1 for standard instances;
// Gaussian discretization grids exceed the unit interval and carry their own
// bound.
struct RewardSupport {
  std::vector<double> values;
  double value_bound = 1.0;

  int size() const { return static_cast<int>(values.size()); }
  // index of an exact support value, -1 if absent
  int index_of(double v) const;
  static RewardSupport bernoulli() { return RewardSupport{{0.0, 1.0}, 1.0}; }
};

enum class RewardKind { discrete, gaussian };

struct LmabInstance {
  int num_contexts = 0;  // M
  int num_actions = 0;   // A
  int horizon = 0;       // H
  RewardSupport support;
  std::vector<double> weights;       // M
  std::vector<double> reward_probs;  // M*A*Z, row (m,a) over values
  RewardKind reward_kind = RewardKind::discrete;
  std::vector<double> gaussian_means;  // M*A (gaussian mode)

  int z() const { return support.size(); }
  double mu(int m, int a, int zi) const {
    return reward_probs[(static_cast<size_t>(m) * num_actions + a) * support.size() + zi];
  }
  double& mu(int m, int a, int zi) {
    return reward_probs[(static_cast<size_t>(m) * num_actions + a) * support.size() + zi];
  }
  std::span<const double> mu_row(int m, int a) const {
    return std::span<const double>(reward_probs)
        .subspan((static_cast<size_t>(m) * num_actions + a) * support.size(), support.size());
  }
  double gaussian_mean(int m, int a) const {
    return gaussian_means[static_cast<size_t>(m) * num_actions + a];
  }
  double mean_reward(int m, int a) const;  // expected reward of arm a in context m

  // reward-probability table of context m as a flat AZ vector indexed (a,z)
  std::vector<double> mu_vector(int m) const;
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;
};

struct Episode {
  int context = -1;  // diagnostics only; never exposed to learners
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<int> reward_idx;  // support indices (discrete mode), -1 otherwise
};

// Learner-facing view of an episode with the latent context stripped.
struct EpisodeView {
  std::span<const int> actions;
  std::span<const double> rewards;
  std::span<const int> reward_idx;

  explicit EpisodeView(const Episode& e)
      : actions(e.actions), rewards(e.rewards), reward_idx(e.reward_idx) {}
};

// Deterministic history-dependent policy as a decision tree. Each internal
// node stores the action to play and one child per observed support value.
struct PolicyTree {
  struct Node {
    int action = 0;
    std::vector<int> children;  // size Z for internal nodes, empty for leaves
  };
  std::vector<Node> nodes;  // nodes[0] is the root
  int branching = 0;        // Z
  int depth = 0;

  bool empty() const { return nodes.empty(); }
  static PolicyTree fixed_action(int action, int depth, int branching);
  static PolicyTree from_sequence(std::span<const int> actions, int branching);
};

// next action given the observed history (indices into the reward support)
using PolicyFn = std::function<int(std::span<const int> actions, std::span<const int> reward_idx)>;

PolicyFn policy_from_tree(const PolicyTree& tree);
PolicyFn policy_from_sequence(std::vector<int> actions);

struct SeparationConfig {
  double gamma = 0.0;
  bool enforced = false;
};

ValidationReport validate_instance(const LmabInstance& inst);

// separation level realized by an instance: min over context pairs of the
// best single-action L1 distance
double separation_level(const LmabInstance& inst);

Episode sample_episode(const LmabInstance& inst, const PolicyFn& policy, Rng& rng);
Episode sample_episode(const LmabInstance& inst, const PolicyTree& tree, Rng& rng);

// Batch simulation with per-episode seed derivation (episode k uses
// derive_seed(seed, k)); identical output for serial and parallel lanes.
std::vector<Episode> sample_episodes(const LmabInstance& inst, const PolicyFn& policy,
                                     int64_t count, uint64_t seed, Exec exec = Exec::parallel);

struct GeneratorOptions {
  int num_contexts = 2;
  int num_actions = 2;
  int num_values = 2;
  int horizon = 2;
  int rank = 1;
  // Dirichlet concentration of the per-context convex combination over the
  // basis tables; values below 1 place contexts near single prototypes
  double mix_alpha = 1.0;
  RewardKind reward_kind = RewardKind::discrete;
  std::optional<SeparationConfig> separation;
  int separation_retries = 10000;
};

LmabInstance generate_random_instance(const GeneratorOptions& opt, Rng& rng);

// Exact V(pi) by recursion over reward histories; requires Z^H <= guard.
inline constexpr double kEnumerationGuard = 1e7;
double exact_policy_value(const LmabInstance& inst, const PolicyTree& policy);
double best_fixed_arm_value(const LmabInstance& inst);

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  int64_t episodes = 0;
};

McEstimate monte_carlo_policy_value(const LmabInstance& inst, const PolicyFn& policy,
                                    int64_t episodes, uint64_t seed,
                                    Exec exec = Exec::parallel);
McEstimate monte_carlo_policy_value(const LmabInstance& inst, const PolicyTree& tree,
                                    int64_t episodes, uint64_t seed,
                                    Exec exec = Exec::parallel);

struct TrajectoryKey {
  std::vector<int> actions;
  std::vector<int> reward_idx;
  bool operator<(const TrajectoryKey& o) const {
    if (actions != o.actions) return actions < o.actions;
    return reward_idx < o.reward_idx;
  }
};

std::map<TrajectoryKey, double> exact_trajectory_distribution(const LmabInstance& inst,
                                                              const PolicyTree& policy);

// Sequential environment that hides the latent context; used by adaptive
// learners (UCB). Episode draws are seeded per episode index so interleaved
// use stays reproducible.
class BanditEnv {
 public:
  BanditEnv(const LmabInstance& inst, uint64_t seed)
      : inst_(&inst), seed_(seed), rng_(seed) {}

  void begin_episode();
  // returns (reward value, support index or -1)
  std::pair<double, int> step(int action);
  int64_t episodes_used() const { return episodes_; }
  int time_step() const { return t_; }
  const LmabInstance& instance() const { return *inst_; }

 private:
  const LmabInstance* inst_;
  uint64_t seed_;
  Rng rng_;
  int64_t episodes_ = 0;
  int context_ = -1;
  int t_ = 0;
};

}  // namespace lmab
