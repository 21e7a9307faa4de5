#include "lmab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lmab {

namespace {

constexpr double kSumTol = 1e-12;

void check_policy_depth(const PolicyTree& tree, int horizon) {
  if (tree.depth < horizon)
    throw std::invalid_argument("policy tree shallower than horizon");
}

}  // namespace

int RewardSupport::index_of(double v) const {
  for (size_t i = 0; i < values.size(); ++i)
    if (values[i] == v) return static_cast<int>(i);
  return -1;
}

double LmabInstance::mean_reward(int m, int a) const {
  if (reward_kind == RewardKind::gaussian) return gaussian_mean(m, a);
  double s = 0.0;
  for (int zi = 0; zi < z(); ++zi) s += support.values[zi] * mu(m, a, zi);
  return s;
}

std::vector<double> LmabInstance::mu_vector(int m) const {
  std::vector<double> v(static_cast<size_t>(num_actions) * z());
  for (int a = 0; a < num_actions; ++a)
    for (int zi = 0; zi < z(); ++zi) v[static_cast<size_t>(a) * z() + zi] = mu(m, a, zi);
  return v;
}

PolicyTree PolicyTree::fixed_action(int action, int depth, int branching) {
  std::vector<int> seq(static_cast<size_t>(depth), action);
  return from_sequence(seq, branching);
}

PolicyTree PolicyTree::from_sequence(std::span<const int> actions, int branching) {
  PolicyTree tree;
  tree.branching = branching;
  tree.depth = static_cast<int>(actions.size());
  if (actions.empty()) return tree;
  // one node per level; all observations lead to the same next node
  tree.nodes.resize(actions.size());
  for (size_t t = 0; t < actions.size(); ++t) {
    tree.nodes[t].action = actions[t];
    if (t + 1 < actions.size())
      tree.nodes[t].children.assign(static_cast<size_t>(branching), static_cast<int>(t) + 1);
  }
  return tree;
}

PolicyFn policy_from_tree(const PolicyTree& tree) {
  // owns a copy: callers may pass temporaries
  return [tree](std::span<const int> actions, std::span<const int> reward_idx) {
    (void)actions;
    int node = 0;
    for (int obs : reward_idx) {
      const auto& children = tree.nodes[static_cast<size_t>(node)].children;
      if (children.empty()) throw std::invalid_argument("policy tree shallower than history");
      node = children[static_cast<size_t>(obs)];
    }
    return tree.nodes[static_cast<size_t>(node)].action;
  };
}

PolicyFn policy_from_sequence(std::vector<int> actions) {
  return [seq = std::move(actions)](std::span<const int> a, std::span<const int>) {
    if (a.size() >= seq.size()) throw std::invalid_argument("action sequence shorter than horizon");
    return seq[a.size()];
  };
}

ValidationReport validate_instance(const LmabInstance& inst) {
  ValidationReport rep;
  auto fail = [&rep](const std::string& msg) {
    rep.ok = false;
    rep.violations.push_back(msg);
  };
  if (inst.num_contexts < 1) fail("M must be >= 1");
  if (inst.num_actions < 1) fail("A must be >= 1");
  if (inst.horizon < 1) fail("H must be >= 1");
  if (static_cast<int>(inst.weights.size()) != inst.num_contexts)
    fail("weights length != M");
  double wsum = 0.0;
  for (double w : inst.weights) {
    if (w < -kSumTol) fail("negative mixing weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > kSumTol) {
    std::ostringstream os;
    os << "weights sum to " << wsum;
    fail(os.str());
  }

  if (inst.reward_kind == RewardKind::discrete) {
    const int zc = inst.z();
    if (zc < 2) fail("Z must be >= 2 in discrete mode");
    for (int i = 0; i + 1 < zc; ++i)
      if (!(inst.support.values[i] < inst.support.values[i + 1]))
        fail("support values not strictly increasing");
    for (double v : inst.support.values)
      if (std::abs(v) > inst.support.value_bound + kSumTol)
        fail("support value exceeds bound");
    if (static_cast<int>(inst.reward_probs.size()) !=
        inst.num_contexts * inst.num_actions * zc)
      fail("reward_probs size != M*A*Z");
    else {
      for (int m = 0; m < inst.num_contexts; ++m)
        for (int a = 0; a < inst.num_actions; ++a) {
          double rsum = 0.0;
          bool neg = false;
          for (int zi = 0; zi < zc; ++zi) {
            const double p = inst.mu(m, a, zi);
            if (p < -kSumTol) neg = true;
            rsum += p;
          }
          if (neg) fail("negative reward probability");
          if (std::abs(rsum - 1.0) > kSumTol) {
            std::ostringstream os;
            os << "row sum " << rsum << " at context " << m << " action " << a;
            fail(os.str());
          }
        }
    }
  } else {
    if (static_cast<int>(inst.gaussian_means.size()) != inst.num_contexts * inst.num_actions)
      fail("gaussian_means size != M*A");
    for (double v : inst.gaussian_means)
      if (std::abs(v) > 1.0 + kSumTol) fail("gaussian mean outside [-1,1]");
  }
  return rep;
}

double separation_level(const LmabInstance& inst) {
  double worst_pair = std::numeric_limits<double>::infinity();
  for (int m = 0; m < inst.num_contexts; ++m)
    for (int m2 = m + 1; m2 < inst.num_contexts; ++m2) {
      double best_action = 0.0;
      for (int a = 0; a < inst.num_actions; ++a) {
        double l1 = 0.0;
        if (inst.reward_kind == RewardKind::discrete) {
          for (int zi = 0; zi < inst.z(); ++zi)
            l1 += std::abs(inst.mu(m, a, zi) - inst.mu(m2, a, zi));
        } else {
          l1 = std::abs(inst.gaussian_mean(m, a) - inst.gaussian_mean(m2, a));
        }
        best_action = std::max(best_action, l1);
      }
      worst_pair = std::min(worst_pair, best_action);
    }
  return inst.num_contexts < 2 ? std::numeric_limits<double>::infinity() : worst_pair;
}

Episode sample_episode(const LmabInstance& inst, const PolicyFn& policy, Rng& rng) {
  Episode ep;
  ep.context = rng.categorical(inst.weights);
  ep.actions.reserve(static_cast<size_t>(inst.horizon));
  ep.rewards.reserve(static_cast<size_t>(inst.horizon));
  ep.reward_idx.reserve(static_cast<size_t>(inst.horizon));
  for (int t = 0; t < inst.horizon; ++t) {
    const int a = policy(ep.actions, ep.reward_idx);
    if (a < 0 || a >= inst.num_actions) throw std::invalid_argument("policy action out of range");
    ep.actions.push_back(a);
    if (inst.reward_kind == RewardKind::discrete) {
      const int zi = rng.categorical(inst.mu_row(ep.context, a));
      ep.reward_idx.push_back(zi);
      ep.rewards.push_back(inst.support.values[static_cast<size_t>(zi)]);
    } else {
      ep.reward_idx.push_back(-1);
      ep.rewards.push_back(inst.gaussian_mean(ep.context, a) + rng.normal());
    }
  }
  return ep;
}

Episode sample_episode(const LmabInstance& inst, const PolicyTree& tree, Rng& rng) {
  check_policy_depth(tree, inst.horizon);
  return sample_episode(inst, policy_from_tree(tree), rng);
}

std::vector<Episode> sample_episodes(const LmabInstance& inst, const PolicyFn& policy,
                                     int64_t count, uint64_t seed, Exec exec) {
  std::vector<Episode> out(static_cast<size_t>(count));
  for_each_index(exec, count, [&](int64_t k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    out[static_cast<size_t>(k)] = sample_episode(inst, policy, rng);
  });
  return out;
}

LmabInstance generate_random_instance(const GeneratorOptions& opt, Rng& rng) {
  const int M = opt.num_contexts, A = opt.num_actions, Z = opt.num_values;
  if (opt.rank < 1 || opt.rank > std::min(M, A * (Z - 1)))
    throw std::invalid_argument("infeasible rank");
  const int retries = opt.separation ? opt.separation_retries : 1;
  for (int attempt = 0; attempt < retries; ++attempt) {
    LmabInstance inst;
    inst.num_contexts = M;
    inst.num_actions = A;
    inst.horizon = opt.horizon;
    inst.reward_kind = opt.reward_kind;
    inst.weights = rng.dirichlet(M);

    if (opt.reward_kind == RewardKind::gaussian) {
      // rank-r basis of mean tables, means in [-1, 1]
      std::vector<std::vector<double>> basis(static_cast<size_t>(opt.rank));
      for (auto& b : basis) {
        b.resize(static_cast<size_t>(A));
        for (auto& v : b) v = rng.uniform(-1.0, 1.0);
      }
      inst.gaussian_means.assign(static_cast<size_t>(M) * A, 0.0);
      for (int m = 0; m < M; ++m) {
        const auto coef = rng.dirichlet(opt.rank, opt.mix_alpha);
        for (int a = 0; a < A; ++a) {
          double v = 0.0;
          for (int r = 0; r < opt.rank; ++r) v += coef[static_cast<size_t>(r)] * basis[static_cast<size_t>(r)][static_cast<size_t>(a)];
          inst.gaussian_means[static_cast<size_t>(m) * A + a] = v;
        }
      }
    } else {
      if (Z == 2) {
        inst.support = RewardSupport::bernoulli();
      } else {
        inst.support.values.resize(static_cast<size_t>(Z));
        for (int zi = 0; zi < Z; ++zi)
          inst.support.values[static_cast<size_t>(zi)] = -1.0 + 2.0 * zi / (Z - 1);
      }
      // r basis tables with Dirichlet(1) rows; each context is a random
      // convex combination, so span{mu_m} has dimension <= r
      std::vector<std::vector<double>> basis(static_cast<size_t>(opt.rank));
      for (auto& b : basis) {
        b.resize(static_cast<size_t>(A) * Z);
        for (int a = 0; a < A; ++a) {
          const auto row = rng.dirichlet(Z);
          std::copy(row.begin(), row.end(), b.begin() + static_cast<size_t>(a) * Z);
        }
      }
      inst.reward_probs.assign(static_cast<size_t>(M) * A * Z, 0.0);
      for (int m = 0; m < M; ++m) {
        const auto coef = rng.dirichlet(opt.rank, opt.mix_alpha);
        for (size_t i = 0; i < static_cast<size_t>(A) * Z; ++i) {
          double v = 0.0;
          for (int r = 0; r < opt.rank; ++r) v += coef[static_cast<size_t>(r)] * basis[static_cast<size_t>(r)][i];
          inst.reward_probs[static_cast<size_t>(m) * A * Z + i] = v;
        }
      }
    }

    if (!opt.separation || !opt.separation->enforced ||
        separation_level(inst) >= opt.separation->gamma)
      return inst;
  }
  throw std::runtime_error("separation rejection sampling exceeded retry budget");
}

namespace {

double value_recurse(const LmabInstance& inst, const PolicyTree& tree, int node, int t,
                     std::vector<double>& context_prob) {
  const int a = tree.nodes[static_cast<size_t>(node)].action;
  double total = 0.0;
  for (int zi = 0; zi < inst.z(); ++zi) {
    double pz = 0.0;
    for (int m = 0; m < inst.num_contexts; ++m)
      pz += context_prob[static_cast<size_t>(m)] * inst.mu(m, a, zi);
    if (pz == 0.0) continue;
    total += pz * inst.support.values[static_cast<size_t>(zi)];
    if (t + 1 < inst.horizon) {
      std::vector<double> next(static_cast<size_t>(inst.num_contexts));
      for (int m = 0; m < inst.num_contexts; ++m)
        next[static_cast<size_t>(m)] = context_prob[static_cast<size_t>(m)] * inst.mu(m, a, zi);
      const int child = tree.nodes[static_cast<size_t>(node)].children.empty()
                            ? -1
                            : tree.nodes[static_cast<size_t>(node)].children[static_cast<size_t>(zi)];
      if (child < 0) throw std::invalid_argument("policy tree shallower than horizon");
      total += value_recurse(inst, tree, child, t + 1, next);
    }
  }
  return total;
}

}  // namespace

double exact_policy_value(const LmabInstance& inst, const PolicyTree& policy) {
  if (inst.reward_kind != RewardKind::discrete)
    throw std::invalid_argument("exact_policy_value requires discrete rewards");
  if (std::pow(static_cast<double>(inst.z()), inst.horizon) > kEnumerationGuard)
    throw std::runtime_error("Z^H enumeration guard exceeded; use monte_carlo_policy_value");
  check_policy_depth(policy, inst.horizon);
  std::vector<double> prior = inst.weights;
  return value_recurse(inst, policy, 0, 0, prior);
}

double best_fixed_arm_value(const LmabInstance& inst) {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < inst.num_actions; ++a) {
    double v = 0.0;
    for (int m = 0; m < inst.num_contexts; ++m)
      v += inst.weights[static_cast<size_t>(m)] * inst.mean_reward(m, a);
    best = std::max(best, v * inst.horizon);
  }
  return best;
}

McEstimate monte_carlo_policy_value(const LmabInstance& inst, const PolicyFn& policy,
                                    int64_t episodes, uint64_t seed, Exec exec) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  std::vector<double> totals(static_cast<size_t>(episodes));
  for_each_index(exec, episodes, [&](int64_t k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    const Episode ep = sample_episode(inst, policy, rng);
    double s = 0.0;
    for (double r : ep.rewards) s += r;
    totals[static_cast<size_t>(k)] = s;
  });
  double sum = 0.0;
  for (double v : totals) sum += v;
  const double mean = sum / static_cast<double>(episodes);
  double sq = 0.0;
  for (double v : totals) sq += (v - mean) * (v - mean);
  McEstimate est;
  est.mean = mean;
  est.stderr_ = episodes > 1 ? std::sqrt(sq / (static_cast<double>(episodes) - 1) /
                                         static_cast<double>(episodes))
                             : 0.0;
  est.episodes = episodes;
  return est;
}

McEstimate monte_carlo_policy_value(const LmabInstance& inst, const PolicyTree& tree,
                                    int64_t episodes, uint64_t seed, Exec exec) {
  check_policy_depth(tree, inst.horizon);
  return monte_carlo_policy_value(inst, policy_from_tree(tree), episodes, seed, exec);
}

namespace {

void trajectory_recurse(const LmabInstance& inst, const PolicyTree& tree, int node, int t,
                        std::vector<int>& actions, std::vector<int>& rewards,
                        std::map<TrajectoryKey, double>& out) {
  if (t == inst.horizon) {
    double p = 0.0;
    for (int m = 0; m < inst.num_contexts; ++m) {
      double pm = inst.weights[static_cast<size_t>(m)];
      for (int s = 0; s < inst.horizon; ++s)
        pm *= inst.mu(m, actions[static_cast<size_t>(s)], rewards[static_cast<size_t>(s)]);
      p += pm;
    }
    out[TrajectoryKey{actions, rewards}] = p;
    return;
  }
  const int a = tree.nodes[static_cast<size_t>(node)].action;
  actions.push_back(a);
  for (int zi = 0; zi < inst.z(); ++zi) {
    rewards.push_back(zi);
    const int child = t + 1 < inst.horizon
                          ? tree.nodes[static_cast<size_t>(node)].children[static_cast<size_t>(zi)]
                          : -1;
    trajectory_recurse(inst, tree, child < 0 ? 0 : child, t + 1, actions, rewards, out);
    rewards.pop_back();
  }
  actions.pop_back();
}

}  // namespace

std::map<TrajectoryKey, double> exact_trajectory_distribution(const LmabInstance& inst,
                                                              const PolicyTree& policy) {
  if (inst.reward_kind != RewardKind::discrete)
    throw std::invalid_argument("trajectory distribution requires discrete rewards");
  if (std::pow(static_cast<double>(inst.z()), inst.horizon) > kEnumerationGuard)
    throw std::runtime_error("Z^H enumeration guard exceeded");
  check_policy_depth(policy, inst.horizon);
  std::map<TrajectoryKey, double> out;
  std::vector<int> actions, rewards;
  trajectory_recurse(inst, policy, 0, 0, actions, rewards, out);
  return out;
}

void BanditEnv::begin_episode() {
  rng_ = Rng(derive_seed(seed_, static_cast<uint64_t>(episodes_)));
  context_ = rng_.categorical(inst_->weights);
  t_ = 0;
  ++episodes_;
}

std::pair<double, int> BanditEnv::step(int action) {
  if (context_ < 0) throw std::logic_error("begin_episode not called");
  if (t_ >= inst_->horizon) throw std::logic_error("episode horizon exhausted");
  ++t_;
  if (inst_->reward_kind == RewardKind::discrete) {
    const int zi = rng_.categorical(inst_->mu_row(context_, action));
    return {inst_->support.values[static_cast<size_t>(zi)], zi};
  }
  return {inst_->gaussian_mean(context_, action) + rng_.normal(), -1};
}

}  // namespace lmab
