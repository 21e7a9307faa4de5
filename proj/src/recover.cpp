#include "lmab/recover.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lmab {

RecoveredModel recover_reward_model(const LatentParams& params, const CoreSet& core,
                                    const RewardSupport& support, int horizon) {
  const int m = params.contexts();
  const int z = support.size();
  const int d = static_cast<int>(core.transform.rows());
  if (d % z != 0) throw std::invalid_argument("transform rows not divisible by Z");
  const int a = d / z;

  RecoveredModel out;
  out.instance.num_contexts = m;
  out.instance.num_actions = a;
  out.instance.horizon = horizon;
  out.instance.support = support;
  out.instance.weights = params.weights;
  out.instance.reward_probs.assign(static_cast<size_t>(m) * a * z, 0.0);
  out.pre_clip.assign(static_cast<size_t>(m) * d, 0.0);

  for (int c = 0; c < m; ++c) {
    const Eigen::VectorXd v = reconstruct_from_core(core, params.core_values.row(c).transpose());
    for (int i = 0; i < d; ++i) out.pre_clip[static_cast<size_t>(c) * d + i] = v(i);
    for (int ai = 0; ai < a; ++ai) {
      ClipEntry entry;
      entry.context = c;
      entry.action = ai;
      double rowsum = 0.0;
      std::vector<double> clipped(static_cast<size_t>(z));
      for (int zi = 0; zi < z; ++zi) {
        const double raw = v(ai * z + zi);
        const double cl = std::clamp(raw, 0.0, 1.0);
        entry.clipped_mass += std::abs(raw - cl);
        clipped[static_cast<size_t>(zi)] = cl;
        rowsum += cl;
      }
      entry.normalization = rowsum;
      if (rowsum <= 0.0) {
        entry.degenerate = true;
        for (int zi = 0; zi < z; ++zi) out.instance.mu(c, ai, zi) = 1.0 / z;
      } else {
        for (int zi = 0; zi < z; ++zi)
          out.instance.mu(c, ai, zi) = clipped[static_cast<size_t>(zi)] / rowsum;
      }
      out.clip_report.push_back(entry);
    }
  }
  return out;
}

RecoveredModel recover_gaussian_model(const LatentParams& params, const CoreSet& core,
                                      int num_actions, int horizon) {
  const int m = params.contexts();
  RecoveredModel out;
  out.instance.num_contexts = m;
  out.instance.num_actions = num_actions;
  out.instance.horizon = horizon;
  out.instance.reward_kind = RewardKind::gaussian;
  out.instance.weights = params.weights;
  out.instance.gaussian_means.assign(static_cast<size_t>(m) * num_actions, 0.0);
  const int d = static_cast<int>(core.transform.rows());
  if (d != num_actions) throw std::invalid_argument("transform rows != A in gaussian mode");
  out.pre_clip.assign(static_cast<size_t>(m) * d, 0.0);
  for (int c = 0; c < m; ++c) {
    const Eigen::VectorXd v = reconstruct_from_core(core, params.core_values.row(c).transpose());
    for (int a = 0; a < num_actions; ++a) {
      out.pre_clip[static_cast<size_t>(c) * d + a] = v(a);
      out.instance.gaussian_means[static_cast<size_t>(c) * num_actions + a] =
          std::clamp(v(a), -1.0, 1.0);
    }
  }
  return out;
}

namespace {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

std::pair<LmabInstance, DiscretizationGrid> discretize_gaussian(const LmabInstance& inst,
                                                                double epsilon, int max_values) {
  if (inst.reward_kind != RewardKind::gaussian)
    throw std::invalid_argument("discretize_gaussian needs a gaussian instance");
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
  const double h = static_cast<double>(inst.horizon);
  const double range = 4.0 * std::sqrt(std::log(h / epsilon));
  const double spacing = epsilon / (h * h);
  const int64_t z_count = static_cast<int64_t>(std::floor(2.0 * range / spacing));
  if (z_count < 2) throw std::invalid_argument("epsilon too large: grid has fewer than 2 values");
  if (z_count > max_values)
    throw std::runtime_error("discretization grid exceeds the memory guard; coarsen epsilon");

  DiscretizationGrid grid;
  grid.epsilon = epsilon;
  grid.spacing = spacing;
  grid.values.resize(static_cast<size_t>(z_count));
  for (int64_t i = 0; i < z_count; ++i)
    grid.values[static_cast<size_t>(i)] = -range + static_cast<double>(i) * spacing;

  // support = bucket left edges z_1..z_{Z-1} plus the overflow value 0;
  // 0 merges with the nearest grid point when they collide
  std::vector<double> values(grid.values.begin(), grid.values.end() - 1);
  int zero_idx = -1;
  for (size_t i = 0; i < values.size(); ++i)
    if (std::abs(values[i]) < spacing * 0.5) {
      zero_idx = static_cast<int>(i);
      break;
    }
  if (zero_idx < 0) {
    // insert an explicit 0 value keeping the ordering
    const auto it = std::lower_bound(values.begin(), values.end(), 0.0);
    zero_idx = static_cast<int>(it - values.begin());
    values.insert(it, 0.0);
  }
  grid.zero_bucket = zero_idx;

  LmabInstance out;
  out.num_contexts = inst.num_contexts;
  out.num_actions = inst.num_actions;
  out.horizon = inst.horizon;
  out.reward_kind = RewardKind::discrete;
  out.weights = inst.weights;
  out.support.values = values;
  out.support.value_bound = range;
  const int zc = static_cast<int>(values.size());
  out.reward_probs.assign(static_cast<size_t>(inst.num_contexts) * inst.num_actions * zc, 0.0);

  for (int m = 0; m < inst.num_contexts; ++m)
    for (int a = 0; a < inst.num_actions; ++a) {
      const double mean = inst.gaussian_mean(m, a);
      // CDF differences per grid bucket, mapped through value merging
      for (int64_t i = 0; i + 1 < z_count; ++i) {
        const double lo = grid.values[static_cast<size_t>(i)];
        const double hi = grid.values[static_cast<size_t>(i) + 1];
        const double p = std_normal_cdf(hi - mean) - std_normal_cdf(lo - mean);
        // bucket's support index: its left edge, unless the edge merged away
        double key = lo;
        int idx = -1;
        for (int zi = 0; zi < zc; ++zi)
          if (std::abs(values[static_cast<size_t>(zi)] - key) < spacing * 0.25) {
            idx = zi;
            break;
          }
        if (idx < 0) idx = grid.zero_bucket;
        out.mu(m, a, idx) += p;
      }
      const double tail = std_normal_cdf(grid.values.front() - mean) +
                          (1.0 - std_normal_cdf(grid.values.back() - mean));
      out.mu(m, a, grid.zero_bucket) += tail;
      // exact renormalization against fp drift in the CDF telescope
      double s = 0.0;
      for (int zi = 0; zi < zc; ++zi) s += out.mu(m, a, zi);
      for (int zi = 0; zi < zc; ++zi) out.mu(m, a, zi) /= s;
    }
  return {out, grid};
}

std::pair<double, int> quantize_reward(const DiscretizationGrid& grid,
                                       const RewardSupport& support, double r) {
  if (r < grid.values.front() || r >= grid.values.back())
    return {0.0, grid.zero_bucket};
  const int64_t bucket = static_cast<int64_t>((r - grid.values.front()) / grid.spacing);
  const double edge = grid.values[static_cast<size_t>(
      std::min<int64_t>(bucket, static_cast<int64_t>(grid.values.size()) - 2))];
  for (size_t i = 0; i < support.values.size(); ++i)
    if (std::abs(support.values[i] - edge) < grid.spacing * 0.25)
      return {support.values[i], static_cast<int>(i)};
  return {0.0, grid.zero_bucket};
}

MomentTensor gaussian_raw_moment_tensor(const LmabInstance& inst, const CoreSet& core,
                                        int order, int64_t n1, uint64_t seed, Exec exec) {
  if (inst.reward_kind != RewardKind::gaussian)
    throw std::invalid_argument("raw moment tensor needs a gaussian instance");
  if (order > inst.horizon) throw std::invalid_argument("order exceeds horizon");
  if (n1 < 1) throw std::invalid_argument("N1 must be >= 1");
  const int n = core.size();
  MomentTensor t;
  t.order = order;
  t.dim = n;
  int64_t cells = 1;
  for (int l = 0; l < order; ++l) cells *= n;
  if (cells > kTensorCellGuard) throw std::runtime_error("tensor cell guard n^l exceeded");
  t.entries.assign(static_cast<size_t>(cells), 0.0);
  t.episodes_used = cells * n1;

  for_each_index(exec, cells, [&](int64_t cell) {
    std::vector<int> idx(static_cast<size_t>(order));
    int64_t rem = cell;
    for (int tpos = order - 1; tpos >= 0; --tpos) {
      idx[static_cast<size_t>(tpos)] = static_cast<int>(rem % n);
      rem /= n;
    }
    // fixed-block sums inside the cell keep the average order-independent
    const double sum = block_sum(Exec::serial, n1, [&](int64_t k) {
      Rng rng(derive_seed(seed, static_cast<uint64_t>(cell), static_cast<uint64_t>(k)));
      const int context = rng.categorical(inst.weights);
      double prod = 1.0;
      for (int tpos = 0; tpos < order; ++tpos) {
        const int a = core.pairs[static_cast<size_t>(idx[static_cast<size_t>(tpos)])].first;
        prod *= inst.gaussian_mean(context, a) + rng.normal();
      }
      return prod;
    });
    t.entries[static_cast<size_t>(cell)] = sum / static_cast<double>(n1);
  });
  return t;
}

}  // namespace lmab
