#pragma once

#include <cstdint>
#include <vector>

#include "lmab/design.hpp"
#include "lmab/model.hpp"
#include "lmab/moments.hpp"

namespace lmab {

struct ClipEntry {
  int context = 0;
  int action = 0;
  double clipped_mass = 0.0;         // L1 mass removed by clipping
  double normalization = 1.0;        // row sum before normalizing
  bool degenerate = false;           // all-zero row replaced by uniform
};

struct RecoveredModel {
  LmabInstance instance;
  std::vector<double> pre_clip;  // M x (A*Z) raw values T^ nu_m
  std::vector<ClipEntry> clip_report;
};

// Lifts fitted core parameters to full reward tables, clips to [0,1] and
// normalizes each (context, action) row; zero rows become uniform.
RecoveredModel recover_reward_model(const LatentParams& params, const CoreSet& core,
                                    const RewardSupport& support, int horizon);

// Gaussian-mode recovery: means are read off the lifted vector directly, no
// clipping or normalization.
RecoveredModel recover_gaussian_model(const LatentParams& params, const CoreSet& core,
                                      int num_actions, int horizon);

struct DiscretizationGrid {
  std::vector<double> values;  // z_1 .. z_{Z}
  double epsilon = 0.0;
  double spacing = 0.0;        // eps / H^2
  int zero_bucket = -1;        // support index holding out-of-range mass
};

// Reward discretization for unit-variance Gaussian instances: a uniform grid
// of pitch eps/H^2 spanning +-4 sqrt(log(H/eps)), with the out-of-range mass
// folded into the bucket at value 0.
std::pair<LmabInstance, DiscretizationGrid> discretize_gaussian(const LmabInstance& inst,
                                                                double epsilon,
                                                                int max_values = 2000000);

// quantize a raw reward onto the grid (bucket value, support index)
std::pair<double, int> quantize_reward(const DiscretizationGrid& grid,
                                       const RewardSupport& support, double r);

// Raw product-of-rewards moment tensor for Gaussian instances; expectation is
// sum_m w_m prod_t mean_m(a_{i_t}).
MomentTensor gaussian_raw_moment_tensor(const LmabInstance& inst, const CoreSet& core,
                                        int order, int64_t n1, uint64_t seed,
                                        Exec exec = Exec::parallel);

}  // namespace lmab
