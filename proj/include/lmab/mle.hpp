#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lmab/design.hpp"
#include "lmab/model.hpp"
#include "lmab/moments.hpp"

namespace lmab {

// Core-index observations: at every step a core index is drawn uniformly,
// the paired action is played, and the indicator of hitting the paired value
// is recorded.
struct MleDataset {
  int num_core = 0;  // n
  int horizon = 0;   // H
  std::vector<int> indices;      // N*H, i_t per step
  std::vector<uint8_t> hits;     // N*H, b_t per step
  int64_t episodes() const {
    return horizon > 0 ? static_cast<int64_t>(indices.size()) / horizon : 0;
  }
};

struct EmState {
  LatentParams params;
  double log_likelihood = 0.0;
  std::vector<double> responsibilities;  // N x M row-major
  int iteration = 0;
};

MleDataset collect_mle_data(const LmabInstance& inst, const CoreSet& core, int64_t episodes,
                            uint64_t seed, Exec exec = Exec::parallel);

double log_likelihood(const MleDataset& data, const LatentParams& params,
                      Exec exec = Exec::parallel);

EmState em_init(const MleDataset& data, const LatentParams& params, Exec exec = Exec::parallel);
EmState em_step(const MleDataset& data, const EmState& state, Exec exec = Exec::parallel);
EmState em_fit(const MleDataset& data, const LatentParams& init, int max_iter = 500,
               double tol = 1e-8, Exec exec = Exec::parallel);

// Unbiased first/second/third order core tensors from uniformly-indexed MLE
// data (distinct in-episode positions).
struct CoreTensorEstimates {
  MomentTensor t1;
  MomentTensor t2;
  MomentTensor t3;
};

CoreTensorEstimates estimate_core_tensors(const MleDataset& data, Exec exec = Exec::parallel);

struct SpectralInput {
  const MomentTensor* t1 = nullptr;
  const MomentTensor* t2 = nullptr;
  const MomentTensor* t3 = nullptr;
  const MleDataset* data = nullptr;  // k-means fallback source
};

// Simultaneous-diagonalization initializer: whitens with T2, diagonalizes two
// random projections of T3 via their quotient, then resolves scales and
// weights from T1. Falls back to k-means++ on per-episode frequency vectors
// (or a perturbed-T1 start) when the spectrum is degenerate.
LatentParams init_spectral(const SpectralInput& input, int contexts, Rng& rng);

}  // namespace lmab
