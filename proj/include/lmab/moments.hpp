#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "lmab/design.hpp"
#include "lmab/model.hpp"

namespace lmab {

// Dense order-l tensor over core coordinates, entry (i_1,...,i_l) at flat
// offset sum_t i_t * n^(l-1-t).
struct MomentTensor {
  int order = 1;
  int dim = 0;
  std::vector<double> entries;  // n^l
  int64_t episodes_used = 0;

  int64_t cell_count() const { return static_cast<int64_t>(entries.size()); }
  double at(std::span<const int> idx) const { return entries[flat(idx)]; }
  size_t flat(std::span<const int> idx) const {
    size_t off = 0;
    for (int i : idx) off = off * static_cast<size_t>(dim) + static_cast<size_t>(i);
    return off;
  }
};

// Candidate latent parameters on core coordinates.
struct LatentParams {
  std::vector<double> weights;     // M
  Eigen::MatrixXd core_values;     // M x n, entries in [0,1]

  int contexts() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(core_values.cols()); }
};

struct MatchConfig {
  double delta_tsr = 1e-3;
  int max_order = 1;          // min(H, 2M-1)
  int contexts = 0;           // M of the fitted mixture (initial overrides)
  double delta_sub = 0.0;
  double w_min = 0.0;         // lower bound enforced on fitted weights
  int random_restarts = 8;
  int max_pg_iters = 4000;
  // subspace-consistency bands need the reconstruction map and Z
  std::optional<Eigen::MatrixXd> transform;
  int num_values = 0;
};

struct FitResult {
  LatentParams params;
  std::vector<double> residuals;  // per-order sup norms, index l-1
  double max_residual = 0.0;
  bool success = false;           // max residual <= delta_tsr
  int best_restart = -1;
  double band_violation = 0.0;    // max violation of the consistency bands
};

inline constexpr int64_t kTensorCellGuard = 100000000;  // n^l guard

// nu_m(j) = mu_m(a_j, z_j): core restriction of the ground-truth tables
LatentParams core_restriction(const LmabInstance& inst, const CoreSet& core);

MomentTensor exact_moment_tensor(const LatentParams& params, int order);
MomentTensor exact_moment_tensor(const LmabInstance& inst, const CoreSet& core, int order);

// Plays the action sequence of each multi-index over n1 fresh episodes and
// averages the product of value indicators; unbiased for T_l.
MomentTensor estimate_moment_tensor(const LmabInstance& inst, const CoreSet& core, int order,
                                    int64_t n1, uint64_t seed, Exec exec = Exec::parallel);

std::vector<double> moment_residual(const LatentParams& params,
                                    const std::vector<MomentTensor>& tensors);

FitResult fit_moments(const std::vector<MomentTensor>& tensors, const MatchConfig& config,
                      const std::optional<LatentParams>& initial, Rng& rng,
                      Exec exec = Exec::parallel);

// Exact optimal transport between two atomic distributions: marginals w, v
// (equal mass within 1e-9) and an arbitrary cost matrix. Solved by successive
// shortest paths; the result carries an exactness certificate via duals.
struct OtResult {
  double cost = 0.0;
  Eigen::MatrixXd plan;        // coupling
  Eigen::VectorXd dual_left;   // feasible duals certifying optimality
  Eigen::VectorXd dual_right;
};

OtResult optimal_transport(std::span<const double> w, std::span<const double> v,
                           const Eigen::MatrixXd& cost);

// Wasserstein distance with respect to the sup-norm ground metric.
double wasserstein_distance(const LatentParams& p, const LatentParams& q);

// ground-truth diagnostic: per-component parameter errors after the optimal
// matching (separated-regime test hook)
struct SeparationDiagnostic {
  std::vector<int> matching;       // component m of p -> component of q
  std::vector<double> weight_err;  // |w_m - w_match|
  std::vector<double> value_err;   // sup norm per matched pair
};

SeparationDiagnostic separation_diagnostic(const LatentParams& truth, const LatentParams& fitted);

}  // namespace lmab
