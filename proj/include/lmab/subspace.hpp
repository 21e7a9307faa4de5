#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "lmab/design.hpp"
#include "lmab/model.hpp"

namespace lmab {

// Rescaled empirical second-order moment of reward observations. Entries are
// scaled by A^2 so the expectation equals M2 = sum_m w_m mu_m mu_m^T; the raw
// indicator average has expectation M2 / A^2 under uniform first actions.
struct SecondMomentEstimate {
  Eigen::MatrixXd matrix;   // (A*Z) x (A*Z), or A x A in gaussian mode
  int64_t episodes_used = 0;
  bool gaussian = false;
};

struct SubspaceEstimate {
  Eigen::MatrixXd basis;        // columns orthonormal, d x M
  Eigen::VectorXd eigenvalues;  // top M, descending
  double residual_eigenvalue = 0.0;  // (M+1)-th
};

// Plays two uniform random actions per episode and accumulates the
// symmetrized outer product of (action, reward) indicators. Deterministic
// for any thread count (per-episode seeds, integer count accumulation).
SecondMomentEstimate estimate_second_moment(const LmabInstance& inst, int64_t n0,
                                            uint64_t seed, Exec exec = Exec::parallel);

// exact M2 = sum_m w_m mu_m mu_m^T from ground truth (oracle injection)
SecondMomentEstimate exact_second_moment(const LmabInstance& inst);

SubspaceEstimate top_m_eigenspace(const SecondMomentEstimate& est, int m);

// sup-norm of the projection residual (I - U U^T) v
double subspace_residual(const SubspaceEstimate& sub, const Eigen::VectorXd& v);

// feature matrix fed to the design module; rows indexed (a, z), or actions
// alone in gaussian mode
FeatureMatrix subspace_features(const SubspaceEstimate& sub, int num_actions, int num_values);

}  // namespace lmab
