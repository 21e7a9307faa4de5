#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lmab {

// Rows indexed by (action, value) pairs, columns by subspace basis vectors.
// value index is -1 when rows are indexed by actions alone (Gaussian mode).
struct FeatureMatrix {
  Eigen::MatrixXd phi;                          // d x k, full column rank
  std::vector<std::pair<int, int>> row_index;   // row -> (action, value)

  int rows() const { return static_cast<int>(phi.rows()); }
  int cols() const { return static_cast<int>(phi.cols()); }
};

struct DesignWeights {
  Eigen::VectorXd rho;          // length d, on the simplex
  std::vector<int> support;     // indices with rho(i) > 0
  double g_value = 0.0;         // max_i ||phi_i||^2_{G(rho)^-1}
  Eigen::MatrixXd design_matrix;  // G(rho), k x k
  int iterations = 0;
};

struct CoreSet {
  std::vector<std::pair<int, int>> pairs;  // core (action, value) pairs
  std::vector<int> rows;                   // feature-matrix rows of the pairs
  DesignWeights design;
  Eigen::MatrixXd transform;  // d x n reconstruction map

  int size() const { return static_cast<int>(pairs.size()); }
};

// support-size budget of the sparse design, 4k loglog k + 16
int design_support_bound(int k);

// evaluates g(rho) = max_i phi_i^T G(rho)^{-1} phi_i for a given design
double design_g_value(const FeatureMatrix& phi, const Eigen::VectorXd& rho);

// Frank-Wolfe with away steps on the D-optimal objective, started from the
// uniform design, followed by support rounding. Guarantees g(rho) <= 2k and
// |supp| <= design_support_bound(k) for full-column-rank input.
DesignWeights solve_optimal_design(const FeatureMatrix& phi, double tolerance = 0.05,
                                   int max_iter = 100000);

CoreSet select_core_coordinates(const FeatureMatrix& phi, const DesignWeights& design);

Eigen::VectorXd reconstruct_from_core(const CoreSet& core, const Eigen::VectorXd& core_values);

}  // namespace lmab
