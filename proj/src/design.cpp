#include "lmab/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lmab {

namespace {

constexpr double kRidge = 1e-12;  // G(rho) inversion regularizer

Eigen::MatrixXd design_matrix(const FeatureMatrix& phi, const Eigen::VectorXd& rho) {
  const int k = phi.cols();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < phi.rows(); ++i) {
    if (rho(i) == 0.0) continue;
    g.noalias() += rho(i) * phi.phi.row(i).transpose() * phi.phi.row(i);
  }
  return g;
}

// leverage scores phi_i^T G^{-1} phi_i for all rows
Eigen::VectorXd leverages(const FeatureMatrix& phi, const Eigen::MatrixXd& g) {
  Eigen::MatrixXd reg = g;
  reg.diagonal().array() += kRidge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  const Eigen::MatrixXd solved = ldlt.solve(phi.phi.transpose());  // k x d
  return (phi.phi.array() * solved.transpose().array()).rowwise().sum();
}

}  // namespace

int design_support_bound(int k) {
  if (k <= 1) return 16;
  return static_cast<int>(std::floor(4.0 * k * std::log(std::log(static_cast<double>(k))) + 16.0));
}

double design_g_value(const FeatureMatrix& phi, const Eigen::VectorXd& rho) {
  return leverages(phi, design_matrix(phi, rho)).maxCoeff();
}

DesignWeights solve_optimal_design(const FeatureMatrix& phi, double tolerance, int max_iter) {
  const int d = phi.rows();
  const int k = phi.cols();
  if (k > d) throw std::invalid_argument("feature matrix must have k <= d");
  {
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi.phi);
    if (qr.rank() < k) throw std::invalid_argument("feature matrix is column rank-deficient");
  }

  Eigen::VectorXd rho = Eigen::VectorXd::Constant(d, 1.0 / d);
  Eigen::MatrixXd g = design_matrix(phi, rho);
  const double target = (1.0 + tolerance) * k;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const Eigen::VectorXd lev = leverages(phi, g);
    int imax = 0;
    double gmax = lev(0);
    for (int i = 1; i < d; ++i)
      if (lev(i) > gmax) {
        gmax = lev(i);
        imax = i;
      }
    if (gmax <= target) break;

    // worst support point for an away step
    int jmin = -1;
    double gmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i)
      if (rho(i) > 0.0 && lev(i) < gmin) {
        gmin = lev(i);
        jmin = i;
      }

    const bool fw = (gmax - k) >= (k - gmin) || jmin < 0;
    int row;
    double gamma;
    if (fw) {
      row = imax;
      gamma = (gmax / k - 1.0) / (gmax - 1.0);
    } else {
      row = jmin;
      const double lo = -rho(jmin) / (1.0 - rho(jmin));
      const double stationary = (gmin / k - 1.0) / (gmin - 1.0);
      gamma = stationary < 0.0 ? std::max(lo, stationary) : lo;
    }
    rho *= (1.0 - gamma);
    rho(row) += gamma;
    if (rho(row) < 1e-15) rho(row) = 0.0;
    if ((iter & 63) == 63) {
      g = design_matrix(phi, rho);  // periodic refresh against fp drift
    } else {
      g = (1.0 - gamma) * g;
      g.noalias() += gamma * phi.phi.row(row).transpose() * phi.phi.row(row);
    }
  }

  // rounding: drop negligible rows, then greedily shed smallest weights
  // while g stays within the 2k guarantee and the support exceeds the budget
  const double drop_eps = 1e-6 / d;
  for (int i = 0; i < d; ++i)
    if (rho(i) < drop_eps) rho(i) = 0.0;
  rho /= rho.sum();

  const int bound = design_support_bound(k);
  auto support_of = [&](const Eigen::VectorXd& r) {
    std::vector<int> s;
    for (int i = 0; i < d; ++i)
      if (r(i) > 0.0) s.push_back(i);
    return s;
  };
  std::vector<int> support = support_of(rho);
  double gval = design_g_value(phi, rho);
  if (gval > 2.0 * k)
    throw std::runtime_error("optimal design failed to reach g <= 2k; input may be near-degenerate");

  while (static_cast<int>(support.size()) > bound) {
    std::vector<int> order = support;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return rho(a) < rho(b); });
    bool dropped = false;
    for (int cand : order) {
      Eigen::VectorXd trial = rho;
      trial(cand) = 0.0;
      trial /= trial.sum();
      const double gt = design_g_value(phi, trial);
      if (gt <= 2.0 * k) {
        rho = trial;
        gval = gt;
        dropped = true;
        break;
      }
    }
    if (!dropped)
      throw std::runtime_error("support rounding could not reach the size bound under g <= 2k");
    support = support_of(rho);
  }

  DesignWeights out;
  out.rho = rho;
  out.support = support;
  out.g_value = gval;
  out.design_matrix = design_matrix(phi, rho);
  out.iterations = iter;
  return out;
}

CoreSet select_core_coordinates(const FeatureMatrix& phi, const DesignWeights& design) {
  CoreSet core;
  core.design = design;
  core.rows = design.support;
  core.pairs.reserve(design.support.size());
  for (int row : design.support) core.pairs.push_back(phi.row_index[static_cast<size_t>(row)]);

  Eigen::MatrixXd reg = design.design_matrix;
  reg.diagonal().array() += kRidge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  const int n = static_cast<int>(design.support.size());
  core.transform.resize(phi.rows(), n);
  for (int j = 0; j < n; ++j) {
    const int row = design.support[static_cast<size_t>(j)];
    const Eigen::VectorXd solved = ldlt.solve(phi.phi.row(row).transpose());
    core.transform.col(j) = design.rho(row) * (phi.phi * solved);
  }
  return core;
}

Eigen::VectorXd reconstruct_from_core(const CoreSet& core, const Eigen::VectorXd& core_values) {
  if (core_values.size() != core.transform.cols())
    throw std::invalid_argument("core value vector length mismatch");
  if (!core_values.allFinite()) throw std::invalid_argument("core values must be finite");
  return core.transform * core_values;
}

}  // namespace lmab
