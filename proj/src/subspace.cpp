#include "lmab/subspace.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lmab {

SecondMomentEstimate estimate_second_moment(const LmabInstance& inst, int64_t n0,
                                            uint64_t seed, Exec exec) {
  if (inst.horizon < 2) throw std::invalid_argument("second-moment estimation needs H >= 2");
  if (n0 < 1) throw std::invalid_argument("N0 must be >= 1");
  const int A = inst.num_actions;
  const bool gaussian = inst.reward_kind == RewardKind::gaussian;
  const int d = gaussian ? A : A * inst.z();

  // per-cell accumulation in fixed block order; counts are integers in the
  // discrete case so the merge is exact
  const auto cells = block_accumulate(
      exec, n0, static_cast<size_t>(d) * d, [&](std::vector<double>& buf, int64_t k) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
        const int context = rng.categorical(inst.weights);
        const int a1 = rng.uniform_int(A);
        const int a2 = rng.uniform_int(A);
        if (gaussian) {
          const double r1 = inst.gaussian_mean(context, a1) + rng.normal();
          const double r2 = inst.gaussian_mean(context, a2) + rng.normal();
          buf[static_cast<size_t>(a1) * d + a2] += r1 * r2;
        } else {
          const int z1 = rng.categorical(inst.mu_row(context, a1));
          const int z2 = rng.categorical(inst.mu_row(context, a2));
          const int i = a1 * inst.z() + z1;
          const int j = a2 * inst.z() + z2;
          buf[static_cast<size_t>(i) * d + j] += 1.0;
        }
      });

  SecondMomentEstimate est;
  est.gaussian = gaussian;
  est.episodes_used = n0;
  est.matrix.resize(d, d);
  const double scale = static_cast<double>(A) * A / (2.0 * static_cast<double>(n0));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      est.matrix(i, j) =
          scale * (cells[static_cast<size_t>(i) * d + j] + cells[static_cast<size_t>(j) * d + i]);
  return est;
}

SecondMomentEstimate exact_second_moment(const LmabInstance& inst) {
  SecondMomentEstimate est;
  est.gaussian = inst.reward_kind == RewardKind::gaussian;
  const int d = est.gaussian ? inst.num_actions : inst.num_actions * inst.z();
  est.matrix = Eigen::MatrixXd::Zero(d, d);
  for (int m = 0; m < inst.num_contexts; ++m) {
    Eigen::VectorXd mu(d);
    if (est.gaussian) {
      for (int a = 0; a < inst.num_actions; ++a) mu(a) = inst.gaussian_mean(m, a);
    } else {
      const auto v = inst.mu_vector(m);
      for (int i = 0; i < d; ++i) mu(i) = v[static_cast<size_t>(i)];
    }
    est.matrix.noalias() += inst.weights[static_cast<size_t>(m)] * mu * mu.transpose();
  }
  return est;
}

SubspaceEstimate top_m_eigenspace(const SecondMomentEstimate& est, int m) {
  const int d = static_cast<int>(est.matrix.rows());
  if (m > d) throw std::invalid_argument("M exceeds matrix dimension");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(est.matrix);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigensolver did not converge");
  // Eigen returns ascending order; take the top m by value
  SubspaceEstimate sub;
  sub.basis.resize(d, m);
  sub.eigenvalues.resize(m);
  for (int j = 0; j < m; ++j) {
    const int src = d - 1 - j;
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    // sign convention: the largest-magnitude coordinate is positive,
    // lowest index on ties
    int arg = 0;
    double best = std::abs(v(0));
    for (int i = 1; i < d; ++i)
      if (std::abs(v(i)) > best) {
        best = std::abs(v(i));
        arg = i;
      }
    if (v(arg) < 0.0) v = -v;
    sub.basis.col(j) = v;
    sub.eigenvalues(j) = solver.eigenvalues()(src);
  }
  sub.residual_eigenvalue = m < d ? solver.eigenvalues()(d - 1 - m) : 0.0;
  return sub;
}

double subspace_residual(const SubspaceEstimate& sub, const Eigen::VectorXd& v) {
  if (v.size() != sub.basis.rows()) throw std::invalid_argument("dimension mismatch");
  const Eigen::VectorXd res = v - sub.basis * (sub.basis.transpose() * v);
  return res.lpNorm<Eigen::Infinity>();
}

FeatureMatrix subspace_features(const SubspaceEstimate& sub, int num_actions, int num_values) {
  FeatureMatrix phi;
  phi.phi = sub.basis;
  const int d = static_cast<int>(sub.basis.rows());
  phi.row_index.reserve(static_cast<size_t>(d));
  if (num_values >= 2 && d == num_actions * num_values) {
    for (int a = 0; a < num_actions; ++a)
      for (int zi = 0; zi < num_values; ++zi) phi.row_index.emplace_back(a, zi);
  } else if (d == num_actions) {
    // action-only rows (gaussian mode): value index -1
    for (int a = 0; a < num_actions; ++a) phi.row_index.emplace_back(a, -1);
  } else {
    throw std::invalid_argument("basis dimension matches neither A*Z nor A");
  }
  return phi;
}

}  // namespace lmab
