#include "lmab/mle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lmab {

namespace {

constexpr double kLikClip = 1e-9;  // keeps log terms finite at the boundary

double clip01(double v) { return std::clamp(v, kLikClip, 1.0 - kLikClip); }

// per-context episode likelihood, direct product (H is small)
double episode_likelihood(const MleDataset& data, const LatentParams& p, int64_t k, int m) {
  const int h = data.horizon;
  double prod = 1.0;
  for (int t = 0; t < h; ++t) {
    const size_t s = static_cast<size_t>(k) * h + t;
    const double nu = clip01(p.core_values(m, data.indices[s]));
    prod *= data.hits[s] ? nu : 1.0 - nu;
  }
  return prod;
}

}  // namespace

MleDataset collect_mle_data(const LmabInstance& inst, const CoreSet& core, int64_t episodes,
                            uint64_t seed, Exec exec) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  MleDataset data;
  data.num_core = core.size();
  data.horizon = inst.horizon;
  data.indices.assign(static_cast<size_t>(episodes) * inst.horizon, 0);
  data.hits.assign(static_cast<size_t>(episodes) * inst.horizon, 0);
  const bool gaussian = inst.reward_kind == RewardKind::gaussian;
  for_each_index(exec, episodes, [&](int64_t k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    const int context = rng.categorical(inst.weights);
    for (int t = 0; t < inst.horizon; ++t) {
      const int j = rng.uniform_int(core.size());
      const auto [a, zi] = core.pairs[static_cast<size_t>(j)];
      const size_t s = static_cast<size_t>(k) * inst.horizon + t;
      data.indices[s] = j;
      if (gaussian) throw std::invalid_argument("MLE indicators need discrete rewards");
      const int drawn = rng.categorical(inst.mu_row(context, a));
      data.hits[s] = drawn == zi ? 1 : 0;
    }
  });
  return data;
}

double log_likelihood(const MleDataset& data, const LatentParams& params, Exec exec) {
  const int64_t n = data.episodes();
  const int m = params.contexts();
  const double total = block_sum(exec, n, [&](int64_t k) {
    // log-sum-exp over contexts with a max shift
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<size_t>(m));
    for (int c = 0; c < m; ++c) {
      const double w = params.weights[static_cast<size_t>(c)];
      double lt = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
      for (int t = 0; t < data.horizon; ++t) {
        const size_t s = static_cast<size_t>(k) * data.horizon + t;
        const double nu = clip01(params.core_values(c, data.indices[s]));
        lt += std::log(data.hits[s] ? nu : 1.0 - nu);
      }
      terms[static_cast<size_t>(c)] = lt;
      best = std::max(best, lt);
    }
    double acc = 0.0;
    for (double lt : terms) acc += std::exp(lt - best);
    return best + std::log(acc);
  });
  return total / static_cast<double>(n);
}

EmState em_init(const MleDataset& data, const LatentParams& params, Exec exec) {
  EmState st;
  st.params = params;
  st.log_likelihood = log_likelihood(data, params, exec);
  st.responsibilities.assign(static_cast<size_t>(data.episodes()) * params.contexts(), 0.0);
  st.iteration = 0;
  return st;
}

EmState em_step(const MleDataset& data, const EmState& state, Exec exec) {
  const int64_t n = data.episodes();
  const int m = state.params.contexts();
  const int nc = data.num_core;
  EmState next = state;
  next.responsibilities.assign(static_cast<size_t>(n) * m, 0.0);

  // E-step: posterior responsibilities per episode
  for_each_index(exec, n, [&](int64_t k) {
    double norm = 0.0;
    for (int c = 0; c < m; ++c) {
      const double v =
          state.params.weights[static_cast<size_t>(c)] * episode_likelihood(data, state.params, k, c);
      next.responsibilities[static_cast<size_t>(k) * m + c] = v;
      norm += v;
    }
    if (norm <= 0.0) {
      for (int c = 0; c < m; ++c)
        next.responsibilities[static_cast<size_t>(k) * m + c] = 1.0 / m;
    } else {
      for (int c = 0; c < m; ++c) next.responsibilities[static_cast<size_t>(k) * m + c] /= norm;
    }
  });

  // M-step: responsibility-weighted frequencies, merged in fixed block order
  const size_t stride = static_cast<size_t>(m) * (1 + 2 * nc);
  const auto acc = block_accumulate(exec, n, stride, [&](std::vector<double>& buf, int64_t k) {
    for (int c = 0; c < m; ++c) {
      const double r = next.responsibilities[static_cast<size_t>(k) * m + c];
      buf[static_cast<size_t>(c)] += r;
      for (int t = 0; t < data.horizon; ++t) {
        const size_t s = static_cast<size_t>(k) * data.horizon + t;
        const int j = data.indices[s];
        buf[static_cast<size_t>(m) + static_cast<size_t>(c) * nc + j] += r;
        if (data.hits[s])
          buf[static_cast<size_t>(m) + static_cast<size_t>(m) * nc + static_cast<size_t>(c) * nc + j] += r;
      }
    }
  });

  for (int c = 0; c < m; ++c)
    next.params.weights[static_cast<size_t>(c)] = acc[static_cast<size_t>(c)] / static_cast<double>(n);
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < nc; ++j) {
      const double cnt = acc[static_cast<size_t>(m) + static_cast<size_t>(c) * nc + j];
      if (cnt < 1e-12) continue;  // no visits: keep the previous value
      const double hit = acc[static_cast<size_t>(m) + static_cast<size_t>(m) * nc +
                             static_cast<size_t>(c) * nc + j];
      next.params.core_values(c, j) = hit / cnt;
    }

  next.log_likelihood = log_likelihood(data, next.params, exec);
  next.iteration = state.iteration + 1;
  return next;
}

EmState em_fit(const MleDataset& data, const LatentParams& init, int max_iter, double tol,
               Exec exec) {
  EmState st = em_init(data, init, exec);
  for (int it = 0; it < max_iter; ++it) {
    EmState next = em_step(data, st, exec);
    const double delta = next.log_likelihood - st.log_likelihood;
    st = std::move(next);
    if (std::abs(delta) < tol) break;
  }
  return st;
}

CoreTensorEstimates estimate_core_tensors(const MleDataset& data, Exec exec) {
  const int n = data.num_core;
  const int h = data.horizon;
  const int64_t eps = data.episodes();
  CoreTensorEstimates out;
  out.t1.order = 1;
  out.t2.order = 2;
  out.t3.order = 3;
  out.t1.dim = out.t2.dim = out.t3.dim = n;
  out.t1.episodes_used = out.t2.episodes_used = out.t3.episodes_used = eps;

  // accumulate counts and hit-products per distinct position tuple
  const size_t n1 = static_cast<size_t>(n);
  const size_t n2 = n1 * n1;
  const size_t n3 = n2 * n1;
  const size_t stride = 2 * (n1 + n2 + n3);
  const auto acc = block_accumulate(exec, eps, stride, [&](std::vector<double>& buf, int64_t k) {
    double* cnt1 = buf.data();
    double* hit1 = buf.data() + n1;
    double* cnt2 = buf.data() + 2 * n1;
    double* hit2 = buf.data() + 2 * n1 + n2;
    double* cnt3 = buf.data() + 2 * n1 + 2 * n2;
    double* hit3 = buf.data() + 2 * n1 + 2 * n2 + n3;
    const size_t base = static_cast<size_t>(k) * h;
    for (int t = 0; t < h; ++t) {
      const int i = data.indices[base + t];
      const int bi = data.hits[base + t];
      cnt1[i] += 1.0;
      hit1[i] += bi;
      for (int u = 0; u < h; ++u) {
        if (u == t) continue;
        const int j = data.indices[base + u];
        const int bj = data.hits[base + u];
        cnt2[static_cast<size_t>(i) * n1 + j] += 1.0;
        hit2[static_cast<size_t>(i) * n1 + j] += bi * bj;
        if (h >= 3) {
          for (int w = 0; w < h; ++w) {
            if (w == t || w == u) continue;
            const int l = data.indices[base + w];
            cnt3[(static_cast<size_t>(i) * n1 + j) * n1 + l] += 1.0;
            hit3[(static_cast<size_t>(i) * n1 + j) * n1 + l] +=
                bi * bj * data.hits[base + w];
          }
        }
      }
    }
  });

  auto finish = [&acc](MomentTensor& t, size_t coff, size_t hoff, size_t cells,
                       double fallback) {
    t.entries.assign(cells, fallback);
    for (size_t i = 0; i < cells; ++i)
      if (acc[coff + i] > 0.0) t.entries[i] = acc[hoff + i] / acc[coff + i];
  };
  finish(out.t1, 0, n1, n1, 0.5);
  // unobserved cross cells fall back to the product of first moments
  finish(out.t2, 2 * n1, 2 * n1 + n2, n2, 0.25);
  finish(out.t3, 2 * n1 + 2 * n2, 2 * n1 + 2 * n2 + n3, n3, 0.125);
  for (size_t i = 0; i < n2; ++i)
    if (acc[2 * n1 + i] == 0.0)
      out.t2.entries[i] = out.t1.entries[i / n1] * out.t1.entries[i % n1];
  if (h >= 3) {
    for (size_t i = 0; i < n3; ++i)
      if (acc[2 * n1 + 2 * n2 + i] == 0.0)
        out.t3.entries[i] = out.t1.entries[i / n2] * out.t1.entries[(i / n1) % n1] *
                            out.t1.entries[i % n1];
  } else {
    out.t3.entries.clear();
    out.t3.dim = 0;
  }
  return out;
}

namespace {

LatentParams perturbed_t1_start(const MomentTensor& t1, int contexts, Rng& rng) {
  LatentParams p;
  p.weights.assign(static_cast<size_t>(contexts), 1.0 / contexts);
  p.core_values.resize(contexts, t1.dim);
  for (int m = 0; m < contexts; ++m)
    for (int j = 0; j < t1.dim; ++j)
      p.core_values(m, j) =
          std::clamp(t1.entries[static_cast<size_t>(j)] + 0.1 * (rng.uniform() - 0.5), 0.0, 1.0);
  return p;
}

LatentParams kmeans_start(const MleDataset& data, int contexts, Rng& rng) {
  const int n = data.num_core;
  const int64_t eps = data.episodes();
  // per-episode empirical frequency vectors; indices without visits take the
  // global frequency
  std::vector<double> gcnt(static_cast<size_t>(n), 0.0), ghit(static_cast<size_t>(n), 0.0);
  for (size_t s = 0; s < data.indices.size(); ++s) {
    gcnt[static_cast<size_t>(data.indices[s])] += 1.0;
    ghit[static_cast<size_t>(data.indices[s])] += data.hits[s];
  }
  std::vector<double> gfreq(static_cast<size_t>(n), 0.5);
  for (int j = 0; j < n; ++j)
    if (gcnt[static_cast<size_t>(j)] > 0.0)
      gfreq[static_cast<size_t>(j)] = ghit[static_cast<size_t>(j)] / gcnt[static_cast<size_t>(j)];

  std::vector<double> feat(static_cast<size_t>(eps) * n);
  for (int64_t k = 0; k < eps; ++k) {
    std::vector<double> cnt(static_cast<size_t>(n), 0.0), hit(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < data.horizon; ++t) {
      const size_t s = static_cast<size_t>(k) * data.horizon + t;
      cnt[static_cast<size_t>(data.indices[s])] += 1.0;
      hit[static_cast<size_t>(data.indices[s])] += data.hits[s];
    }
    for (int j = 0; j < n; ++j)
      feat[static_cast<size_t>(k) * n + j] =
          cnt[static_cast<size_t>(j)] > 0.0 ? hit[static_cast<size_t>(j)] / cnt[static_cast<size_t>(j)]
                                            : gfreq[static_cast<size_t>(j)];
  }

  // k-means++ seeding then a fixed number of Lloyd iterations
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<size_t>(contexts));
  const int64_t first = rng.uniform_int(static_cast<int>(std::min<int64_t>(eps, 1 << 30)));
  centers.emplace_back(feat.begin() + first * n, feat.begin() + (first + 1) * n);
  std::vector<double> d2(static_cast<size_t>(eps), 0.0);
  while (static_cast<int>(centers.size()) < contexts) {
    double total = 0.0;
    for (int64_t k = 0; k < eps; ++k) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) {
          const double diff = feat[static_cast<size_t>(k) * n + j] - c[static_cast<size_t>(j)];
          d += diff * diff;
        }
        best = std::min(best, d);
      }
      d2[static_cast<size_t>(k)] = best;
      total += best;
    }
    int64_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total, accum = 0.0;
      for (int64_t k = 0; k < eps; ++k) {
        accum += d2[static_cast<size_t>(k)];
        if (u < accum) {
          pick = k;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(static_cast<int>(std::min<int64_t>(eps, 1 << 30)));
    }
    centers.emplace_back(feat.begin() + pick * n, feat.begin() + (pick + 1) * n);
  }

  std::vector<int> assign(static_cast<size_t>(eps), 0);
  for (int lloyd = 0; lloyd < 25; ++lloyd) {
    for (int64_t k = 0; k < eps; ++k) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < contexts; ++c) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) {
          const double diff =
              feat[static_cast<size_t>(k) * n + j] - centers[static_cast<size_t>(c)][static_cast<size_t>(j)];
          d += diff * diff;
        }
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[static_cast<size_t>(k)] = best;
    }
    for (int c = 0; c < contexts; ++c) {
      std::vector<double> sum(static_cast<size_t>(n), 0.0);
      int64_t cnt = 0;
      for (int64_t k = 0; k < eps; ++k)
        if (assign[static_cast<size_t>(k)] == c) {
          ++cnt;
          for (int j = 0; j < n; ++j) sum[static_cast<size_t>(j)] += feat[static_cast<size_t>(k) * n + j];
        }
      if (cnt > 0)
        for (int j = 0; j < n; ++j)
          centers[static_cast<size_t>(c)][static_cast<size_t>(j)] = sum[static_cast<size_t>(j)] / cnt;
    }
  }

  LatentParams p;
  p.weights.assign(static_cast<size_t>(contexts), 0.0);
  p.core_values.resize(contexts, n);
  // cluster frequencies weighted by visit counts within the cluster
  for (int c = 0; c < contexts; ++c) {
    std::vector<double> cnt(static_cast<size_t>(n), 0.0), hit(static_cast<size_t>(n), 0.0);
    int64_t members = 0;
    for (int64_t k = 0; k < eps; ++k) {
      if (assign[static_cast<size_t>(k)] != c) continue;
      ++members;
      for (int t = 0; t < data.horizon; ++t) {
        const size_t s = static_cast<size_t>(k) * data.horizon + t;
        cnt[static_cast<size_t>(data.indices[s])] += 1.0;
        hit[static_cast<size_t>(data.indices[s])] += data.hits[s];
      }
    }
    p.weights[static_cast<size_t>(c)] = static_cast<double>(members) / static_cast<double>(eps);
    for (int j = 0; j < n; ++j)
      p.core_values(c, j) = cnt[static_cast<size_t>(j)] > 0.0
                                ? hit[static_cast<size_t>(j)] / cnt[static_cast<size_t>(j)]
                                : gfreq[static_cast<size_t>(j)];
  }
  // keep weights interior
  double wsum = 0.0;
  for (auto& w : p.weights) {
    w = std::max(w, 1e-3 / contexts);
    wsum += w;
  }
  for (auto& w : p.weights) w /= wsum;
  return p;
}

}  // namespace

LatentParams init_spectral(const SpectralInput& input, int contexts, Rng& rng) {
  if (input.t1 == nullptr) throw std::invalid_argument("first-order tensor required");
  const MomentTensor& t1 = *input.t1;
  const int n = t1.dim;

  auto fallback = [&]() {
    if (input.data != nullptr && input.data->episodes() >= contexts)
      return kmeans_start(*input.data, contexts, rng);
    return perturbed_t1_start(t1, contexts, rng);
  };

  if (contexts == 1) {
    LatentParams p;
    p.weights = {1.0};
    p.core_values.resize(1, n);
    for (int j = 0; j < n; ++j)
      p.core_values(0, j) = std::clamp(t1.entries[static_cast<size_t>(j)], 0.0, 1.0);
    return p;
  }
  if (contexts > n) return fallback();
  if (input.t2 == nullptr || input.t3 == nullptr || input.t3->dim != n) return fallback();

  Eigen::MatrixXd t2(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      t2(i, j) = input.t2->entries[static_cast<size_t>(i) * n + j];
  t2 = 0.5 * (t2 + t2.transpose());

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t2);
  // top `contexts` eigenpairs; degenerate spectrum falls through
  Eigen::VectorXd evals(contexts);
  Eigen::MatrixXd evecs(n, contexts);
  for (int c = 0; c < contexts; ++c) {
    evals(c) = es.eigenvalues()(n - 1 - c);
    evecs.col(c) = es.eigenvectors().col(n - 1 - c);
  }
  if (evals(contexts - 1) < 1e-10 || evals(contexts - 1) < 1e-10 * evals(0)) return fallback();

  const Eigen::MatrixXd whiten = evecs * evals.cwiseSqrt().cwiseInverse().asDiagonal();  // n x M
  const Eigen::MatrixXd color = evecs * evals.cwiseSqrt().asDiagonal();                  // n x M

  auto project_t3 = [&](const Eigen::VectorXd& theta) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int l = 0; l < n; ++l)
          acc += theta(l) * input.t3->entries[(static_cast<size_t>(i) * n + j) * n + l];
        m(i, j) = acc;
      }
    return m;
  };

  Eigen::VectorXd theta1(n), theta2(n);
  for (int i = 0; i < n; ++i) {
    theta1(i) = rng.normal();
    theta2(i) = rng.normal();
  }
  const Eigen::MatrixXd m1 = whiten.transpose() * project_t3(theta1) * whiten;
  const Eigen::MatrixXd m2 = whiten.transpose() * project_t3(theta2) * whiten;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(m2);
  if (!lu.isInvertible()) return fallback();
  Eigen::MatrixXd quotient = m1 * lu.inverse();
  quotient = 0.5 * (quotient + quotient.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qe(quotient);
  // eigenvalue collisions mean the random projections failed to separate
  for (int c = 0; c + 1 < contexts; ++c)
    if (std::abs(qe.eigenvalues()(c) - qe.eigenvalues()(c + 1)) < 1e-8) return fallback();

  LatentParams p;
  p.weights.assign(static_cast<size_t>(contexts), 0.0);
  p.core_values.resize(contexts, n);
  bool ok = true;
  for (int c = 0; c < contexts; ++c) {
    const Eigen::VectorXd y = qe.eigenvectors().col(c);
    Eigen::VectorXd dir = color * y;             // +- sqrt(w_m) * nu_m
    const double lam = y.dot(m1 * y);            // theta1^T nu_m
    double sw = theta1.dot(dir) / lam;           // +- sqrt(w_m); sign fixes y
    if (sw < 0.0) {
      sw = -sw;
      dir = -dir;
    }
    if (!std::isfinite(sw) || sw <= 1e-6) {
      ok = false;
      break;
    }
    p.weights[static_cast<size_t>(c)] = sw * sw;
    p.core_values.row(c) = (dir / sw).transpose();
  }
  if (!ok) return fallback();

  // weights re-solved from T1 on the recovered directions, then projected
  Eigen::MatrixXd v(n, contexts);
  for (int c = 0; c < contexts; ++c) v.col(c) = p.core_values.row(c).transpose();
  Eigen::VectorXd t1v(n);
  for (int j = 0; j < n; ++j) t1v(j) = t1.entries[static_cast<size_t>(j)];
  const Eigen::VectorXd wls = v.colPivHouseholderQr().solve(t1v);
  double wsum = 0.0;
  for (int c = 0; c < contexts; ++c) {
    p.weights[static_cast<size_t>(c)] = std::max(wls(c), 1e-6);
    wsum += p.weights[static_cast<size_t>(c)];
  }
  for (auto& w : p.weights) w /= wsum;
  for (int c = 0; c < contexts; ++c)
    for (int j = 0; j < n; ++j) p.core_values(c, j) = std::clamp(p.core_values(c, j), 0.0, 1.0);
  return p;
}

}  // namespace lmab
