#include "lmab/moments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lmab/mle.hpp"

namespace lmab {

namespace {

void check_cell_guard(int dim, int order) {
  double cells = 1.0;
  for (int l = 0; l < order; ++l) cells *= dim;
  if (cells > static_cast<double>(kTensorCellGuard))
    throw std::runtime_error("tensor cell guard n^l exceeded");
}

// iterate over multi-indices in row-major order
bool next_index(std::vector<int>& idx, int dim) {
  for (int t = static_cast<int>(idx.size()) - 1; t >= 0; --t) {
    if (++idx[static_cast<size_t>(t)] < dim) return true;
    idx[static_cast<size_t>(t)] = 0;
  }
  return false;
}

}  // namespace

LatentParams core_restriction(const LmabInstance& inst, const CoreSet& core) {
  LatentParams p;
  p.weights = inst.weights;
  p.core_values.resize(inst.num_contexts, core.size());
  for (int m = 0; m < inst.num_contexts; ++m)
    for (int j = 0; j < core.size(); ++j) {
      const auto [a, zi] = core.pairs[static_cast<size_t>(j)];
      p.core_values(m, j) = zi >= 0 ? inst.mu(m, a, zi) : inst.gaussian_mean(m, a);
    }
  return p;
}

MomentTensor exact_moment_tensor(const LatentParams& params, int order) {
  if (order < 1) throw std::invalid_argument("order must be >= 1");
  const int n = params.dim();
  check_cell_guard(n, order);
  MomentTensor t;
  t.order = order;
  t.dim = n;
  int64_t cells = 1;
  for (int l = 0; l < order; ++l) cells *= n;
  t.entries.assign(static_cast<size_t>(cells), 0.0);
  std::vector<int> idx(static_cast<size_t>(order), 0);
  size_t off = 0;
  do {
    double v = 0.0;
    for (int m = 0; m < params.contexts(); ++m) {
      double prod = params.weights[static_cast<size_t>(m)];
      for (int i : idx) prod *= params.core_values(m, i);
      v += prod;
    }
    t.entries[off++] = v;
  } while (next_index(idx, n));
  return t;
}

MomentTensor exact_moment_tensor(const LmabInstance& inst, const CoreSet& core, int order) {
  return exact_moment_tensor(core_restriction(inst, core), order);
}

MomentTensor estimate_moment_tensor(const LmabInstance& inst, const CoreSet& core, int order,
                                    int64_t n1, uint64_t seed, Exec exec) {
  if (order > inst.horizon) throw std::invalid_argument("order exceeds horizon");
  if (n1 < 1) throw std::invalid_argument("N1 must be >= 1");
  const int n = core.size();
  check_cell_guard(n, order);
  MomentTensor t;
  t.order = order;
  t.dim = n;
  int64_t cells = 1;
  for (int l = 0; l < order; ++l) cells *= n;
  t.entries.assign(static_cast<size_t>(cells), 0.0);
  t.episodes_used = cells * n1;

  // one independent episode batch per cell; the per-cell average is a count
  // over indicator products so the parallel lane is exact
  for_each_index(exec, cells, [&](int64_t cell) {
    std::vector<int> idx(static_cast<size_t>(order));
    int64_t rem = cell;
    for (int tpos = order - 1; tpos >= 0; --tpos) {
      idx[static_cast<size_t>(tpos)] = static_cast<int>(rem % n);
      rem /= n;
    }
    int64_t hits = 0;
    for (int64_t k = 0; k < n1; ++k) {
      Rng rng(derive_seed(seed, static_cast<uint64_t>(cell), static_cast<uint64_t>(k)));
      const int context = rng.categorical(inst.weights);
      bool all = true;
      // no early exit: every step consumes its draw, keeping the episode
      // stream length fixed
      for (int tpos = 0; tpos < order; ++tpos) {
        const auto [a, zi] = core.pairs[static_cast<size_t>(idx[static_cast<size_t>(tpos)])];
        const int drawn = rng.categorical(inst.mu_row(context, a));
        if (drawn != zi) all = false;
      }
      if (all) ++hits;
    }
    t.entries[static_cast<size_t>(cell)] =
        static_cast<double>(hits) / static_cast<double>(n1);
  });
  return t;
}

std::vector<double> moment_residual(const LatentParams& params,
                                    const std::vector<MomentTensor>& tensors) {
  std::vector<double> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    const MomentTensor model = exact_moment_tensor(params, t.order);
    if (model.dim != t.dim) throw std::invalid_argument("tensor dimension mismatch");
    double sup = 0.0;
    for (size_t i = 0; i < t.entries.size(); ++i)
      sup = std::max(sup, std::abs(model.entries[i] - t.entries[i]));
    out.push_back(sup);
  }
  return out;
}

namespace {

// projection onto {w : sum w = 1, w >= floor}
void project_weights(std::vector<double>& w, double floor) {
  const int m = static_cast<int>(w.size());
  const double fl = std::min(floor, 1.0 / m);
  std::vector<double> shifted(w.size());
  for (size_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - fl;
  const double mass = 1.0 - fl * m;
  // Euclidean projection of `shifted` onto the simplex scaled to `mass`
  std::vector<double> u = shifted;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  for (int i = 0; i < m; ++i) {
    cum += u[static_cast<size_t>(i)];
    const double cand = (cum - mass) / (i + 1);
    if (u[static_cast<size_t>(i)] - cand > 0.0) tau = cand;
  }
  for (size_t i = 0; i < w.size(); ++i) w[i] = std::max(0.0, shifted[i] - tau) + fl;
}

struct Objective {
  const std::vector<MomentTensor>* tensors;
  std::vector<double> cell_weight;  // 1 / n^l per order

  double eval(const LatentParams& p, Eigen::MatrixXd* grad_nu,
              std::vector<double>* grad_w) const {
    const int m = p.contexts();
    const int n = p.dim();
    double total = 0.0;
    if (grad_nu) grad_nu->setZero(m, n);
    if (grad_w) std::fill(grad_w->begin(), grad_w->end(), 0.0);
    std::vector<double> prod(static_cast<size_t>(m));
    std::vector<int> idx;
    for (size_t li = 0; li < tensors->size(); ++li) {
      const MomentTensor& t = (*tensors)[li];
      const double cw = cell_weight[li];
      idx.assign(static_cast<size_t>(t.order), 0);
      size_t off = 0;
      do {
        double model = 0.0;
        for (int c = 0; c < m; ++c) {
          double pr = 1.0;
          for (int i : idx) pr *= p.core_values(c, i);
          prod[static_cast<size_t>(c)] = pr;
          model += p.weights[static_cast<size_t>(c)] * pr;
        }
        const double err = model - t.entries[off];
        total += cw * err * err;
        if (grad_nu || grad_w) {
          const double common = 2.0 * cw * err;
          for (int c = 0; c < m; ++c) {
            if (grad_w) (*grad_w)[static_cast<size_t>(c)] += common * prod[static_cast<size_t>(c)];
            if (grad_nu) {
              for (size_t tpos = 0; tpos < idx.size(); ++tpos) {
                const int j = idx[tpos];
                const double nu = p.core_values(c, j);
                double leave;
                if (nu > 1e-12) {
                  leave = prod[static_cast<size_t>(c)] / nu;
                } else {
                  leave = 1.0;
                  for (size_t s = 0; s < idx.size(); ++s)
                    if (s != tpos) leave *= p.core_values(c, idx[s]);
                }
                (*grad_nu)(c, j) += common * p.weights[static_cast<size_t>(c)] * leave;
              }
            }
          }
        }
        ++off;
      } while (next_index(idx, t.dim));
    }
    return total;
  }
};

// projected gradient with backtracking from a given start
LatentParams run_pg(const Objective& obj, LatentParams p, const MatchConfig& cfg) {
  const int m = p.contexts();
  const int n = p.dim();
  Eigen::MatrixXd grad_nu(m, n);
  std::vector<double> grad_w(static_cast<size_t>(m));
  double fv = obj.eval(p, &grad_nu, &grad_w);
  double step = 0.5;
  for (int it = 0; it < cfg.max_pg_iters; ++it) {
    LatentParams cand = p;
    for (int c = 0; c < m; ++c) {
      cand.weights[static_cast<size_t>(c)] -= step * grad_w[static_cast<size_t>(c)];
      for (int j = 0; j < n; ++j)
        cand.core_values(c, j) =
            std::clamp(cand.core_values(c, j) - step * grad_nu(c, j), 0.0, 1.0);
    }
    project_weights(cand.weights, cfg.w_min);
    const double fc = obj.eval(cand, nullptr, nullptr);
    if (fc < fv - 1e-18) {
      p = std::move(cand);
      fv = fc;
      obj.eval(p, &grad_nu, &grad_w);
      step = std::min(step * 1.3, 8.0);
    } else {
      step *= 0.5;
      if (step < 1e-12) break;
    }
    if (fv < 1e-26) break;
  }
  return p;
}

// alternating projection passes for the subspace-consistency bands of the
// valid-parameter set; box and simplex constraints are re-applied after
void apply_band_projection(LatentParams& p, const MatchConfig& cfg) {
  if (!cfg.transform || cfg.num_values <= 0 || cfg.delta_sub <= 0.0) return;
  const Eigen::MatrixXd& tr = *cfg.transform;
  const int rows = static_cast<int>(tr.rows());
  const int na = rows / cfg.num_values;
  for (int pass = 0; pass < 5; ++pass) {
    for (int m = 0; m < p.contexts(); ++m) {
      const double band = 2.0 * std::sqrt(static_cast<double>(p.contexts())) * cfg.delta_sub /
                          std::sqrt(std::max(p.weights[static_cast<size_t>(m)], 1e-12));
      Eigen::VectorXd nu = p.core_values.row(m).transpose();
      Eigen::VectorXd v = tr * nu;
      // per-entry bands
      for (int r = 0; r < rows; ++r) {
        const double lo = -band, hi = 1.0 + band;
        double viol = 0.0;
        if (v(r) < lo) viol = v(r) - lo;
        if (v(r) > hi) viol = v(r) - hi;
        if (viol != 0.0) {
          const double nn = tr.row(r).squaredNorm();
          if (nn > 1e-18) nu -= (viol / nn) * tr.row(r).transpose();
          v = tr * nu;
        }
      }
      // per-action row sums close to 1
      for (int a = 0; a < na; ++a) {
        double s = 0.0;
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(nu.size());
        for (int zi = 0; zi < cfg.num_values; ++zi) {
          s += v(a * cfg.num_values + zi);
          dir += tr.row(a * cfg.num_values + zi).transpose();
        }
        const double rowband = cfg.num_values * band;
        double viol = 0.0;
        if (s < 1.0 - rowband) viol = s - (1.0 - rowband);
        if (s > 1.0 + rowband) viol = s - (1.0 + rowband);
        if (viol != 0.0) {
          const double nn = dir.squaredNorm();
          if (nn > 1e-18) nu -= (viol / nn) * dir;
          v = tr * nu;
        }
      }
      for (int j = 0; j < nu.size(); ++j)
        p.core_values(m, j) = std::clamp(nu(j), 0.0, 1.0);
    }
  }
}

double band_violation(const LatentParams& p, const MatchConfig& cfg) {
  if (!cfg.transform || cfg.num_values <= 0 || cfg.delta_sub <= 0.0) return 0.0;
  const Eigen::MatrixXd& tr = *cfg.transform;
  const int rows = static_cast<int>(tr.rows());
  const int na = rows / cfg.num_values;
  double worst = 0.0;
  for (int m = 0; m < p.contexts(); ++m) {
    const double band = 2.0 * std::sqrt(static_cast<double>(p.contexts())) * cfg.delta_sub /
                        std::sqrt(std::max(p.weights[static_cast<size_t>(m)], 1e-12));
    const Eigen::VectorXd v = tr * p.core_values.row(m).transpose();
    for (int r = 0; r < rows; ++r) {
      worst = std::max(worst, -band - v(r));
      worst = std::max(worst, v(r) - (1.0 + band));
    }
    for (int a = 0; a < na; ++a) {
      double s = 0.0;
      for (int zi = 0; zi < cfg.num_values; ++zi) s += v(a * cfg.num_values + zi);
      worst = std::max(worst, std::abs(s - 1.0) - cfg.num_values * band);
    }
  }
  return std::max(0.0, worst);
}

}  // namespace

FitResult fit_moments(const std::vector<MomentTensor>& tensors, const MatchConfig& config,
                      const std::optional<LatentParams>& initial, Rng& rng, Exec exec) {
  if (tensors.empty()) throw std::invalid_argument("no tensors supplied");
  const int n = tensors.front().dim;
  const int contexts = initial ? initial->contexts() : config.contexts;
  if (contexts < 1) throw std::invalid_argument("context count not configured");

  Objective obj;
  obj.tensors = &tensors;
  obj.cell_weight.clear();
  for (const auto& t : tensors)
    obj.cell_weight.push_back(1.0 / static_cast<double>(t.cell_count()));

  std::vector<LatentParams> starts;
  if (initial) starts.push_back(*initial);

  // spectral start from the supplied tensors when third order is available
  const MomentTensor* t1 = nullptr;
  const MomentTensor* t2 = nullptr;
  const MomentTensor* t3 = nullptr;
  for (const auto& t : tensors) {
    if (t.order == 1) t1 = &t;
    if (t.order == 2) t2 = &t;
    if (t.order == 3) t3 = &t;
  }
  if (contexts >= 1 && t1 != nullptr) {
    SpectralInput si;
    si.t1 = t1;
    si.t2 = t2;
    si.t3 = t3;
    Rng spectral_rng(derive_seed(0x5eedceull, 1));
    starts.push_back(init_spectral(si, contexts, spectral_rng));
  }

  // random restarts
  for (int r = 0; r < config.random_restarts; ++r) {
    LatentParams p;
    p.weights = rng.dirichlet(contexts);
    p.core_values.resize(contexts, n);
    for (int m = 0; m < contexts; ++m)
      for (int j = 0; j < n; ++j) p.core_values(m, j) = rng.uniform();
    starts.push_back(std::move(p));
  }

  for (auto& s : starts) {
    project_weights(s.weights, config.w_min);
    for (int m = 0; m < s.contexts(); ++m)
      for (int j = 0; j < s.dim(); ++j)
        s.core_values(m, j) = std::clamp(s.core_values(m, j), 0.0, 1.0);
  }

  std::vector<LatentParams> results(starts.size());
  for_each_index(exec, static_cast<int64_t>(starts.size()), [&](int64_t i) {
    results[static_cast<size_t>(i)] = run_pg(obj, starts[static_cast<size_t>(i)], config);
  });

  FitResult out;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < results.size(); ++i) {
    apply_band_projection(results[i], config);
    const auto res = moment_residual(results[i], tensors);
    const double sup = *std::max_element(res.begin(), res.end());
    if (sup < best - 1e-15) {
      best = sup;
      out.params = results[i];
      out.residuals = res;
      out.best_restart = static_cast<int>(i);
    }
  }
  out.max_residual = best;
  out.success = best <= config.delta_tsr;
  out.band_violation = band_violation(out.params, config);
  return out;
}

namespace {

// Minimal edge-list min-cost-flow (successive shortest paths, Bellman-Ford).
// The transportation instances here have at most a few dozen nodes.
struct McmfGraph {
  struct Edge {
    int to;
    double cap;
    double cost;
    int rev;  // index of the reverse edge in graph[to]
  };
  std::vector<std::vector<Edge>> adj;

  explicit McmfGraph(int nodes) : adj(static_cast<size_t>(nodes)) {}

  void add_edge(int from, int to, double cap, double cost) {
    adj[static_cast<size_t>(from)].push_back({to, cap, cost, static_cast<int>(adj[static_cast<size_t>(to)].size())});
    adj[static_cast<size_t>(to)].push_back({from, 0.0, -cost, static_cast<int>(adj[static_cast<size_t>(from)].size()) - 1});
  }

  // augments until the source is exhausted; returns (flow, cost) and leaves
  // the final labels in dist
  std::pair<double, double> run(int s, int t, std::vector<double>& dist) {
    const int n = static_cast<int>(adj.size());
    double flow = 0.0, total_cost = 0.0;
    std::vector<int> pred_node(static_cast<size_t>(n));
    std::vector<int> pred_edge(static_cast<size_t>(n));
    while (true) {
      dist.assign(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
      dist[static_cast<size_t>(s)] = 0.0;
      for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (int u = 0; u < n; ++u) {
          if (!std::isfinite(dist[static_cast<size_t>(u)])) continue;
          for (size_t ei = 0; ei < adj[static_cast<size_t>(u)].size(); ++ei) {
            const Edge& e = adj[static_cast<size_t>(u)][ei];
            if (e.cap <= 1e-15) continue;
            const double nd = dist[static_cast<size_t>(u)] + e.cost;
            if (nd < dist[static_cast<size_t>(e.to)] - 1e-15) {
              dist[static_cast<size_t>(e.to)] = nd;
              pred_node[static_cast<size_t>(e.to)] = u;
              pred_edge[static_cast<size_t>(e.to)] = static_cast<int>(ei);
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (!std::isfinite(dist[static_cast<size_t>(t)])) break;
      double bottleneck = std::numeric_limits<double>::infinity();
      for (int u = t; u != s; u = pred_node[static_cast<size_t>(u)])
        bottleneck = std::min(
            bottleneck,
            adj[static_cast<size_t>(pred_node[static_cast<size_t>(u)])][static_cast<size_t>(pred_edge[static_cast<size_t>(u)])].cap);
      if (bottleneck <= 1e-15) break;
      for (int u = t; u != s; u = pred_node[static_cast<size_t>(u)]) {
        Edge& e = adj[static_cast<size_t>(pred_node[static_cast<size_t>(u)])][static_cast<size_t>(pred_edge[static_cast<size_t>(u)])];
        e.cap -= bottleneck;
        adj[static_cast<size_t>(u)][static_cast<size_t>(e.rev)].cap += bottleneck;
        total_cost += bottleneck * e.cost;
      }
      flow += bottleneck;
    }
    return {flow, total_cost};
  }
};

}  // namespace

OtResult optimal_transport(std::span<const double> w, std::span<const double> v,
                           const Eigen::MatrixXd& cost) {
  const int p = static_cast<int>(w.size());
  const int q = static_cast<int>(v.size());
  if (cost.rows() != p || cost.cols() != q) throw std::invalid_argument("cost shape mismatch");
  const double mass_w = std::accumulate(w.begin(), w.end(), 0.0);
  const double mass_v = std::accumulate(v.begin(), v.end(), 0.0);
  if (std::abs(mass_w - mass_v) > 1e-9)
    throw std::invalid_argument("marginal masses differ by more than 1e-9");

  // nodes: 0 = source, 1..p left, p+1..p+q right, p+q+1 = sink
  const int s = 0, t = p + q + 1;
  McmfGraph g(p + q + 2);
  for (int i = 0; i < p; ++i) g.add_edge(s, 1 + i, w[static_cast<size_t>(i)], 0.0);
  for (int j = 0; j < q; ++j) g.add_edge(1 + p + j, t, v[static_cast<size_t>(j)], 0.0);
  std::vector<std::pair<int, int>> arc_of_cell(static_cast<size_t>(p) * q);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) {
      arc_of_cell[static_cast<size_t>(i) * q + j] = {1 + i,
                                                     static_cast<int>(g.adj[static_cast<size_t>(1 + i)].size())};
      g.add_edge(1 + i, 1 + p + j, std::min(mass_w, mass_v) + 1.0, cost(i, j));
    }

  std::vector<double> dist;
  const auto [flow, total_cost] = g.run(s, t, dist);
  (void)flow;

  OtResult out;
  out.cost = total_cost;
  out.plan.resize(p, q);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) {
      const auto [node, ei] = arc_of_cell[static_cast<size_t>(i) * q + j];
      const McmfGraph::Edge& e = g.adj[static_cast<size_t>(node)][static_cast<size_t>(ei)];
      out.plan(i, j) = g.adj[static_cast<size_t>(e.to)][static_cast<size_t>(e.rev)].cap;
    }
  // Duals by complementary slackness: u_i + v_j = c_ij on the support,
  // propagated over the support graph (u = 0 on each component root). By
  // weak duality, feasibility of these duals plus a zero gap certifies that
  // the plan is exactly optimal; tests check both.
  out.dual_left = Eigen::VectorXd::Zero(p);
  out.dual_right = Eigen::VectorXd::Zero(q);
  std::vector<int> seen_l(static_cast<size_t>(p), 0), seen_r(static_cast<size_t>(q), 0);
  for (int root = 0; root < p; ++root) {
    if (seen_l[static_cast<size_t>(root)]) continue;
    seen_l[static_cast<size_t>(root)] = 1;
    out.dual_left(root) = 0.0;
    std::vector<std::pair<bool, int>> stack{{true, root}};  // (is_left, index)
    while (!stack.empty()) {
      const auto [is_left, idx] = stack.back();
      stack.pop_back();
      if (is_left) {
        for (int j = 0; j < q; ++j)
          if (out.plan(idx, j) > 1e-13 && !seen_r[static_cast<size_t>(j)]) {
            seen_r[static_cast<size_t>(j)] = 1;
            out.dual_right(j) = cost(idx, j) - out.dual_left(idx);
            stack.emplace_back(false, j);
          }
      } else {
        for (int i = 0; i < p; ++i)
          if (out.plan(i, idx) > 1e-13 && !seen_l[static_cast<size_t>(i)]) {
            seen_l[static_cast<size_t>(i)] = 1;
            out.dual_left(i) = cost(i, idx) - out.dual_right(idx);
            stack.emplace_back(true, i);
          }
      }
    }
  }
  (void)dist;
  return out;
}

double wasserstein_distance(const LatentParams& p, const LatentParams& q) {
  if (p.dim() != q.dim()) throw std::invalid_argument("parameter dimensions differ");
  Eigen::MatrixXd cost(p.contexts(), q.contexts());
  for (int i = 0; i < p.contexts(); ++i)
    for (int j = 0; j < q.contexts(); ++j)
      cost(i, j) = (p.core_values.row(i) - q.core_values.row(j)).lpNorm<Eigen::Infinity>();
  return optimal_transport(p.weights, q.weights, cost).cost;
}

SeparationDiagnostic separation_diagnostic(const LatentParams& truth, const LatentParams& fitted) {
  Eigen::MatrixXd cost(truth.contexts(), fitted.contexts());
  for (int i = 0; i < truth.contexts(); ++i)
    for (int j = 0; j < fitted.contexts(); ++j)
      cost(i, j) = (truth.core_values.row(i) - fitted.core_values.row(j)).lpNorm<Eigen::Infinity>();
  const OtResult ot = optimal_transport(truth.weights, fitted.weights, cost);
  SeparationDiagnostic diag;
  diag.matching.resize(static_cast<size_t>(truth.contexts()));
  diag.weight_err.resize(static_cast<size_t>(truth.contexts()));
  diag.value_err.resize(static_cast<size_t>(truth.contexts()));
  for (int i = 0; i < truth.contexts(); ++i) {
    int arg = 0;
    for (int j = 1; j < fitted.contexts(); ++j)
      if (ot.plan(i, j) > ot.plan(i, arg)) arg = j;
    diag.matching[static_cast<size_t>(i)] = arg;
    diag.weight_err[static_cast<size_t>(i)] =
        std::abs(truth.weights[static_cast<size_t>(i)] - fitted.weights[static_cast<size_t>(arg)]);
    diag.value_err[static_cast<size_t>(i)] = cost(i, arg);
  }
  return diag;
}

}  // namespace lmab
