#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lmab/mle.hpp"
#include "lmab/subspace.hpp"

using namespace lmab;

namespace {

LmabInstance random_instance(Rng& rng, int m, int a, int z, int h, int rank) {
  GeneratorOptions gen;
  gen.num_contexts = m;
  gen.num_actions = a;
  gen.num_values = z;
  gen.horizon = h;
  gen.rank = rank;
  return generate_random_instance(gen, rng);
}

CoreSet core_for(const LmabInstance& inst) {
  const auto sub = top_m_eigenspace(exact_second_moment(inst), inst.num_contexts);
  const auto phi = subspace_features(sub, inst.num_actions, inst.z());
  return select_core_coordinates(phi, solve_optimal_design(phi));
}

// synthetic dataset straight from latent parameters (uniform indices)
MleDataset synthesize(const LatentParams& truth, int horizon, int64_t episodes, uint64_t seed) {
  MleDataset data;
  data.num_core = truth.dim();
  data.horizon = horizon;
  data.indices.resize(static_cast<size_t>(episodes) * horizon);
  data.hits.resize(static_cast<size_t>(episodes) * horizon);
  for (int64_t k = 0; k < episodes; ++k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    const int m = rng.categorical(truth.weights);
    for (int t = 0; t < horizon; ++t) {
      const int j = rng.uniform_int(truth.dim());
      const size_t s = static_cast<size_t>(k) * horizon + t;
      data.indices[s] = j;
      data.hits[s] = rng.uniform() < truth.core_values(m, j) ? 1 : 0;
    }
  }
  return data;
}

LatentParams make_params(std::vector<double> w, const std::vector<std::vector<double>>& nu) {
  LatentParams p;
  p.weights = std::move(w);
  p.core_values.resize(static_cast<int>(nu.size()), static_cast<int>(nu.front().size()));
  for (size_t m = 0; m < nu.size(); ++m)
    for (size_t j = 0; j < nu[m].size(); ++j)
      p.core_values(static_cast<int>(m), static_cast<int>(j)) = nu[m][j];
  return p;
}

}  // namespace

TEST_CASE("single-core-pair data uses index zero everywhere") {
  LmabInstance inst;
  inst.num_contexts = 1;
  inst.num_actions = 1;
  inst.horizon = 3;
  inst.support = RewardSupport::bernoulli();
  inst.weights = {1.0};
  inst.reward_probs = {0.4, 0.6};
  CoreSet core;
  core.pairs = {{0, 1}};
  core.rows = {1};
  const auto data = collect_mle_data(inst, core, 50, 3);
  for (int idx : data.indices) CHECK(idx == 0);
}

TEST_CASE("deterministic rewards produce constant indicators") {
  LmabInstance inst;
  inst.num_contexts = 1;
  inst.num_actions = 2;
  inst.horizon = 4;
  inst.support = RewardSupport::bernoulli();
  inst.weights = {1.0};
  inst.reward_probs = {0.0, 1.0, 1.0, 0.0};  // a0 hits value 1 always
  CoreSet core;
  core.pairs = {{0, 1}, {1, 0}};  // both always-hit pairs
  core.rows = {1, 2};
  const auto data = collect_mle_data(inst, core, 40, 7);
  for (uint8_t b : data.hits) CHECK(b == 1);
}

TEST_CASE("index draws are uniform within the Hoeffding band") {
  Rng rng(3);
  const auto inst = random_instance(rng, 2, 4, 2, 2, 2);
  const auto core = core_for(inst);
  const int64_t episodes = 100000 / inst.horizon;
  const auto data = collect_mle_data(inst, core, episodes, 11);
  std::vector<double> freq(static_cast<size_t>(core.size()), 0.0);
  for (int idx : data.indices) freq[static_cast<size_t>(idx)] += 1.0;
  const double total = static_cast<double>(data.indices.size());
  const double band = std::sqrt(std::log(2.0 * core.size() * 1e3) / (2.0 * total));
  for (double f : freq) CHECK(std::abs(f / total - 1.0 / core.size()) <= band);
}

TEST_CASE("constant-half parameters give l = H log(1/2)") {
  const auto p = make_params({1.0}, {{0.5, 0.5, 0.5}});
  const auto data = synthesize(p, 5, 200, 17);
  CHECK(log_likelihood(data, p) == doctest::Approx(5.0 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("log likelihood matches a naive per-episode evaluation") {
  Rng rng(19);
  const auto p = make_params({0.3, 0.7}, {{0.2, 0.9, 0.5}, {0.6, 0.4, 0.8}});
  const auto data = synthesize(p, 4, 300, 23);
  const double fast = log_likelihood(data, p);
  // naive: product then log, per episode
  double naive = 0.0;
  for (int64_t k = 0; k < data.episodes(); ++k) {
    double mix = 0.0;
    for (int m = 0; m < 2; ++m) {
      double prod = p.weights[static_cast<size_t>(m)];
      for (int t = 0; t < 4; ++t) {
        const size_t s = static_cast<size_t>(k) * 4 + t;
        const double nu = p.core_values(m, data.indices[s]);
        prod *= data.hits[s] ? nu : 1.0 - nu;
      }
      mix += prod;
    }
    naive += std::log(mix);
  }
  naive /= static_cast<double>(data.episodes());
  CHECK(fast == doctest::Approx(naive).epsilon(1e-10));
}

TEST_CASE("the generating parameters beat random candidates at large N") {
  Rng rng(29);
  const auto truth = make_params({0.4, 0.6}, {{0.15, 0.85, 0.5}, {0.7, 0.3, 0.9}});
  const auto data = synthesize(truth, 5, 10000, 31);
  const double at_truth = log_likelihood(data, truth);
  for (int t = 0; t < 50; ++t) {
    LatentParams cand;
    cand.weights = rng.dirichlet(2);
    cand.core_values.resize(2, 3);
    for (int m = 0; m < 2; ++m)
      for (int j = 0; j < 3; ++j) cand.core_values(m, j) = rng.uniform();
    CHECK(log_likelihood(data, cand) <= at_truth + 1e-9);
  }
}

TEST_CASE("log likelihood is invariant under component permutation") {
  const auto p = make_params({0.3, 0.7}, {{0.2, 0.9}, {0.6, 0.4}});
  const auto q = make_params({0.7, 0.3}, {{0.6, 0.4}, {0.2, 0.9}});
  const auto data = synthesize(p, 3, 200, 37);
  CHECK(log_likelihood(data, p) == doctest::Approx(log_likelihood(data, q)).epsilon(1e-14));
}

TEST_CASE("degenerate single-context EM lands on empirical frequencies") {
  const auto truth = make_params({1.0}, {{0.3, 0.8}});
  const auto data = synthesize(truth, 4, 500, 41);
  const auto start = make_params({1.0}, {{0.5, 0.5}});
  const EmState st = em_step(data, em_init(data, start));
  // expected: per-index empirical frequency of hits
  std::vector<double> cnt(2, 0.0), hit(2, 0.0);
  for (size_t s = 0; s < data.indices.size(); ++s) {
    cnt[static_cast<size_t>(data.indices[s])] += 1.0;
    hit[static_cast<size_t>(data.indices[s])] += data.hits[s];
  }
  for (int j = 0; j < 2; ++j)
    CHECK(st.params.core_values(0, j) == doctest::Approx(hit[j] / cnt[j]).epsilon(1e-12));
}

TEST_CASE("EM never decreases the log likelihood") {
  Rng rng(43);
  int checked = 0;
  for (int trial = 0; trial < 250; ++trial) {
    const int m = 1 + rng.uniform_int(3);
    const int n = 2 + rng.uniform_int(3);
    LatentParams truth;
    truth.weights = rng.dirichlet(m);
    truth.core_values.resize(m, n);
    for (int c = 0; c < m; ++c)
      for (int j = 0; j < n; ++j) truth.core_values(c, j) = rng.uniform();
    const auto data = synthesize(truth, 3, 40, derive_seed(47, trial));
    LatentParams init;
    init.weights = rng.dirichlet(m);
    init.core_values.resize(m, n);
    for (int c = 0; c < m; ++c)
      for (int j = 0; j < n; ++j) init.core_values(c, j) = rng.uniform();
    EmState st = em_init(data, init);
    for (int it = 0; it < 4; ++it) {
      const EmState next = em_step(data, st);
      CHECK(next.log_likelihood >= st.log_likelihood - 1e-10);
      // responsibilities are a row-stochastic matrix
      for (int64_t k = 0; k < data.episodes(); ++k) {
        double row = 0.0;
        for (int c = 0; c < m; ++c)
          row += next.responsibilities[static_cast<size_t>(k) * m + c];
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
      st = next;
      ++checked;
    }
  }
  CHECK(checked == 1000);
}

TEST_CASE("well-separated two-context EM recovers the truth from k-means init") {
  const auto truth = make_params({0.45, 0.55}, {{0.9, 0.1, 0.5, 0.3}, {0.1, 0.9, 0.4, 0.7}});
  int successes = 0;
  for (int s = 0; s < 10; ++s) {
    const auto data = synthesize(truth, 6, 10000, derive_seed(53, s));
    SpectralInput si;
    const auto tensors = estimate_core_tensors(data);
    si.t1 = &tensors.t1;
    si.t2 = &tensors.t2;
    si.t3 = &tensors.t3;
    si.data = &data;
    Rng rng(derive_seed(59, s));
    const auto init = init_spectral(si, 2, rng);
    const EmState st = em_fit(data, init, 300, 1e-9);
    if (wasserstein_distance(truth, st.params) <= 0.05) ++successes;
  }
  CHECK(successes >= 9);
}

TEST_CASE("em_fit with zero iterations returns the evaluated init") {
  const auto truth = make_params({1.0}, {{0.4, 0.6}});
  const auto data = synthesize(truth, 3, 100, 61);
  const auto init = make_params({1.0}, {{0.2, 0.7}});
  const EmState st = em_fit(data, init, 0, 1e-8);
  CHECK(st.iteration == 0);
  CHECK(st.params.core_values(0, 0) == 0.2);
  CHECK(st.log_likelihood == doctest::Approx(log_likelihood(data, init)).epsilon(1e-14));
}

TEST_CASE("em_fit trajectories are bit-reproducible") {
  const auto truth = make_params({0.5, 0.5}, {{0.8, 0.2}, {0.3, 0.7}});
  const auto data = synthesize(truth, 4, 500, 67);
  const auto init = make_params({0.6, 0.4}, {{0.7, 0.3}, {0.4, 0.6}});
  const EmState a = em_fit(data, init, 50, 0.0);
  const EmState b = em_fit(data, init, 50, 0.0);
  CHECK(a.log_likelihood == b.log_likelihood);
  CHECK(a.params.weights == b.params.weights);
  CHECK((a.params.core_values - b.params.core_values).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("random-init ensemble converges to a common best likelihood") {
  const auto truth = make_params({0.5, 0.5}, {{0.9, 0.1}, {0.1, 0.9}});
  const auto data = synthesize(truth, 6, 4000, 71);
  Rng rng(73);
  double best = -1e300;
  std::vector<double> finals;
  for (int r = 0; r < 20; ++r) {
    LatentParams init;
    init.weights = rng.dirichlet(2);
    init.core_values.resize(2, 2);
    for (int m = 0; m < 2; ++m)
      for (int j = 0; j < 2; ++j) init.core_values(m, j) = rng.uniform();
    const EmState st = em_fit(data, init, 400, 1e-10);
    finals.push_back(st.log_likelihood);
    best = std::max(best, st.log_likelihood);
  }
  int at_best = 0;
  for (double f : finals)
    if (f >= best - 1e-6) ++at_best;
  CHECK(at_best >= 10);  // most restarts reach the same optimum on this toy
}

TEST_CASE("spectral init on a single context returns the first moment") {
  MomentTensor t1;
  t1.order = 1;
  t1.dim = 3;
  t1.entries = {0.2, 0.7, 0.5};
  SpectralInput si;
  si.t1 = &t1;
  Rng rng(79);
  const auto p = init_spectral(si, 1, rng);
  REQUIRE(p.contexts() == 1);
  for (int j = 0; j < 3; ++j)
    CHECK(p.core_values(0, j) == doctest::Approx(t1.entries[static_cast<size_t>(j)]));
}

TEST_CASE("spectral init recovers separated mixtures from exact tensors") {
  const auto truth =
      make_params({0.25, 0.75}, {{0.9, 0.15, 0.55, 0.35}, {0.2, 0.8, 0.4, 0.6}});
  const auto t1 = exact_moment_tensor(truth, 1);
  const auto t2 = exact_moment_tensor(truth, 2);
  const auto t3 = exact_moment_tensor(truth, 3);
  SpectralInput si;
  si.t1 = &t1;
  si.t2 = &t2;
  si.t3 = &t3;
  Rng rng(83);
  const auto est = init_spectral(si, 2, rng);
  CHECK(wasserstein_distance(truth, est) <= 1e-6);
}

TEST_CASE("rank-deficient tensors trigger a valid fallback") {
  // nu_1 = nu_2 makes T2 rank one
  const auto truth = make_params({0.5, 0.5}, {{0.6, 0.3}, {0.6, 0.3}});
  const auto t1 = exact_moment_tensor(truth, 1);
  const auto t2 = exact_moment_tensor(truth, 2);
  const auto t3 = exact_moment_tensor(truth, 3);
  const auto data = synthesize(truth, 3, 200, 89);
  SpectralInput si;
  si.t1 = &t1;
  si.t2 = &t2;
  si.t3 = &t3;
  si.data = &data;
  Rng rng(97);
  const auto est = init_spectral(si, 2, rng);
  REQUIRE(est.contexts() == 2);
  double wsum = 0.0;
  for (double w : est.weights) {
    CHECK(w >= 0.0);
    wsum += w;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
  for (int m = 0; m < 2; ++m)
    for (int j = 0; j < 2; ++j) {
      CHECK(est.core_values(m, j) >= 0.0);
      CHECK(est.core_values(m, j) <= 1.0);
    }
}

TEST_CASE("moment residuals of the MLE shrink as N grows") {
  const auto truth = make_params({0.4, 0.6}, {{0.85, 0.2, 0.5}, {0.25, 0.7, 0.45}});
  std::vector<MomentTensor> exact;
  for (int l = 1; l <= 3; ++l) exact.push_back(exact_moment_tensor(truth, l));
  const std::vector<int64_t> budgets{1000, 10000, 100000};
  std::vector<double> mean_residual(budgets.size(), 0.0);
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    for (size_t bi = 0; bi < budgets.size(); ++bi) {
      const auto data = synthesize(truth, 5, budgets[bi], derive_seed(101 + s, bi));
      SpectralInput si;
      const auto tensors = estimate_core_tensors(data);
      si.t1 = &tensors.t1;
      si.t2 = &tensors.t2;
      si.t3 = &tensors.t3;
      si.data = &data;
      Rng rng(derive_seed(103, s, bi));
      const auto init = init_spectral(si, 2, rng);
      const EmState st = em_fit(data, init, 300, 1e-9);
      const auto res = moment_residual(st.params, exact);
      mean_residual[bi] += *std::max_element(res.begin(), res.end()) / seeds;
    }
  }
  // monotone decrease with 20% slack
  CHECK(mean_residual[1] <= mean_residual[0] * 1.2);
  CHECK(mean_residual[2] <= mean_residual[1] * 1.2);
}
