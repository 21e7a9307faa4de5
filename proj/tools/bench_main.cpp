// Benchmark comparing the serial reference kernels against the OpenMP lanes.

#include <chrono>
#include <cstdio>
#include <functional>

#include "lmab/mle.hpp"
#include "lmab/model.hpp"
#include "lmab/moments.hpp"
#include "lmab/pipeline.hpp"
#include "lmab/subspace.hpp"

using namespace lmab;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  // one warmup, then best of reps
  fn();
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto end = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(end - start).count());
  }
  return best;
}

void row(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s %10.1f ms %10.1f ms %8.2fx\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", thread_count());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  GeneratorOptions gen;
  gen.num_contexts = 4;
  gen.num_actions = 20;
  gen.num_values = 2;
  gen.horizon = 5;
  gen.rank = 4;
  Rng rng(7);
  const LmabInstance inst = generate_random_instance(gen, rng);

  const PolicyTree arm = PolicyTree::fixed_action(0, inst.horizon, inst.z());

  row("episode batch (2e5)",
      time_ms([&] { sample_episodes(inst, policy_from_tree(arm), 200000, 11, Exec::serial); }, 3),
      time_ms([&] { sample_episodes(inst, policy_from_tree(arm), 200000, 11, Exec::parallel); },
              3));

  row("second moment (2e5)",
      time_ms([&] { estimate_second_moment(inst, 200000, 11, Exec::serial); }, 3),
      time_ms([&] { estimate_second_moment(inst, 200000, 11, Exec::parallel); }, 3));

  row("mc policy value (2e5)",
      time_ms([&] { monte_carlo_policy_value(inst, arm, 200000, 11, Exec::serial); }, 3),
      time_ms([&] { monte_carlo_policy_value(inst, arm, 200000, 11, Exec::parallel); }, 3));

  // moment tensor over a small core set
  const SecondMomentEstimate m2 = exact_second_moment(inst);
  const SubspaceEstimate sub = top_m_eigenspace(m2, gen.num_contexts);
  const FeatureMatrix phi = subspace_features(sub, inst.num_actions, inst.z());
  const CoreSet core = select_core_coordinates(phi, solve_optimal_design(phi));
  row("order-2 tensor (n1=500)",
      time_ms([&] { estimate_moment_tensor(inst, core, 2, 500, 13, Exec::serial); }, 3),
      time_ms([&] { estimate_moment_tensor(inst, core, 2, 500, 13, Exec::parallel); }, 3));

  const MleDataset data = collect_mle_data(inst, core, 50000, 17, Exec::parallel);
  LatentParams init;
  init.weights.assign(4, 0.25);
  init.core_values = Eigen::MatrixXd::Constant(4, core.size(), 0.5);
  for (int m = 0; m < 4; ++m)
    for (int j = 0; j < core.size(); ++j)
      init.core_values(m, j) = 0.2 + 0.15 * ((m + j) % 5);
  row("EM 10 iters (N=5e4)",
      time_ms([&] { em_fit(data, init, 10, 0.0, Exec::serial); }, 2),
      time_ms([&] { em_fit(data, init, 10, 0.0, Exec::parallel); }, 2));

  return 0;
}
