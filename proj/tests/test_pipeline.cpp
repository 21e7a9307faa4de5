#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lmab/pipeline.hpp"
#include "lmab/planning.hpp"

using namespace lmab;

namespace {

RunConfig tiny_config(Pipeline pipeline, uint64_t seed) {
  RunConfig cfg;
  GeneratorOptions gen;
  gen.num_contexts = 2;
  gen.num_actions = 4;
  gen.num_values = 2;
  gen.horizon = 3;
  gen.rank = 2;
  cfg.generator = gen;
  cfg.pipeline = pipeline;
  cfg.seed = seed;
  cfg.n0 = 5000;
  cfg.n1 = 50;
  cfg.n = 3000;
  cfg.w_min = 0.1;
  cfg.delta_tsr = 1e-2;
  cfg.eval_episodes = 2000;
  cfg.em_max_iter = 150;
  return cfg;
}

}  // namespace

TEST_CASE("single-context runs recover the optimal policy") {
  RunConfig cfg = tiny_config(Pipeline::ed_mle, 3);
  cfg.generator->num_contexts = 1;
  cfg.generator->rank = 1;
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_ed_mle(inst, cfg);
  CHECK(std::isfinite(rep.optimal_value));
  CHECK(rep.policy_value.mean >= rep.optimal_value - 2.0 * rep.policy_value.stderr_ - 1e-9);
}

TEST_CASE("episode accounting is exact for algorithm1") {
  RunConfig cfg = tiny_config(Pipeline::algorithm1_moments, 5);
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_algorithm1(inst, cfg);
  // N0 plus one batch of N1 per tensor cell, per order 1..min(H, 2M-1)
  int64_t cells = 0;
  for (int l = 1; l <= std::min(inst.horizon, 2 * inst.num_contexts - 1); ++l) {
    int64_t c = 1;
    for (int i = 0; i < l; ++i) c *= rep.core_size;
    cells += c;
  }
  CHECK(rep.episodes_used == cfg.n0 + cells * cfg.n1);
}

TEST_CASE("ed-mle accounting covers subspace plus MLE budgets") {
  RunConfig cfg = tiny_config(Pipeline::ed_mle, 7);
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_ed_mle(inst, cfg);
  CHECK(rep.episodes_used == cfg.n0 + cfg.n);
}

TEST_CASE("noiseless oracle injection recovers the model to high accuracy") {
  RunConfig cfg = tiny_config(Pipeline::algorithm1_moments, 1001);
  cfg.generator->num_actions = 10;
  cfg.noiseless = true;
  cfg.delta_tsr = 1e-6;
  cfg.w_min = 0.05;
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_algorithm1(inst, cfg);
  CHECK(rep.episodes_used == 0);
  CHECK(rep.wasserstein <= 1e-3);
  CHECK(std::abs(rep.policy_value_exact - rep.optimal_value) <= 1e-3);
}

TEST_CASE("reports are deterministic under a fixed seed") {
  RunConfig cfg = tiny_config(Pipeline::ed_mle, 11);
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport a = run_ed_mle(inst, cfg);
  const RunReport b = run_ed_mle(inst, cfg);
  CHECK(a.policy_value.mean == b.policy_value.mean);
  CHECK(a.wasserstein == b.wasserstein);
  CHECK(a.residual_max == b.residual_max);
  CHECK(policy_to_text(a.policy) == policy_to_text(b.policy));
}

TEST_CASE("empty MLE budgets flag a degenerate fit and still plan") {
  RunConfig cfg = tiny_config(Pipeline::ed_mle, 13);
  cfg.n = 0;
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_ed_mle(inst, cfg);
  CHECK(rep.degenerate_fit);
  CHECK(!rep.policy.empty());
  CHECK(std::isfinite(rep.policy_value.mean));
}

TEST_CASE("genie on a single context attains the optimum") {
  RunConfig cfg = tiny_config(Pipeline::genie, 17);
  cfg.generator->num_contexts = 1;
  cfg.generator->rank = 1;
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_baseline(inst, cfg);
  CHECK(rep.policy_value_exact == doctest::Approx(rep.optimal_value).epsilon(1e-9));
}

TEST_CASE("ucb trails the genie when contexts disagree") {
  LmabInstance inst;
  inst.num_contexts = 2;
  inst.num_actions = 2;
  inst.horizon = 6;
  inst.support = RewardSupport::bernoulli();
  inst.weights = {0.5, 0.5};
  inst.reward_probs = {0.05, 0.95, 0.9, 0.1, 0.9, 0.1, 0.05, 0.95};
  RunConfig cfg = tiny_config(Pipeline::ucb, 19);
  cfg.n = 3000;
  const RunReport rep = run_baseline(inst, cfg);
  CHECK(rep.policy_value_exact < rep.genie_value - 0.1);
}

TEST_CASE("tensor-init baseline reports the EM-refined counterpart") {
  RunConfig cfg = tiny_config(Pipeline::tensor_init_em, 23);
  const LmabInstance inst = resolve_instance(cfg);
  const RunReport rep = run_baseline(inst, cfg);
  CHECK(std::isfinite(rep.em_refined_value));
}

TEST_CASE("no pipeline beats the exact optimum") {
  for (const Pipeline p : {Pipeline::ed_mle, Pipeline::algorithm1_moments, Pipeline::ucb,
                           Pipeline::genie, Pipeline::tensor_init_em}) {
    RunConfig cfg = tiny_config(p, 29);
    const LmabInstance inst = resolve_instance(cfg);
    const RunReport rep = run_any(inst, cfg);
    REQUIRE(std::isfinite(rep.optimal_value));
    CHECK(rep.policy_value.mean <= rep.optimal_value + 2.0 * rep.policy_value.stderr_ + 1e-9);
    CHECK(rep.policy_value_exact <= rep.optimal_value + 1e-9);
  }
}

TEST_CASE("auto schedules follow the two regimes") {
  // identifiable: H >= 2M-1
  const double ds_long = auto_delta_sub(2, 4, 2, 5, 0.1, 0.5);
  CHECK(ds_long == doctest::Approx(0.1 / (2.0 * 2 * 2 * 25)).epsilon(1e-12));
  const double dt_long = auto_delta_tsr(2, 2, 5, 0.1, 4);
  CHECK(dt_long ==
        doctest::Approx(std::pow(0.1 / (2 * 25 * std::pow(2.0, 3.5) * 4), 3.0)).epsilon(1e-9));
  // short horizon: H < 2M-1
  const double dt_short = auto_delta_tsr(3, 2, 3, 0.1, 4);
  CHECK(dt_short ==
        doctest::Approx((0.1 / 3) / std::pow(2.0 * std::sqrt(6.0), 3.0)).epsilon(1e-9));
  const double ds_short = auto_delta_sub(3, 4, 2, 3, 0.1, 0.2);
  CHECK(ds_short > 0.0);
  CHECK(ds_short < 1.0);
}

TEST_CASE("sweeps with a single cell match the direct run") {
  SweepConfig sweep;
  sweep.base = tiny_config(Pipeline::ed_mle, 31);
  sweep.pipelines = {Pipeline::ed_mle};
  sweep.vary = "n";
  sweep.grid = {3000};
  sweep.repetitions = 1;
  const std::string csv = run_sweep(sweep);

  // direct run with the derived seed the sweep uses
  RunConfig direct = sweep.base;
  direct.seed = derive_seed(sweep.base.seed, 0, 0, 0);
  direct.n = 3000;
  Rng gen_rng(derive_seed(sweep.base.seed, 0x6e11, 0));
  const LmabInstance inst = generate_random_instance(*direct.generator, gen_rng);
  const RunReport rep = run_ed_mle(inst, direct);

  const auto line_start = csv.find('\n') + 1;
  const std::string row = csv.substr(line_start, csv.find('\n', line_start) - line_start);
  const std::string expected = "ed-mle,n,3000," + std::to_string(direct.seed) + "," +
                               format_double(rep.policy_value.mean / inst.horizon);
  CHECK(row.substr(0, expected.size()) == expected);
}

TEST_CASE("sweep CSV is byte-identical across reruns") {
  SweepConfig sweep;
  sweep.base = tiny_config(Pipeline::ucb, 37);
  sweep.pipelines = {Pipeline::ucb, Pipeline::genie};
  sweep.vary = "h";
  sweep.grid = {2, 3};
  sweep.repetitions = 2;
  const std::string a = run_sweep(sweep);
  const std::string b = run_sweep(sweep);
  CHECK(a == b);
  // header plus grid x pipelines x reps rows
  int lines = 0;
  for (char c : a)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + 2 * 2 * 2);
  // wallclock column is zero unless timing is requested
  CHECK(a.find(",failed") == std::string::npos);
  for (size_t pos = a.find('\n'); pos != std::string::npos && pos + 1 < a.size();
       pos = a.find('\n', pos + 1)) {
    const size_t next = a.find('\n', pos + 1);
    if (next == std::string::npos) break;
    const std::string row = a.substr(pos + 1, next - pos - 1);
    CHECK(row.substr(row.rfind(',')) == ",0");
  }
}

TEST_CASE("failed grid points are marked and the sweep continues") {
  SweepConfig sweep;
  sweep.base = tiny_config(Pipeline::algorithm1_moments, 41);
  sweep.base.generator->horizon = 1;  // second-moment stage needs H >= 2
  sweep.pipelines = {Pipeline::algorithm1_moments, Pipeline::genie};
  sweep.vary = "n";
  sweep.grid = {100};
  sweep.repetitions = 1;
  const std::string csv = run_sweep(sweep);
  CHECK(csv.find("algorithm1-moments,n,100") != std::string::npos);
  CHECK(csv.find("failed") != std::string::npos);
  CHECK(csv.find("genie,n,100") != std::string::npos);
}

TEST_CASE("config documents parse with overridable fields") {
  const std::string text =
      "pipeline ed-mle\n"
      "gen_m 3\n"
      "gen_a 5\n"
      "gen_z 2\n"
      "gen_h 4\n"
      "gen_rank 2\n"
      "n0 1234\n"
      "n 777\n"
      "epsilon 0.25\n"
      "delta_tsr auto\n"
      "w_min 0.125\n"
      "seed 99\n";
  const RunConfig cfg = config_from_kv(parse_kv_text(text));
  CHECK(cfg.pipeline == Pipeline::ed_mle);
  REQUIRE(cfg.generator.has_value());
  CHECK(cfg.generator->num_contexts == 3);
  CHECK(cfg.generator->horizon == 4);
  CHECK(cfg.n0 == 1234);
  CHECK(cfg.n == 777);
  CHECK(cfg.epsilon == 0.25);
  CHECK_FALSE(cfg.delta_tsr.has_value());
  REQUIRE(cfg.w_min.has_value());
  CHECK(*cfg.w_min == 0.125);
  CHECK(cfg.seed == 99);
  CHECK_THROWS(config_from_kv(parse_kv_text("pipeline bogus\n")));
}

TEST_CASE("missing instance sources are rejected") {
  RunConfig cfg;
  CHECK_THROWS(resolve_instance(cfg));
}
