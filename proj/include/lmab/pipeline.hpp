#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lmab/io.hpp"
#include "lmab/model.hpp"
#include "lmab/moments.hpp"

namespace lmab {

enum class Pipeline { algorithm1_moments, ed_mle, tensor_init_em, ucb, genie };

std::string pipeline_name(Pipeline p);
Pipeline pipeline_from_name(const std::string& name);

struct RunConfig {
  // instance source: a file path or generator parameters
  std::string instance_path;
  std::optional<GeneratorOptions> generator;

  Pipeline pipeline = Pipeline::ed_mle;
  int64_t n0 = 20000;   // subspace episodes
  int64_t n1 = 200;     // episodes per tensor cell
  int64_t n = 10000;    // MLE episodes
  double epsilon = 0.1;
  double eta = 0.01;
  std::optional<double> delta_sub;  // unset -> schedule formula
  std::optional<double> delta_tsr;
  std::optional<double> w_min;      // unset -> geometric schedule
  int contexts_hint = 0;            // M for the learner (defaults to truth)
  uint64_t seed = 1;
  int64_t eval_episodes = 10000;
  bool noiseless = false;           // inject exact M2 and exact tensors
  int em_max_iter = 500;
  double em_tol = 1e-8;
  std::string output_path;
  Exec exec = Exec::parallel;
};

struct StageClock {
  std::string stage;
  double millis = 0.0;
};

struct RunReport {
  Pipeline pipeline = Pipeline::ed_mle;
  uint64_t seed = 0;
  int64_t episodes_used = 0;

  McEstimate policy_value;          // Monte Carlo on the true instance
  double policy_value_exact = std::numeric_limits<double>::quiet_NaN();
  double optimal_value = std::numeric_limits<double>::quiet_NaN();
  double genie_value = std::numeric_limits<double>::quiet_NaN();
  double wasserstein = std::numeric_limits<double>::quiet_NaN();
  // tensor-init-em only: value of the EM-refined counterpart policy
  double em_refined_value = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> residuals;    // per moment order
  double residual_max = std::numeric_limits<double>::quiet_NaN();
  std::vector<StageClock> stage_millis;
  bool degenerate_fit = false;
  int core_size = 0;
  double design_g = std::numeric_limits<double>::quiet_NaN();
  PolicyTree policy;

  double per_step_reward(int horizon) const { return policy_value.mean / horizon; }
  std::string summary(int horizon) const;
};

// schedule formulas with constant 1 (identifiable vs short-horizon regime)
double auto_delta_sub(int m, int a, int z, int h, double epsilon, double w_min);
double auto_delta_tsr(int m, int z, int h, double epsilon, int core_size);

LmabInstance resolve_instance(const RunConfig& config);

RunReport run_algorithm1(const LmabInstance& inst, const RunConfig& config);
RunReport run_ed_mle(const LmabInstance& inst, const RunConfig& config);
RunReport run_baseline(const LmabInstance& inst, const RunConfig& config);
RunReport run_any(const LmabInstance& inst, const RunConfig& config);

struct SweepConfig {
  RunConfig base;
  std::vector<Pipeline> pipelines;
  std::string vary;          // "h", "m", or "n"
  std::vector<int64_t> grid;
  int repetitions = 1;
  bool timing = false;       // wallclock_ms column is 0 unless enabled
};

// one CSV row per (pipeline, grid value, repetition), deterministic order
std::string run_sweep(const SweepConfig& sweep);

RunConfig config_from_kv(const KvDocument& doc);

}  // namespace lmab
