#include "lmab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lmab/mle.hpp"
#include "lmab/planning.hpp"
#include "lmab/recover.hpp"
#include "lmab/subspace.hpp"

namespace lmab {

namespace {

constexpr uint64_t kEvalStream = 0xe7a1;
constexpr uint64_t kGenStream = 0x6e11;

struct StageTimer {
  std::vector<StageClock>* sink;
  std::string stage;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ~StageTimer() {
    const auto end = std::chrono::steady_clock::now();
    sink->push_back(
        {stage, std::chrono::duration<double, std::milli>(end - start).count()});
  }
};

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& message)
      : std::runtime_error("stage " + stage + ": " + message) {}
};

}  // namespace

std::string pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::algorithm1_moments: return "algorithm1-moments";
    case Pipeline::ed_mle: return "ed-mle";
    case Pipeline::tensor_init_em: return "tensor-init-em";
    case Pipeline::ucb: return "ucb";
    case Pipeline::genie: return "genie";
  }
  return "?";
}

Pipeline pipeline_from_name(const std::string& name) {
  if (name == "algorithm1-moments") return Pipeline::algorithm1_moments;
  if (name == "ed-mle") return Pipeline::ed_mle;
  if (name == "tensor-init-em") return Pipeline::tensor_init_em;
  if (name == "ucb") return Pipeline::ucb;
  if (name == "genie") return Pipeline::genie;
  throw std::invalid_argument("unknown pipeline: " + name);
}

double auto_delta_sub(int m, int a, int z, int h, double epsilon, double w_min) {
  (void)a;
  if (h >= 2 * m - 1) return epsilon / (2.0 * z * m * h * h);
  const double pow_term = std::pow(z * std::sqrt(2.0 * m), h);
  const double lhs = std::sqrt(w_min + epsilon / (m * h * h * pow_term));
  const double rhs = epsilon / (h * std::sqrt(static_cast<double>(m)));
  return std::min(lhs, rhs) / (2.0 * z * std::sqrt(static_cast<double>(m)) * h);
}

double auto_delta_tsr(int m, int z, int h, double epsilon, int core_size) {
  if (h >= 2 * m - 1)
    return std::pow(epsilon / (z * h * h * std::pow(m, 3.5) * core_size),
                    2.0 * m - 1.0);
  return (epsilon / h) / std::pow(z * std::sqrt(2.0 * m), h);
}

LmabInstance resolve_instance(const RunConfig& config) {
  if (!config.instance_path.empty()) return load_instance(config.instance_path);
  if (!config.generator) throw std::invalid_argument("no instance source configured");
  Rng rng(derive_seed(config.seed, kGenStream));
  return generate_random_instance(*config.generator, rng);
}

namespace {

// shared Step 1: second moment -> top-M eigenspace -> design -> core set
struct Step1Output {
  SubspaceEstimate subspace;
  CoreSet core;
  int64_t episodes = 0;
};

Step1Output run_step1(const LmabInstance& inst, const RunConfig& config, int contexts,
                      RunReport& report) {
  Step1Output out;
  {
    StageTimer timer{&report.stage_millis, "subspace"};
    SecondMomentEstimate m2;
    if (config.noiseless) {
      m2 = exact_second_moment(inst);
    } else {
      m2 = estimate_second_moment(inst, config.n0, derive_seed(config.seed, 0x50), config.exec);
      out.episodes += config.n0;
    }
    out.subspace = top_m_eigenspace(m2, contexts);
  }
  {
    StageTimer timer{&report.stage_millis, "design"};
    const FeatureMatrix phi = subspace_features(
        out.subspace, inst.num_actions,
        inst.reward_kind == RewardKind::discrete ? inst.z() : 0);
    const DesignWeights design = solve_optimal_design(phi);
    out.core = select_core_coordinates(phi, design);
    report.core_size = out.core.size();
    report.design_g = design.g_value;
  }
  return out;
}

void evaluate_policy(const LmabInstance& truth, const RunConfig& config, RunReport& report) {
  StageTimer timer{&report.stage_millis, "evaluate"};
  report.policy_value = monte_carlo_policy_value(
      truth, report.policy, config.eval_episodes, derive_seed(config.seed, kEvalStream),
      config.exec);
  if (std::pow(static_cast<double>(truth.z()), truth.horizon) <= kEnumerationGuard) {
    report.policy_value_exact = exact_policy_value(truth, report.policy);
    try {
      report.optimal_value = plan_exact(truth, truth.horizon).value;
    } catch (const std::exception&) {
    }
    report.genie_value = exact_policy_value(truth, qmdp_policy_tree(truth, truth.horizon));
  }
}

void attach_wasserstein(const LmabInstance& truth, const CoreSet& core,
                        const LatentParams& fitted, RunReport& report) {
  const LatentParams gt = core_restriction(truth, core);
  if (gt.dim() == fitted.dim()) report.wasserstein = wasserstein_distance(gt, fitted);
}

std::vector<double> w_min_schedule(const RunConfig& config, int contexts) {
  if (config.w_min) return {*config.w_min};
  std::vector<double> out;
  double v = 1.0 / contexts;
  for (int level = 0; level < 4; ++level) {
    out.push_back(v);
    v *= 0.5;
  }
  return out;
}

}  // namespace

RunReport run_algorithm1(const LmabInstance& inst, const RunConfig& config) {
  RunReport report;
  report.pipeline = Pipeline::algorithm1_moments;
  report.seed = config.seed;
  const int contexts = config.contexts_hint > 0 ? config.contexts_hint : inst.num_contexts;
  const Step1Output step1 = run_step1(inst, config, contexts, report);
  report.episodes_used += step1.episodes;

  const int max_order = std::min(inst.horizon, 2 * contexts - 1);
  std::vector<MomentTensor> tensors;
  {
    StageTimer timer{&report.stage_millis, "tensors"};
    for (int l = 1; l <= max_order; ++l) {
      if (config.noiseless) {
        tensors.push_back(exact_moment_tensor(inst, step1.core, l));
      } else {
        tensors.push_back(estimate_moment_tensor(inst, step1.core, l, config.n1,
                                                 derive_seed(config.seed, 0x71, l),
                                                 config.exec));
        report.episodes_used += tensors.back().episodes_used;
      }
    }
  }

  const double delta_sub =
      config.delta_sub ? *config.delta_sub
                       : auto_delta_sub(contexts, inst.num_actions, inst.z(), inst.horizon,
                                        config.epsilon, config.w_min ? *config.w_min : 1.0 / contexts);
  const double delta_tsr =
      config.delta_tsr ? *config.delta_tsr
                       : auto_delta_tsr(contexts, inst.z(), inst.horizon, config.epsilon,
                                        step1.core.size());

  // fit per w_min candidate; the best policy under Monte Carlo evaluation on
  // fresh episodes is kept
  FitResult best_fit;
  PolicyTree best_policy;
  double best_value = -std::numeric_limits<double>::infinity();
  bool have = false;
  const auto candidates = w_min_schedule(config, contexts);
  {
    StageTimer timer{&report.stage_millis, "fit+recover+plan"};
    for (size_t ci = 0; ci < candidates.size(); ++ci) {
      MatchConfig mc;
      mc.delta_tsr = delta_tsr;
      mc.max_order = max_order;
      mc.delta_sub = delta_sub;
      mc.w_min = candidates[ci];
      mc.transform = step1.core.transform;
      mc.num_values = inst.z();
      Rng rng(derive_seed(config.seed, 0xf17, ci));
      LatentParams start;
      start.weights.assign(static_cast<size_t>(contexts), 1.0 / contexts);
      start.core_values.resize(contexts, step1.core.size());
      for (int m = 0; m < contexts; ++m)
        for (int j = 0; j < step1.core.size(); ++j)
          start.core_values(m, j) = tensors.front().entries[static_cast<size_t>(j)];
      FitResult fit = fit_moments(tensors, mc, start, rng, config.exec);
      const RecoveredModel rec = recover_reward_model(fit.params, step1.core, inst.support,
                                                      inst.horizon);
      PolicyTree policy;
      try {
        policy = plan_exact(rec.instance, inst.horizon).policy;
      } catch (const std::exception&) {
        policy = qmdp_policy_tree(rec.instance, inst.horizon);
      }
      double value;
      if (candidates.size() == 1) {
        value = 0.0;  // no selection needed
      } else {
        value = monte_carlo_policy_value(inst, policy, config.eval_episodes,
                                         derive_seed(config.seed, kEvalStream, 17, ci),
                                         config.exec)
                    .mean;
      }
      if (!have || value > best_value + 1e-12 ||
          (std::abs(value - best_value) <= 1e-12 && fit.max_residual < best_fit.max_residual)) {
        have = true;
        best_value = value;
        best_fit = std::move(fit);
        best_policy = std::move(policy);
      }
    }
  }

  report.residuals = best_fit.residuals;
  report.residual_max = best_fit.max_residual;
  report.degenerate_fit = !best_fit.success;
  report.policy = best_policy;
  attach_wasserstein(inst, step1.core, best_fit.params, report);
  evaluate_policy(inst, config, report);
  return report;
}

namespace {

PolicyTree plan_with_fallback(const LmabInstance& model, int horizon) {
  try {
    return plan_exact(model, horizon).policy;
  } catch (const std::exception&) {
    return qmdp_policy_tree(model, horizon);
  }
}

RunReport run_mle_based(const LmabInstance& inst, const RunConfig& config, bool refine_with_em) {
  RunReport report;
  report.pipeline = refine_with_em ? Pipeline::ed_mle : Pipeline::tensor_init_em;
  report.seed = config.seed;
  const int contexts = config.contexts_hint > 0 ? config.contexts_hint : inst.num_contexts;
  const Step1Output step1 = run_step1(inst, config, contexts, report);
  report.episodes_used += step1.episodes;

  LatentParams params;
  if (config.n < 1) {
    // empty-data contract: flag the degenerate fit and plan from the
    // uninformative parameters
    report.degenerate_fit = true;
    params.weights.assign(static_cast<size_t>(contexts), 1.0 / contexts);
    params.core_values = Eigen::MatrixXd::Constant(contexts, step1.core.size(), 0.5);
  } else {
    MleDataset data;
    {
      StageTimer timer{&report.stage_millis, "collect"};
      data = collect_mle_data(inst, step1.core, config.n, derive_seed(config.seed, 0x3e),
                              config.exec);
      report.episodes_used += config.n;
    }
    CoreTensorEstimates tensors;
    {
      StageTimer timer{&report.stage_millis, "core-tensors"};
      tensors = estimate_core_tensors(data, config.exec);
    }
    LatentParams init;
    {
      StageTimer timer{&report.stage_millis, "spectral-init"};
      SpectralInput si;
      si.t1 = &tensors.t1;
      si.t2 = &tensors.t2;
      si.t3 = tensors.t3.dim > 0 ? &tensors.t3 : nullptr;
      si.data = &data;
      Rng rng(derive_seed(config.seed, 0x59));
      init = init_spectral(si, contexts, rng);
    }
    if (refine_with_em) {
      StageTimer timer{&report.stage_millis, "em"};
      params = em_fit(data, init, config.em_max_iter, config.em_tol, config.exec).params;
    } else {
      params = init;
      // the EM-refined counterpart is reported alongside the pure init
      StageTimer timer{&report.stage_millis, "em-comparison"};
      const LatentParams refined =
          em_fit(data, init, config.em_max_iter, config.em_tol, config.exec).params;
      const RecoveredModel rec =
          recover_reward_model(refined, step1.core, inst.support, inst.horizon);
      const PolicyTree refined_policy = plan_with_fallback(rec.instance, inst.horizon);
      report.em_refined_value =
          monte_carlo_policy_value(inst, refined_policy, config.eval_episodes,
                                   derive_seed(config.seed, kEvalStream, 3), config.exec)
              .mean;
    }
    std::vector<MomentTensor> residual_tensors{tensors.t1, tensors.t2};
    if (tensors.t3.dim > 0) residual_tensors.push_back(tensors.t3);
    report.residuals = moment_residual(params, residual_tensors);
    report.residual_max = *std::max_element(report.residuals.begin(), report.residuals.end());
  }

  {
    StageTimer timer{&report.stage_millis, "recover+plan"};
    const RecoveredModel rec =
        recover_reward_model(params, step1.core, inst.support, inst.horizon);
    report.policy = plan_with_fallback(rec.instance, inst.horizon);
  }
  attach_wasserstein(inst, step1.core, params, report);
  evaluate_policy(inst, config, report);
  return report;
}

}  // namespace

RunReport run_ed_mle(const LmabInstance& inst, const RunConfig& config) {
  return run_mle_based(inst, config, /*refine_with_em=*/true);
}

RunReport run_baseline(const LmabInstance& inst, const RunConfig& config) {
  RunReport report;
  report.pipeline = config.pipeline;
  report.seed = config.seed;
  switch (config.pipeline) {
    case Pipeline::ucb: {
      StageTimer timer{&report.stage_millis, "ucb"};
      BanditEnv env(inst, derive_seed(config.seed, 0xcb));
      const UcbResult ucb = ucb_baseline(env, inst.horizon, std::max<int64_t>(config.n, 1));
      report.episodes_used = ucb.episodes_used;
      report.policy = ucb.policy;
      break;
    }
    case Pipeline::genie: {
      StageTimer timer{&report.stage_millis, "genie"};
      report.policy = qmdp_policy_tree(inst, inst.horizon);
      break;
    }
    case Pipeline::tensor_init_em:
      // pure tensor initialization is the reported policy; the EM-refined
      // value rides along in em_refined_value
      return run_mle_based(inst, config, /*refine_with_em=*/false);
    default:
      throw std::invalid_argument("run_baseline expects ucb, genie or tensor-init-em");
  }
  evaluate_policy(inst, config, report);
  return report;
}

RunReport run_any(const LmabInstance& inst, const RunConfig& config) {
  switch (config.pipeline) {
    case Pipeline::algorithm1_moments: return run_algorithm1(inst, config);
    case Pipeline::ed_mle: return run_ed_mle(inst, config);
    default: return run_baseline(inst, config);
  }
}

std::string RunReport::summary(int horizon) const {
  std::ostringstream os;
  os << "pipeline " << pipeline_name(pipeline) << "\n";
  os << "episodes " << episodes_used << "\n";
  os << "per_step_reward " << format_double(policy_value.mean / horizon) << " +- "
     << format_double(policy_value.stderr_ / horizon) << "\n";
  if (std::isfinite(policy_value_exact))
    os << "exact_value " << format_double(policy_value_exact) << "\n";
  if (std::isfinite(optimal_value)) os << "optimal_value " << format_double(optimal_value) << "\n";
  if (std::isfinite(genie_value)) os << "genie_value " << format_double(genie_value) << "\n";
  if (std::isfinite(wasserstein)) os << "wasserstein " << format_double(wasserstein) << "\n";
  if (std::isfinite(em_refined_value))
    os << "em_refined_value " << format_double(em_refined_value) << "\n";
  if (std::isfinite(residual_max)) os << "residual_max " << format_double(residual_max) << "\n";
  if (degenerate_fit) os << "degenerate_fit 1\n";
  for (const auto& clock : stage_millis)
    os << "stage_ms " << clock.stage << " " << static_cast<int64_t>(clock.millis) << "\n";
  return os.str();
}

std::string run_sweep(const SweepConfig& sweep) {
  if (sweep.grid.empty()) throw std::invalid_argument("sweep grid is empty");
  if (sweep.pipelines.empty()) throw std::invalid_argument("sweep pipelines are empty");
  std::ostringstream csv;
  csv << "pipeline,grid_param,grid_value,seed,per_step_reward,stderr,wasserstein,residual_max,"
         "wallclock_ms\n";
  for (size_t gi = 0; gi < sweep.grid.size(); ++gi) {
    for (size_t pi = 0; pi < sweep.pipelines.size(); ++pi) {
      for (int rep = 0; rep < sweep.repetitions; ++rep) {
        RunConfig config = sweep.base;
        config.pipeline = sweep.pipelines[pi];
        const int64_t gv = sweep.grid[gi];
        // instance seeds vary per repetition; the tables additionally vary
        // with the grid point only when the grid changes the model itself
        uint64_t inst_tag = static_cast<uint64_t>(rep);
        if (sweep.vary == "m") inst_tag = derive_seed(inst_tag, static_cast<uint64_t>(gv));
        config.seed = derive_seed(sweep.base.seed, gi, pi, static_cast<uint64_t>(rep));

        LmabInstance inst;
        if (sweep.vary == "m") {
          if (!config.generator) throw std::invalid_argument("vary=m needs a generator");
          GeneratorOptions gen = *config.generator;
          gen.num_contexts = static_cast<int>(gv);
          gen.rank = std::min(gen.rank, gen.num_contexts);
          Rng rng(derive_seed(sweep.base.seed, kGenStream, inst_tag));
          inst = generate_random_instance(gen, rng);
        } else {
          if (config.generator) {
            GeneratorOptions gen = *config.generator;
            if (sweep.vary == "h") gen.horizon = static_cast<int>(gv);
            Rng rng(derive_seed(sweep.base.seed, kGenStream, inst_tag));
            inst = generate_random_instance(gen, rng);
          } else {
            inst = load_instance(config.instance_path);
            if (sweep.vary == "h") inst.horizon = static_cast<int>(gv);
          }
          if (sweep.vary == "n") config.n = gv;
        }

        const auto start = std::chrono::steady_clock::now();
        std::string row_error;
        RunReport report;
        try {
          report = run_any(inst, config);
        } catch (const std::exception& e) {
          row_error = e.what();
        }
        const auto end = std::chrono::steady_clock::now();
        const int64_t wall =
            sweep.timing
                ? static_cast<int64_t>(
                      std::chrono::duration<double, std::milli>(end - start).count())
                : 0;
        csv << pipeline_name(sweep.pipelines[pi]) << ',' << sweep.vary << ',' << gv << ','
            << config.seed << ',';
        if (row_error.empty()) {
          csv << format_double(report.policy_value.mean / inst.horizon) << ','
              << format_double(report.policy_value.stderr_ / inst.horizon) << ','
              << format_double(report.wasserstein) << ',' << format_double(report.residual_max);
        } else {
          csv << "failed,failed,failed,failed";
        }
        csv << ',' << wall << '\n';
      }
    }
  }
  return csv.str();
}

RunConfig config_from_kv(const KvDocument& doc) {
  RunConfig config;
  if (doc.has("instance")) config.instance_path = doc.get_one("instance");
  if (doc.has("gen_m")) {
    GeneratorOptions gen;
    gen.num_contexts = std::stoi(doc.get_one("gen_m"));
    gen.num_actions = std::stoi(doc.get_or("gen_a", "2"));
    gen.num_values = std::stoi(doc.get_or("gen_z", "2"));
    gen.horizon = std::stoi(doc.get_or("gen_h", "2"));
    gen.rank = std::stoi(doc.get_or("gen_rank", "1"));
    gen.mix_alpha = parse_double(doc.get_or("gen_mix_alpha", "1"));
    if (doc.has("gen_gamma")) {
      SeparationConfig sep;
      sep.gamma = parse_double(doc.get_one("gen_gamma"));
      sep.enforced = true;
      gen.separation = sep;
    }
    config.generator = gen;
  }
  if (doc.has("pipeline")) config.pipeline = pipeline_from_name(doc.get_one("pipeline"));
  if (doc.has("n0")) config.n0 = std::stoll(doc.get_one("n0"));
  if (doc.has("n1")) config.n1 = std::stoll(doc.get_one("n1"));
  if (doc.has("n")) config.n = std::stoll(doc.get_one("n"));
  if (doc.has("epsilon")) config.epsilon = parse_double(doc.get_one("epsilon"));
  if (doc.has("eta")) config.eta = parse_double(doc.get_one("eta"));
  if (doc.has("delta_sub") && doc.get_one("delta_sub") != "auto")
    config.delta_sub = parse_double(doc.get_one("delta_sub"));
  if (doc.has("delta_tsr") && doc.get_one("delta_tsr") != "auto")
    config.delta_tsr = parse_double(doc.get_one("delta_tsr"));
  if (doc.has("w_min") && doc.get_one("w_min") != "auto")
    config.w_min = parse_double(doc.get_one("w_min"));
  if (doc.has("contexts")) config.contexts_hint = std::stoi(doc.get_one("contexts"));
  if (doc.has("seed")) config.seed = std::stoull(doc.get_one("seed"));
  if (doc.has("eval_episodes")) config.eval_episodes = std::stoll(doc.get_one("eval_episodes"));
  if (doc.has("noiseless")) config.noiseless = doc.get_one("noiseless") == "1";
  if (doc.has("em_max_iter")) config.em_max_iter = std::stoi(doc.get_one("em_max_iter"));
  if (doc.has("em_tol")) config.em_tol = parse_double(doc.get_one("em_tol"));
  if (doc.has("out")) config.output_path = doc.get_one("out");
  if (doc.has("serial") && doc.get_one("serial") == "1") config.exec = Exec::serial;
  return config;
}

}  // namespace lmab
