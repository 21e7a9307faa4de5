#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lmab/io.hpp"
#include "lmab/model.hpp"
#include "lmab/pipeline.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitStageFailure = 3;

struct CliOverrides {
  std::string config_path;
  std::string instance;
  std::string pipeline;
  std::string out;
  int64_t n0 = -1, n1 = -1, n = -1;
  double epsilon = -1.0, eta = -1.0;
  std::string delta_sub, delta_tsr, w_min;
  int64_t seed = -1;
  int64_t eval_episodes = -1;
  bool noiseless = false;
  bool serial = false;
};

lmab::RunConfig build_config(const CliOverrides& o) {
  lmab::RunConfig config;
  if (!o.config_path.empty()) config = lmab::config_from_kv(lmab::load_kv_file(o.config_path));
  if (!o.instance.empty()) config.instance_path = o.instance;
  if (!o.pipeline.empty()) config.pipeline = lmab::pipeline_from_name(o.pipeline);
  if (!o.out.empty()) config.output_path = o.out;
  if (o.n0 >= 0) config.n0 = o.n0;
  if (o.n1 >= 0) config.n1 = o.n1;
  if (o.n >= 0) config.n = o.n;
  if (o.epsilon >= 0.0) config.epsilon = o.epsilon;
  if (o.eta >= 0.0) config.eta = o.eta;
  if (!o.delta_sub.empty() && o.delta_sub != "auto")
    config.delta_sub = lmab::parse_double(o.delta_sub);
  if (!o.delta_tsr.empty() && o.delta_tsr != "auto")
    config.delta_tsr = lmab::parse_double(o.delta_tsr);
  if (!o.w_min.empty() && o.w_min != "auto") config.w_min = lmab::parse_double(o.w_min);
  if (o.seed >= 0) config.seed = static_cast<uint64_t>(o.seed);
  if (o.eval_episodes >= 0) config.eval_episodes = o.eval_episodes;
  if (o.noiseless) config.noiseless = true;
  if (o.serial) config.exec = lmab::Exec::serial;
  return config;
}

void add_override_flags(CLI::App* app, CliOverrides& o) {
  app->add_option("--config", o.config_path, "key-value config file");
  app->add_option("--instance", o.instance, "instance file path");
  app->add_option("--pipeline", o.pipeline,
                  "algorithm1-moments | ed-mle | tensor-init-em | ucb | genie");
  app->add_option("--n0", o.n0, "subspace episodes");
  app->add_option("--n1", o.n1, "episodes per tensor cell");
  app->add_option("--n", o.n, "MLE / baseline episodes");
  app->add_option("--epsilon", o.epsilon, "target accuracy");
  app->add_option("--eta", o.eta, "failure probability");
  app->add_option("--delta-sub", o.delta_sub, "subspace accuracy or 'auto'");
  app->add_option("--delta-tsr", o.delta_tsr, "tensor accuracy or 'auto'");
  app->add_option("--w-min", o.w_min, "weight floor or 'auto'");
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--eval-episodes", o.eval_episodes, "evaluation episodes");
  app->add_flag("--noiseless", o.noiseless, "inject exact moments (oracle mode)");
  app->add_flag("--serial", o.serial, "run the serial reference kernels");
  app->add_option("--out", o.out, "output path");
}

int grid_from_string(const std::string& text, std::vector<int64_t>& grid) {
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const int64_t lo = std::stoll(text.substr(0, colon));
    const int64_t hi = std::stoll(text.substr(colon + 1));
    for (int64_t v = lo; v <= hi; ++v) grid.push_back(v);
    return 0;
  }
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) grid.push_back(std::stoll(tok));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent multi-armed bandit learning harness"};
  app.set_help_flag("--help", "print help");
  app.require_subcommand(1);

  CliOverrides run_opts;
  auto* run_cmd = app.add_subcommand("run", "run one pipeline and print the report");
  add_override_flags(run_cmd, run_opts);

  CliOverrides sweep_opts;
  std::string vary = "h";
  std::string grid_text = "2:9";
  std::string pipelines_text;
  int reps = 1;
  bool timing = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a grid of configurations to CSV");
  add_override_flags(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--vary", vary, "grid parameter: h | m | n");
  sweep_cmd->add_option("--grid", grid_text, "lo:hi or comma list");
  sweep_cmd->add_option("--pipelines", pipelines_text, "comma list (default: config pipeline)");
  sweep_cmd->add_option("--reps", reps, "repetitions per grid point");
  sweep_cmd->add_flag("--timing", timing, "record wall-clock times in the CSV");

  int gen_m = 2, gen_a = 2, gen_z = 2, gen_h = 2, gen_rank = 1;
  double gen_gamma = 0.0;
  int64_t gen_seed = 1;
  std::string gen_out = "instance.lmab";
  std::string gen_kind = "discrete";
  auto* gen_cmd = app.add_subcommand("gen-instance", "generate a random instance file");
  gen_cmd->set_help_flag("--help", "print help");
  gen_cmd->add_option("--m", gen_m, "contexts")->required();
  gen_cmd->add_option("--a", gen_a, "actions")->required();
  gen_cmd->add_option("--z", gen_z, "support size");
  gen_cmd->add_option("--h", gen_h, "horizon");
  gen_cmd->add_option("--rank", gen_rank, "second-moment rank");
  gen_cmd->add_option("--gamma", gen_gamma, "enforced separation level");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--kind", gen_kind, "discrete | gaussian");
  gen_cmd->add_option("--out", gen_out, "output path")->required();

  std::string eval_instance, eval_policy;
  int64_t eval_episodes = 10000;
  int64_t eval_seed = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy file on an instance");
  eval_cmd->add_option("--instance", eval_instance, "instance file")->required();
  eval_cmd->add_option("--policy", eval_policy, "policy tree file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "Monte Carlo episodes");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      lmab::RunConfig config;
      try {
        config = build_config(run_opts);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      lmab::LmabInstance inst;
      try {
        inst = lmab::resolve_instance(config);
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      lmab::RunReport report;
      try {
        report = lmab::run_any(inst, config);
      } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return kExitStageFailure;
      }
      const std::string text = report.summary(inst.horizon);
      if (!config.output_path.empty()) {
        std::ofstream out(config.output_path);
        out << text;
        lmab::save_policy(report.policy, config.output_path + ".tree");
      }
      std::cout << text;
      return 0;
    }

    if (sweep_cmd->parsed()) {
      lmab::SweepConfig sweep;
      try {
        sweep.base = build_config(sweep_opts);
        sweep.vary = vary;
        grid_from_string(grid_text, sweep.grid);
        sweep.repetitions = reps;
        sweep.timing = timing;
        if (pipelines_text.empty()) {
          sweep.pipelines = {sweep.base.pipeline};
        } else {
          std::istringstream in(pipelines_text);
          std::string tok;
          while (std::getline(in, tok, ','))
            sweep.pipelines.push_back(lmab::pipeline_from_name(tok));
        }
        if (vary != "h" && vary != "m" && vary != "n")
          throw std::invalid_argument("--vary must be h, m or n");
      } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      const std::string csv = lmab::run_sweep(sweep);
      if (!sweep.base.output_path.empty()) {
        std::ofstream out(sweep.base.output_path);
        out << csv;
      } else {
        std::cout << csv;
      }
      return 0;
    }

    if (gen_cmd->parsed()) {
      lmab::GeneratorOptions gen;
      gen.num_contexts = gen_m;
      gen.num_actions = gen_a;
      gen.num_values = gen_z;
      gen.horizon = gen_h;
      gen.rank = gen_rank;
      gen.reward_kind =
          gen_kind == "gaussian" ? lmab::RewardKind::gaussian : lmab::RewardKind::discrete;
      if (gen_gamma > 0.0) gen.separation = lmab::SeparationConfig{gen_gamma, true};
      lmab::Rng rng(static_cast<uint64_t>(gen_seed));
      const lmab::LmabInstance inst = lmab::generate_random_instance(gen, rng);
      lmab::save_instance(inst, gen_out);
      std::cout << "wrote " << gen_out << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const lmab::LmabInstance inst = lmab::load_instance(eval_instance);
      const lmab::PolicyTree policy = lmab::load_policy(eval_policy);
      const auto mc = lmab::monte_carlo_policy_value(inst, policy, eval_episodes,
                                                     static_cast<uint64_t>(eval_seed));
      std::cout << "mc_value " << lmab::format_double(mc.mean) << " +- "
                << lmab::format_double(mc.stderr_) << "\n";
      if (std::pow(static_cast<double>(inst.z()), inst.horizon) <= lmab::kEnumerationGuard &&
          inst.reward_kind == lmab::RewardKind::discrete) {
        std::cout << "exact_value " << lmab::format_double(lmab::exact_policy_value(inst, policy))
                  << "\n";
      }
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return 0;
}
