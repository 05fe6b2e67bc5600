// Command-line driver: training runs, the maximization-bias sweep, the
// property-verification suites, and estimation-error comparison.
//
// Exit codes: 0 success, 1 property violation, 2 usage or I/O error.

#include "qsim/analysis.hpp"
#include "qsim/config.hpp"
#include "qsim/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;

std::vector<int> parse_range(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const int lo = std::stoi(text.substr(0, dots));
    const int hi = std::stoi(text.substr(dots + 2));
    if (lo > hi) throw CLI::ValidationError(flag, "range start exceeds end");
    for (int v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::istringstream is(text);
  std::string field;
  while (std::getline(is, field, ',')) out.push_back(std::stoi(field));
  if (out.empty()) throw CLI::ValidationError(flag, "no values given");
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

int cmd_train(const std::string& config_path, const std::string& output_dir_override,
              const std::string& seeds_override) {
  qsim::ExperimentConfig config = qsim::parse_config_file(config_path);
  if (!output_dir_override.empty()) config.output_dir = output_dir_override;
  if (!seeds_override.empty()) {
    config.seeds.clear();
    for (int s : parse_range(seeds_override, "--seeds")) config.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  std::cerr << "training " << config.variant_name() << " on "
            << (config.env == qsim::EnvKind::Climbing ? "climbing" : "gridworld") << ", "
            << config.seeds.size() << " seed(s), step_max " << config.step_max << "\n";
  const auto results = qsim::run_experiment(config);
  for (const auto& r : results)
    std::cerr << "  " << r.run_dir << ": final eval return " << r.final_eval_return << "\n";
  return kExitOk;
}

int cmd_analyze_bias(const std::string& agents, const std::string& actions, double sigma,
                     std::int64_t trials, std::uint64_t seed, std::int64_t cap,
                     const std::string& out_path) {
  qsim::BiasSweepConfig sweep;
  sweep.agent_counts = parse_range(agents, "--agents");
  sweep.action_sizes = parse_range(actions, "--actions");
  for (int n : sweep.agent_counts)
    if (n <= 0) throw CLI::ValidationError("--agents", "agent counts must be positive");
  for (int a : sweep.action_sizes)
    if (a <= 0) throw CLI::ValidationError("--actions", "action sizes must be positive");
  sweep.sigma = sigma;
  sweep.trials = trials;
  sweep.seed = seed;
  sweep.joint_cap = cap;

  const auto rows = qsim::bias_sweep(sweep);
  write_file(out_path, qsim::bias_rows_csv(rows));
  std::cerr << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return kExitOk;
}

int cmd_verify(std::int64_t samples, std::uint64_t seed, std::int64_t grad_checks,
               std::int64_t mono_checks, const std::string& out_path, bool inject_fault) {
  const qsim::TargetBoundReport bound = qsim::verify_target_bound(
      samples, seed, inject_fault ? qsim::FaultInjection::InflateWeights : qsim::FaultInjection::None);
  const qsim::SuiteReport grad = qsim::gradient_check_suite(grad_checks, seed);
  const qsim::SuiteReport mono = qsim::monotonicity_check_suite(mono_checks, seed);

  std::ostringstream os;
  os << "{\n  \"target_bound\": " << bound.to_json() << ",\n";
  os << "  \"gradient_checks\": {\"instances\": " << grad.instances << ", \"violations\": "
     << grad.violations << ", \"worst_rel_error\": " << grad.worst << "},\n";
  os << "  \"mixer_monotonicity\": {\"instances\": " << mono.instances << ", \"violations\": "
     << mono.violations << ", \"worst_margin\": " << mono.worst << "}\n}\n";
  write_file(out_path, os.str());

  const std::int64_t total = bound.violations + grad.violations + mono.violations;
  std::cerr << "verify: " << bound.violations << " bound violations, " << grad.violations
            << " gradient failures, " << mono.violations << " monotonicity failures -> " << out_path << "\n";
  if (total > 0) {
    if (!bound.worst_instance.empty())
      std::cerr << "worst bound instance: " << bound.worst_instance << "\n";
    return kExitViolation;
  }
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& baseline, const std::vector<std::string>& qsim_dirs,
                const std::string& out_path) {
  const qsim::DeltaQSummary summary = qsim::compare_delta_q(baseline, qsim_dirs);
  write_file(out_path, summary.to_json() + "\n");
  std::cerr << "final-quarter median delta_q: baseline " << summary.final_quarter_baseline << ", qsim "
            << summary.final_quarter_qsim << (summary.qsim_lower ? " (qsim lower)" : " (qsim NOT lower)")
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsim-lab: similarity-weighted value-decomposition Q-learning at desk scale"};
  app.require_subcommand(1);

  // train
  std::string config_path, output_dir_override, seeds_override;
  CLI::App* train = app.add_subcommand("train", "run an experiment config across its seeds");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--output-dir", output_dir_override, "override the config's output directory");
  train->add_option("--seeds", seeds_override, "override seeds, e.g. 1..5 or 3,7");

  // analyze-bias
  std::string agents = "1..5", actions = "5", bias_out = "bias_sweep.csv";
  double sigma = 1.0;
  std::int64_t trials = 100'000, cap = 10'000'000;
  std::uint64_t bias_seed = 1;
  CLI::App* bias = app.add_subcommand("analyze-bias", "Monte Carlo maximization-bias sweep vs the closed-form bound");
  bias->add_option("--agents", agents, "agent counts, e.g. 1..5 or 2,4");
  bias->add_option("--actions", actions, "action-space sizes, e.g. 5 or 3..6");
  bias->add_option("--sigma", sigma, "estimation-noise standard deviation");
  bias->add_option("--trials", trials, "Monte Carlo trials per row");
  bias->add_option("--seed", bias_seed, "RNG seed");
  bias->add_option("--cap", cap, "upper limit on the joint action space size");
  bias->add_option("--out", bias_out, "output CSV path");

  // verify
  std::int64_t samples = 10'000, grad_checks = 100, mono_checks = 1000;
  std::uint64_t verify_seed = 1;
  std::string verify_out = "verify_report.json";
  bool inject_fault = false;
  CLI::App* verify = app.add_subcommand("verify", "randomized property suites (target bound, gradients, monotonicity)");
  verify->add_option("--samples", samples, "randomized target-bound instances");
  verify->add_option("--seed", verify_seed, "RNG seed");
  verify->add_option("--grad-checks", grad_checks, "random gradient-check instances");
  verify->add_option("--mono-checks", mono_checks, "random mixer-monotonicity instances");
  verify->add_option("--out", verify_out, "output JSON path");
  verify->add_flag("--self-test-inject-fault", inject_fault,
                   "deliberately break weight normalization to prove the harness detects violations");

  // compare-delta-q
  std::vector<std::string> baseline_dirs, qsim_run_dirs;
  std::string compare_out = "delta_q_summary.json";
  CLI::App* compare = app.add_subcommand("compare-delta-q", "compare estimation error between paired run groups");
  compare->add_option("--baseline", baseline_dirs, "baseline run directories")->required()->expected(-1);
  compare->add_option("--qsim", qsim_run_dirs, "qsim run directories")->required()->expected(-1);
  compare->add_option("--out", compare_out, "output JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, output_dir_override, seeds_override);
    if (bias->parsed())
      return cmd_analyze_bias(agents, actions, sigma, trials, bias_seed, cap, bias_out);
    if (verify->parsed())
      return cmd_verify(samples, verify_seed, grad_checks, mono_checks, verify_out, inject_fault);
    if (compare->parsed()) return cmd_compare(baseline_dirs, qsim_run_dirs, compare_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

