#pragma once

#include "qsim/similarity.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qsim {

// ---- maximization-bias Monte Carlo ----------------------------------------

struct BiasResult {
  double empirical = 0.0;  // mean over trials of max of |A|^N iid N(0, sigma^2)
  double std_err = 0.0;
  double bound = 0.0;  // sigma * sqrt(2 N ln |A|)
  std::int64_t trials = 0;
};

/// Worst-case maximization bias: identical true values, Gaussian estimation
/// noise. Monte Carlo chunks are reduced with compensated summation in fixed
/// chunk order, so threading does not change the result.
BiasResult mc_max_bias(int num_agents, int num_actions, double sigma, std::int64_t trials,
                       std::uint64_t seed, std::int64_t joint_cap = 10'000'000);

double max_bias_bound(int num_agents, int num_actions, double sigma);

struct BiasSweepConfig {
  std::vector<int> agent_counts;
  std::vector<int> action_sizes;
  double sigma = 1.0;
  std::int64_t trials = 100'000;
  std::uint64_t seed = 1;
  std::int64_t joint_cap = 10'000'000;
};

struct BiasRow {
  int num_agents = 0;
  int num_actions = 0;
  double sigma = 0.0;
  std::int64_t trials = 0;
  double empirical = 0.0;
  double std_err = 0.0;
  double bound = 0.0;
  double ratio = 0.0;  // empirical / bound; 0 when the bound is 0
};

std::vector<BiasRow> bias_sweep(const BiasSweepConfig& config);
std::string bias_rows_csv(std::span<const BiasRow> rows);

/// Checks that every row respects the bound within 3 standard errors and
/// that the empirical bias grows with the agent count (per action size)
/// beyond 3-sigma margins. Returns a human-readable failure list.
std::vector<std::string> check_bias_bound_trend(std::span<const BiasRow> rows);

// ---- weighted-target bound falsification harness ----------------------------

enum class FaultInjection {
  None,
  /// Harness self-test: inflates weights so the convex-combination premise
  /// breaks and violations must surface.
  InflateWeights,
};

struct TargetBoundReport {
  std::int64_t samples = 0;
  std::int64_t violations = 0;
  /// Smallest observed (V_greedy - V_qsim); negative means violation.
  double worst_margin = 0.0;
  std::string worst_instance;  // serialized description of the worst sample

  std::string to_json() const;
};

/// Randomized instances (agent count, action count, availability, joint
/// Q-table, similarity rows with the anchor pinned to 1, kappa, threshold,
/// top-N) evaluated through the same near-greedy weighting machinery as the
/// training target. The greedy action is the argmax of the evaluated table,
/// so the bound's premise holds by construction.
TargetBoundReport verify_target_bound(std::int64_t samples, std::uint64_t seed,
                               FaultInjection fault = FaultInjection::None);

// ---- randomized implementation checks ----------------------------------------

struct SuiteReport {
  std::int64_t instances = 0;
  std::int64_t violations = 0;
  double worst = 0.0;  // suite-specific: relative error or margin
};

/// Random MLPs against central finite differences (64-bit, eps 1e-5,
/// relative error below 1e-4). Draws retry when a ReLU kink sits inside the
/// finite-difference stencil, where the comparison is undefined.
SuiteReport gradient_check_suite(std::int64_t instances, std::uint64_t seed);

/// Random mixers, states and utility bumps; Q_tot must never decrease.
SuiteReport monotonicity_check_suite(std::int64_t instances, std::uint64_t seed);

// ---- estimation error -------------------------------------------------------

/// delta_q = Q_hat - sum_k gamma^k r_k over the realized reward suffix.
double delta_q(double q_hat, std::span<const double> rewards, double gamma);

// ---- metric-file comparison --------------------------------------------------

struct DeltaQSummary {
  std::vector<std::int64_t> steps;
  std::vector<double> baseline_median, baseline_iqr;
  std::vector<double> qsim_median, qsim_iqr;
  /// Medians pooled over the final quarter of training (step > 3/4 max).
  double final_quarter_baseline = 0.0;
  double final_quarter_qsim = 0.0;
  bool qsim_lower = false;

  std::string to_json() const;
};

/// Compares per-step delta_q medians between two groups of run directories
/// (each containing metrics.csv and manifest.json). Configs must match
/// except for the algorithm variant, seed, and output path.
DeltaQSummary compare_delta_q(std::span<const std::string> baseline_run_dirs,
                              std::span<const std::string> qsim_run_dirs);

}  // namespace qsim
