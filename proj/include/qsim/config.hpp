#pragma once

#include "qsim/env.hpp"
#include "qsim/similarity.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qsim {

enum class EnvKind { Climbing, Gridworld };
enum class Algo { GreedyBaseline, Qsim, QsimMean, QsimTopN, QsimNoState };

std::string algo_name(Algo algo);

struct EpsilonScheduleConfig {
  double start = 1.0;
  double end = 0.05;
  std::int64_t anneal_steps = 50'000;

  double at(std::int64_t step) const;
};

struct TargetUpdateConfig {
  TargetUpdateMode mode = TargetUpdateMode::Soft;
  double tau = 0.01;           // soft
  std::int64_t interval = 200; // hard, counted in gradient updates
};

/// Fully resolved description of one experiment. parse_config() fills
/// every default (some depend on the environment) and validates the result;
/// echo_json() emits the canonical form that reproduces the run.
struct ExperimentConfig {
  EnvKind env = EnvKind::Climbing;
  GridworldConfig gridworld;

  Algo algo = Algo::Qsim;
  std::optional<int> top_n;  // required for the top-N variant
  MixerKind mixer = MixerKind::QMIX;

  KappaSchedule kappa = KappaSchedule::fixed(3.0);
  double threshold = 0.0;

  double gamma = 0.99;
  double learning_rate = 0.0005;
  std::int64_t buffer_episodes = 5000;
  std::int64_t batch_size = 32;
  EpsilonScheduleConfig epsilon;
  TargetUpdateConfig target_update;
  bool double_q = true;
  bool reward_standardization = true;

  std::int64_t step_max = 50'000;
  std::int64_t eval_interval = 1000;
  std::int64_t eval_episodes = 32;

  Eigen::Index agent_hidden = 64;
  QmixArch mixer_arch;
  EncoderArch encoder_arch;

  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/out";
  bool export_embeddings = false;

  std::unique_ptr<Env> make_env() const;
  bool uses_encoder() const;
  std::string variant_name() const;
  std::string echo_json() const;
  std::uint64_t config_hash() const;
};

/// Parses and validates a config from JSON text. Unknown keys are rejected
/// with a nearest-key suggestion; constraint violations name the field path.
ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig parse_config_file(const std::string& path);

}  // namespace qsim
