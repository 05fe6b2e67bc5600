#pragma once

#include "qsim/config.hpp"
#include "qsim/metrics.hpp"
#include "qsim/similarity.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace qsim {

struct EpisodeStep {
  Eigen::VectorXd state;
  std::vector<Eigen::VectorXd> obs;
  std::vector<AvailMask> avail;
  JointAction actions;
  double reward = 0.0;  // raw environment reward
};

struct Episode {
  std::vector<EpisodeStep> steps;
  Eigen::VectorXd final_state;
  std::vector<Eigen::VectorXd> final_obs;
  std::vector<AvailMask> final_avail;
  bool terminal = false;

  std::int64_t length() const { return static_cast<std::int64_t>(steps.size()); }
};

/// Ring buffer of complete episodes with FIFO eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::int64_t capacity);

  void add(Episode episode);
  std::int64_t size() const { return static_cast<std::int64_t>(episodes_.size()); }
  const Episode& at(std::int64_t i) const { return episodes_[static_cast<std::size_t>(i)]; }
  /// Uniform sample of distinct episode indices.
  std::vector<std::int64_t> sample_indices(std::int64_t count, Rng& rng) const;

 private:
  std::int64_t capacity_;
  std::deque<Episode> episodes_;
};

/// Running mean/std reward normalizer (population variance; identity until
/// two rewards have been seen).
class RewardStandardizer {
 public:
  explicit RewardStandardizer(bool enabled) : enabled_(enabled) {}

  void update(double reward);
  double transform(double reward) const;
  bool enabled() const { return enabled_; }

 private:
  bool enabled_;
  std::int64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct TrainMetrics {
  double td_loss = 0.0;
  double ae_loss = 0.0;
  double mean_target = 0.0;
  double mean_qtot = 0.0;
};

/// Everything one training run owns: networks, encoder, optimizers, replay
/// buffer, reward statistics, and the named RNG streams.
struct TrainState {
  ExperimentConfig config;
  std::unique_ptr<Env> env;
  NetworkPair pair;
  std::optional<ActionEncoder> encoder;
  std::optional<Optimizer> opt_theta;
  std::optional<Optimizer> opt_phi;
  ReplayBuffer buffer;
  RewardStandardizer reward_std;
  std::int64_t env_steps = 0;
  std::int64_t train_steps = 0;
  Rng rng_env;
  Rng rng_explore;
  Rng rng_sample;
  Rng rng_eval;

  static TrainState make(const ExperimentConfig& config, std::uint64_t seed);
};

/// Plays one episode with per-agent independent epsilon-greedy exploration on
/// the main network. When store is set, the episode lands in the buffer, the
/// reward statistics update, and env_steps advances.
Episode collect_episode(TrainState& state, double epsilon, bool store);

/// One Algorithm-1 update on a sampled batch: autoencoder step (for variants
/// that learn one), target construction per the variant, then the TD step.
TrainMetrics train_step(TrainState& state);

struct EvalResult {
  double mean_return = 0.0;        // raw rewards
  double median_delta_q = 0.0;     // training-scale rewards
  JointAction first_greedy_action; // joint action taken at t=0 of the last episode
};

/// Greedy evaluation episodes (epsilon = 0); nothing enters the buffer.
EvalResult evaluate(TrainState& state, std::int64_t episodes);

struct RunResult {
  std::string run_dir;
  double final_eval_return = 0.0;
  JointAction final_greedy_action;
};

/// Full training run for one seed: writes metrics.csv, manifest.json and a
/// final checkpoint under <output_dir>/seed_<seed>/.
RunResult run_single_seed(const ExperimentConfig& config, std::uint64_t seed);

/// Runs every configured seed (in parallel up to QSIM_LAB_THREADS workers).
std::vector<RunResult> run_experiment(const ExperimentConfig& config);

}  // namespace qsim
