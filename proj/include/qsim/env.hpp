#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace qsim {

using JointAction = std::vector<int>;
using AvailMask = std::vector<std::uint8_t>;

struct ResetResult {
  Eigen::VectorXd state;
  std::vector<Eigen::VectorXd> obs;
  std::vector<AvailMask> avail;
};

struct EnvStep {
  std::vector<Eigen::VectorXd> next_obs;
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool terminal = false;
  std::vector<AvailMask> next_avail;
};

/// Fully cooperative environment with a shared reward and per-agent
/// discrete actions. Widths are constant across episodes and resets.
class Env {
 public:
  virtual ~Env() = default;
  virtual int num_agents() const = 0;
  virtual int num_actions() const = 0;
  virtual Eigen::Index obs_width() const = 0;
  virtual Eigen::Index state_width() const = 0;
  virtual ResetResult reset(std::uint64_t seed) = 0;
  virtual EnvStep step(const JointAction& actions) = 0;
};

/// Two-player, one-shot climbing game. Rows index agent 0's action, columns
/// agent 1's; both pick simultaneously and the episode ends.
///
/// Observations (width num_actions + 2): one-hot of the agent's own chosen
/// action, then a terminal flag, then an episode-start flag. The global state
/// is the concatenation of both observations.
class ClimbingGame final : public Env {
 public:
  ClimbingGame();

  static const Eigen::Matrix3d& payoff_matrix();

  int num_agents() const override { return 2; }
  int num_actions() const override { return 3; }
  Eigen::Index obs_width() const override { return 5; }
  Eigen::Index state_width() const override { return 10; }
  ResetResult reset(std::uint64_t seed) override;
  EnvStep step(const JointAction& actions) override;

 private:
  bool done_ = true;
};

struct GridworldConfig {
  int width = 4;
  int height = 4;
  int num_agents = 2;
  int horizon = 25;
  /// Defaults to the first num_agents corners when empty.
  std::vector<std::pair<int, int>> goals;

  void validate() const;
  std::vector<std::pair<int, int>> resolved_goals() const;
};

/// Multi-step cooperative navigation on a grid. Agents move {up, down, left,
/// right, stay}; moves that would leave the grid are unavailable. The shared
/// reward each step is the number of goal cells occupied by at least one
/// agent minus a 0.01 step cost. The episode ends when every goal cell is
/// occupied or at the horizon. Transitions are deterministic.
///
/// Observation (width 3N): normalized coordinates of all agents, then a
/// one-hot agent id. State (width 2N + 2G): agent coordinates then goal
/// coordinates, all normalized. Full layout in docs/gridworld.md.
class CoopGridworld final : public Env {
 public:
  explicit CoopGridworld(GridworldConfig config);

  int num_agents() const override { return config_.num_agents; }
  int num_actions() const override { return 5; }
  Eigen::Index obs_width() const override;
  Eigen::Index state_width() const override;
  ResetResult reset(std::uint64_t seed) override;
  EnvStep step(const JointAction& actions) override;

  const std::vector<std::pair<int, int>>& agent_positions() const { return positions_; }

  enum Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };

 private:
  Eigen::VectorXd make_state() const;
  std::vector<Eigen::VectorXd> make_obs() const;
  std::vector<AvailMask> make_avail() const;
  int occupied_goals() const;

  GridworldConfig config_;
  std::vector<std::pair<int, int>> goals_;
  std::vector<std::pair<int, int>> positions_;
  int steps_taken_ = 0;
  bool done_ = true;
};

std::unique_ptr<Env> make_climbing();
std::unique_ptr<Env> make_gridworld(const GridworldConfig& config);

}  // namespace qsim
