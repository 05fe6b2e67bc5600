#include "qsim/env.hpp"

#include "qsim/rng.hpp"

#include <algorithm>
#include <stdexcept>

namespace qsim {

namespace {

void require_actions(const JointAction& actions, int n_agents, int n_actions,
                     const std::vector<AvailMask>* avail) {
  if (static_cast<int>(actions.size()) != n_agents)
    throw std::invalid_argument("joint action has wrong agent count");
  for (int i = 0; i < n_agents; ++i) {
    if (actions[i] < 0 || actions[i] >= n_actions)
      throw std::invalid_argument("action index out of range for agent " + std::to_string(i));
    if (avail && !(*avail)[i][actions[i]])
      throw std::invalid_argument("unavailable action selected by agent " + std::to_string(i));
  }
}

}  // namespace

// ---- ClimbingGame ----------------------------------------------------

ClimbingGame::ClimbingGame() = default;

const Eigen::Matrix3d& ClimbingGame::payoff_matrix() {
  static const Eigen::Matrix3d payoff = [] {
    Eigen::Matrix3d m;
    m << 0, 6, 5,          //
        -30, 7, 0,         //
        11, -30, 0;
    return m;
  }();
  return payoff;
}

ResetResult ClimbingGame::reset(std::uint64_t) {
  done_ = false;
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(obs_width());
  obs[4] = 1.0;  // episode-start flag
  ResetResult r;
  r.obs = {obs, obs};
  r.state = Eigen::VectorXd::Zero(state_width());
  r.state << obs, obs;
  r.avail = {AvailMask(3, 1), AvailMask(3, 1)};
  return r;
}

EnvStep ClimbingGame::step(const JointAction& actions) {
  if (done_) throw std::runtime_error("step after terminal state");
  require_actions(actions, 2, 3, nullptr);
  done_ = true;

  EnvStep out;
  out.reward = payoff_matrix()(actions[0], actions[1]);
  out.terminal = true;
  out.next_obs.resize(2);
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd obs = Eigen::VectorXd::Zero(obs_width());
    obs[actions[i]] = 1.0;  // one-hot of own action
    obs[3] = 1.0;           // terminal flag
    out.next_obs[i] = obs;
  }
  out.next_state = Eigen::VectorXd(state_width());
  out.next_state << out.next_obs[0], out.next_obs[1];
  out.next_avail = {AvailMask(3, 1), AvailMask(3, 1)};
  return out;
}

// ---- CoopGridworld ---------------------------------------------------

void GridworldConfig::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("gridworld dimensions must be positive");
  if (num_agents < 2) throw std::invalid_argument("gridworld needs at least 2 agents");
  if (horizon <= 0) throw std::invalid_argument("gridworld horizon must be positive");
  if (num_agents > width * height) throw std::invalid_argument("more agents than cells");
  for (const auto& [x, y] : goals)
    if (x < 0 || x >= width || y < 0 || y >= height)
      throw std::invalid_argument("goal position out of bounds");
}

std::vector<std::pair<int, int>> GridworldConfig::resolved_goals() const {
  if (!goals.empty()) return goals;
  const std::vector<std::pair<int, int>> corners = {
      {0, 0}, {width - 1, height - 1}, {0, height - 1}, {width - 1, 0}};
  if (num_agents > static_cast<int>(corners.size()))
    throw std::invalid_argument("default goals support at most 4 agents; specify goals explicitly");
  return {corners.begin(), corners.begin() + num_agents};
}

CoopGridworld::CoopGridworld(GridworldConfig config) : config_(std::move(config)) {
  config_.validate();
  goals_ = config_.resolved_goals();
}

Eigen::Index CoopGridworld::obs_width() const { return 3 * config_.num_agents; }

Eigen::Index CoopGridworld::state_width() const {
  return 2 * config_.num_agents + 2 * static_cast<Eigen::Index>(goals_.size());
}

namespace {
double norm_coord(int v, int extent) { return extent > 1 ? static_cast<double>(v) / (extent - 1) : 0.0; }
}  // namespace

Eigen::VectorXd CoopGridworld::make_state() const {
  Eigen::VectorXd s(state_width());
  Eigen::Index at = 0;
  for (const auto& [x, y] : positions_) {
    s[at++] = norm_coord(x, config_.width);
    s[at++] = norm_coord(y, config_.height);
  }
  for (const auto& [x, y] : goals_) {
    s[at++] = norm_coord(x, config_.width);
    s[at++] = norm_coord(y, config_.height);
  }
  return s;
}

std::vector<Eigen::VectorXd> CoopGridworld::make_obs() const {
  std::vector<Eigen::VectorXd> obs(config_.num_agents);
  for (int i = 0; i < config_.num_agents; ++i) {
    Eigen::VectorXd o = Eigen::VectorXd::Zero(obs_width());
    Eigen::Index at = 0;
    for (const auto& [x, y] : positions_) {
      o[at++] = norm_coord(x, config_.width);
      o[at++] = norm_coord(y, config_.height);
    }
    o[at + i] = 1.0;  // own id
    obs[i] = std::move(o);
  }
  return obs;
}

std::vector<AvailMask> CoopGridworld::make_avail() const {
  std::vector<AvailMask> avail(config_.num_agents, AvailMask(5, 0));
  for (int i = 0; i < config_.num_agents; ++i) {
    const auto [x, y] = positions_[i];
    avail[i][kUp] = y > 0;
    avail[i][kDown] = y < config_.height - 1;
    avail[i][kLeft] = x > 0;
    avail[i][kRight] = x < config_.width - 1;
    avail[i][kStay] = 1;
  }
  return avail;
}

int CoopGridworld::occupied_goals() const {
  int count = 0;
  for (const auto& g : goals_)
    if (std::find(positions_.begin(), positions_.end(), g) != positions_.end()) ++count;
  return count;
}

ResetResult CoopGridworld::reset(std::uint64_t seed) {
  Rng rng(seed);
  const int cells = config_.width * config_.height;
  // distinct start cells, sampled without replacement
  std::vector<int> order(cells);
  for (int c = 0; c < cells; ++c) order[c] = c;
  positions_.clear();
  for (int i = 0; i < config_.num_agents; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(cells - i));
    std::swap(order[i], order[j]);
    positions_.emplace_back(order[i] % config_.width, order[i] / config_.width);
  }
  steps_taken_ = 0;
  done_ = false;
  return {make_state(), make_obs(), make_avail()};
}

EnvStep CoopGridworld::step(const JointAction& actions) {
  if (done_) throw std::runtime_error("step after terminal state");
  const auto avail = make_avail();
  require_actions(actions, config_.num_agents, 5, &avail);

  for (int i = 0; i < config_.num_agents; ++i) {
    auto& [x, y] = positions_[i];
    switch (actions[i]) {
      case kUp: --y; break;
      case kDown: ++y; break;
      case kLeft: --x; break;
      case kRight: ++x; break;
      case kStay: break;
    }
  }
  ++steps_taken_;

  EnvStep out;
  const int on_goals = occupied_goals();
  out.reward = static_cast<double>(on_goals) - 0.01;
  const bool all_covered = on_goals == static_cast<int>(goals_.size());
  out.terminal = all_covered || steps_taken_ >= config_.horizon;
  done_ = out.terminal;
  out.next_state = make_state();
  out.next_obs = make_obs();
  out.next_avail = make_avail();
  return out;
}

std::unique_ptr<Env> make_climbing() { return std::make_unique<ClimbingGame>(); }

std::unique_ptr<Env> make_gridworld(const GridworldConfig& config) {
  return std::make_unique<CoopGridworld>(config);
}

}  // namespace qsim
