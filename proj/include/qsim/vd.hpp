#pragma once

#include "qsim/nn.hpp"
#include "qsim/transition.hpp"

#include <optional>
#include <span>
#include <vector>

namespace qsim {

/// Finite stand-in for -inf on masked actions; keeps arithmetic well defined.
constexpr double kUnavailableQ = -1e9;

/// Per-agent utility network mapping an observation to one value per action.
struct AgentNet {
  MlpSpec spec;
  MlpParams params;
};

AgentNet make_agent_net(Eigen::Index obs_width, int num_actions, Eigen::Index hidden, Rng& rng);

/// Utilities with unavailable actions pinned to kUnavailableQ. Throws if the
/// mask leaves no action.
Eigen::VectorXd agent_q_values(const AgentNet& net, const Eigen::VectorXd& obs, const AvailMask& avail);

/// Argmax over available entries, ties broken toward the lowest index.
int masked_argmax(const Eigen::VectorXd& q, const AvailMask& avail);

/// Greedy joint action via per-agent maximization (the IGM selection rule).
JointAction igm_argmax(std::span<const AgentNet> agents, std::span<const Eigen::VectorXd> obs,
                       std::span<const AvailMask> avail);

// ---- mixers ------------------------------------------------------------

enum class MixerKind { VDN, QMIX };

struct QmixArch {
  Eigen::Index embed = 32;
  Eigen::Index hyper_hidden = 64;
};

/// Value-decomposition head. VDN sums the utilities; QMIX runs a two-layer
/// state-conditioned mix whose weights come from hypernetworks and pass
/// through abs(), making Q_tot monotone in every utility.
class Mixer {
 public:
  Mixer() = default;  // placeholder; use the factories below

  static Mixer vdn(int num_agents);
  static Mixer qmix(int num_agents, Eigen::Index state_width, const QmixArch& arch, Rng& rng);
  /// Test hook: hypernetworks emit constant W1 = I, b1 = 0, w2 = 1, b2 = 0.
  static Mixer qmix_identity(int num_agents, Eigen::Index state_width);

  MixerKind kind() const { return kind_; }
  int num_agents() const { return num_agents_; }

  double mix(const Eigen::VectorXd& agent_q, const Eigen::VectorXd& state) const;
  /// Batched taped mix: agent_q {B,N}, states {B,S} -> {B}.
  Tensor mix_batch(const Tensor& agent_q, const Tensor& states) const;
  /// No-tape bulk evaluation: q_sets[k] holds candidate utility rows {C_k, N}
  /// for states.row(k); hypernetworks run once per state.
  std::vector<Eigen::VectorXd> mix_rows(std::span<const Eigen::MatrixXd> q_sets,
                                        const Eigen::MatrixXd& states) const;

  std::vector<Tensor> parameters() const;
  Mixer clone(bool requires_grad) const;
  void copy_values_from(const Mixer& other);
  void lerp_values_from(const Mixer& other, double tau);

 private:

  MixerKind kind_ = MixerKind::VDN;
  int num_agents_ = 0;
  Eigen::Index state_width_ = 0;
  QmixArch arch_;
  // hypernetworks: state -> N*E, E, E, 1
  MlpSpec w1_spec_, b1_spec_, w2_spec_, b2_spec_;
  MlpParams w1_, b1_, w2_, b2_;
};

// ---- network pair and targets -----------------------------------------

/// Full main-side model: one utility network per agent plus the mixer.
struct VdModel {
  std::vector<AgentNet> agents;
  Mixer mixer;

  std::vector<Tensor> parameters() const;
  VdModel clone(bool requires_grad) const;
  void copy_values_from(const VdModel& other);
  void lerp_values_from(const VdModel& other, double tau);
};

/// Main parameters theta plus the frozen target copy.
struct NetworkPair {
  VdModel main;
  VdModel target;

  static NetworkPair make(VdModel main_model);
};

enum class TargetUpdateMode { Hard, Soft };

void update_target(NetworkPair& pair, TargetUpdateMode mode, double tau = 0.01);

/// r + gamma * Q_target(next, u*) with u* selected on the main network when
/// double_q is set (otherwise on the target network); exactly r on terminal
/// transitions.
double greedy_td_target(const NetworkPair& pair, const Transition& t, double gamma, bool double_q);

/// Per-agent utilities on the next observations for a whole batch, masked
/// with the unavailable-action sentinel: one {B, A} matrix per agent.
std::vector<Eigen::MatrixXd> next_utilities(const VdModel& model, std::span<const Transition> batch);

/// Greedy selection per transition from precomputed masked utilities.
std::vector<JointAction> igm_argmax_rows(std::span<const Eigen::MatrixXd> utilities,
                                         std::span<const Transition> batch);

/// Batched greedy_td_target over a batch (networks run once per agent).
Eigen::VectorXd greedy_targets(const NetworkPair& pair, std::span<const Transition> batch,
                               double gamma, bool double_q);

/// Q_tot of the taken actions for each transition -> {B} (taped).
Tensor qtot_batch(const VdModel& model, std::span<const Transition> batch);

/// Mean squared error between Q_tot(taken actions) and the detached targets.
Tensor td_loss(const VdModel& model, std::span<const Transition> batch, const Eigen::VectorXd& targets);

}  // namespace qsim
