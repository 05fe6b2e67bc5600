#pragma once

#include "qsim/vd.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace qsim {

// ---- action representation ---------------------------------------------

struct EncoderArch {
  Eigen::Index hidden = 128;
  Eigen::Index embed = 16;
  bool use_state = true;  // false for the no-state ablation
};

/// Self-supervised action representation. The encoder runs (obs, state)
/// through a trunk in parallel with a one-hot action branch and fuses both
/// into an embedding; the predictor maps the concatenated embeddings of all
/// agents to the concatenated next observations. Trained only by ae_loss;
/// no TD gradients reach these parameters.
class ActionEncoder {
 public:
  static ActionEncoder init(int num_agents, Eigen::Index obs_width, Eigen::Index state_width,
                            int num_actions, const EncoderArch& arch, Rng& rng);

  /// Batched embedding: obs {B,obs_w}, state {B,state_w}, action one-hots {B,A} -> {B,embed}.
  Tensor encode_batch(const Tensor& obs, const Tensor& state, const Tensor& action_onehot) const;
  /// Single embedding without taping.
  Eigen::VectorXd encode(const Eigen::VectorXd& obs, const Eigen::VectorXd& state, int action) const;
  /// No-tape embeddings of one fixed action across a batch of (obs, state) rows.
  Eigen::MatrixXd encode_rows(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& state, int action) const;
  /// Predicted next joint observation from per-agent embeddings {B,embed} each.
  Tensor predict_batch(std::span<const Tensor> agent_embeddings) const;

  std::vector<Tensor> parameters() const;

  int num_agents() const { return num_agents_; }
  int num_actions() const { return num_actions_; }
  Eigen::Index obs_width() const { return obs_width_; }
  Eigen::Index state_width() const { return state_width_; }
  const EncoderArch& arch() const { return arch_; }

  struct SubNet {
    const MlpSpec& spec;
    const MlpParams& params;
  };
  SubNet trunk() const { return {trunk_spec_, trunk_}; }
  SubNet action_branch() const { return {action_spec_, action_}; }
  SubNet fusion() const { return {fusion_spec_, fusion_}; }
  SubNet predictor() const { return {predictor_spec_, predictor_}; }

 private:
  int num_agents_ = 0;
  int num_actions_ = 0;
  Eigen::Index obs_width_ = 0;
  Eigen::Index state_width_ = 0;
  EncoderArch arch_;
  MlpSpec trunk_spec_, action_spec_, fusion_spec_, predictor_spec_;
  MlpParams trunk_, action_, fusion_, predictor_;
};

/// Mean over the batch of the summed squared next-observation prediction
/// error (summed across agents and observation components).
Tensor ae_loss(const ActionEncoder& encoder, std::span<const Transition> batch);

// ---- near-greedy joint action space --------------------------------------

/// The multiset of single-agent deviations around the greedy joint action.
/// Entries are agent-major, action-minor over available actions; the anchor
/// appears once per agent (as that agent's greedy-action entry).
struct NearGreedySet {
  struct Entry {
    int agent;
    int action;
  };
  JointAction anchor;
  std::vector<Entry> entries;

  JointAction joint_action(std::size_t entry_index) const;
  /// Index of agent i's anchor entry.
  std::size_t anchor_entry(int agent) const;
};

NearGreedySet build_near_greedy(const JointAction& u_star, std::span<const AvailMask> avail);

// ---- similarity weights ---------------------------------------------------

struct SimilarityWeights {
  std::vector<double> similarity;  // S_ij per entry, aligned with the set
  std::vector<double> weight;      // per-agent softmax weights; 0 when masked
};

/// Cosine similarities between each entry's embedding and the agent's greedy
/// embedding, both conditioned on (next_obs, next_state). The greedy entry is
/// pinned to similarity exactly 1; zero-norm embeddings score 0.
std::vector<double> candidate_similarities(const ActionEncoder& encoder,
                                           std::span<const Eigen::VectorXd> next_obs,
                                           const Eigen::VectorXd& next_state,
                                           const NearGreedySet& set);

/// Per-agent softmax over kappa * S with threshold masking applied before the
/// softmax and optional top-N truncation (with renormalization) after it.
/// The greedy entry always survives. Masked entries get weight 0; surviving
/// weights sum to 1 per agent.
SimilarityWeights similarity_softmax(const NearGreedySet& set, std::span<const double> similarities,
                                     double kappa, double threshold, std::optional<int> top_n);

/// Sum over entries of (weight / N) * value: the similarity-weighted value
/// with global weights normalized to total 1 across the whole multiset.
double weighted_candidate_value(const NearGreedySet& set, std::span<const double> weights,
                                std::span<const double> candidate_values);

// ---- the weighted TD target -----------------------------------------------

struct QsimOptions {
  double kappa = 3.0;
  double threshold = 0.0;
  std::optional<int> top_n;
  /// Uniform weights over the multiset (the mean ablation); skips the
  /// encoder and similarity masking entirely.
  bool uniform = false;
  bool double_q = true;
};

/// The similarity-weighted TD target: candidate targets over the near-greedy
/// space aggregated by the (1/N-scaled) softmax weights; exactly r on
/// terminal transitions. `encoder` may be null only in uniform mode.
double qsim_target(const NetworkPair& pair, const ActionEncoder* encoder, const Transition& t,
                   double gamma, const QsimOptions& options);

/// Batched form of qsim_target: networks and encoder run once per agent and
/// action over the whole batch instead of once per transition.
Eigen::VectorXd qsim_targets(const NetworkPair& pair, const ActionEncoder* encoder,
                             std::span<const Transition> batch, double gamma,
                             const QsimOptions& options);

// ---- kappa schedule --------------------------------------------------------

struct KappaSchedule {
  enum class Mode { Constant, Linear };
  Mode mode = Mode::Constant;
  double constant = 3.0;
  double start = 1.0;
  double end = 10.0;
  std::int64_t horizon = 1;

  double at(std::int64_t step) const;

  static KappaSchedule fixed(double value);
  static KappaSchedule linear(double start, double end, std::int64_t horizon);
};

}  // namespace qsim
