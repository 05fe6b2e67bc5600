#include "qsim/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qsim {

// ---- ActionEncoder --------------------------------------------------------

ActionEncoder ActionEncoder::init(int num_agents, Eigen::Index obs_width, Eigen::Index state_width,
                                  int num_actions, const EncoderArch& arch, Rng& rng) {
  if (num_agents <= 0 || num_actions <= 0) throw std::invalid_argument("encoder needs agents and actions");
  ActionEncoder e;
  e.num_agents_ = num_agents;
  e.num_actions_ = num_actions;
  e.obs_width_ = obs_width;
  e.state_width_ = state_width;
  e.arch_ = arch;

  const Eigen::Index trunk_in = obs_width + (arch.use_state ? state_width : 0);
  e.trunk_spec_ = {{trunk_in, arch.hidden}, Activation::ReLU, Activation::ReLU};
  e.action_spec_ = {{num_actions, arch.hidden}, Activation::ReLU, Activation::ReLU};
  e.fusion_spec_ = {{2 * arch.hidden, arch.embed}, Activation::ReLU, Activation::Identity};
  e.predictor_spec_ = {{num_agents * arch.embed, arch.hidden, num_agents * obs_width},
                       Activation::ReLU,
                       Activation::Identity};
  e.trunk_ = MlpParams::init(e.trunk_spec_, rng);
  e.action_ = MlpParams::init(e.action_spec_, rng);
  e.fusion_ = MlpParams::init(e.fusion_spec_, rng);
  e.predictor_ = MlpParams::init(e.predictor_spec_, rng);
  return e;
}

Tensor ActionEncoder::encode_batch(const Tensor& obs, const Tensor& state, const Tensor& action_onehot) const {
  Tensor trunk_in = arch_.use_state ? hcat(std::vector<Tensor>{obs, state}) : obs;
  Tensor features = mlp_forward(trunk_spec_, trunk_, trunk_in);
  Tensor action_features = mlp_forward(action_spec_, action_, action_onehot);
  return mlp_forward(fusion_spec_, fusion_, hcat(std::vector<Tensor>{features, action_features}));
}

Eigen::VectorXd ActionEncoder::encode(const Eigen::VectorXd& obs, const Eigen::VectorXd& state,
                                      int action) const {
  if (action < 0 || action >= num_actions_) throw std::invalid_argument("encode: action index out of range");
  NoGradGuard no_grad;
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, num_actions_);
  onehot(0, action) = 1.0;
  Eigen::MatrixXd obs_m = obs.transpose();
  Eigen::MatrixXd state_m = state.transpose();
  Tensor out = encode_batch(Tensor::from_matrix(obs_m), Tensor::from_matrix(state_m),
                            Tensor::from_matrix(onehot));
  return out.to_vector();
}

Eigen::MatrixXd ActionEncoder::encode_rows(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& state,
                                           int action) const {
  if (action < 0 || action >= num_actions_) throw std::invalid_argument("encode_rows: action out of range");
  NoGradGuard no_grad;
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(obs.rows(), num_actions_);
  onehot.col(action).setOnes();
  return encode_batch(Tensor::from_matrix(obs), Tensor::from_matrix(state), Tensor::from_matrix(onehot))
      .matrix();
}

Tensor ActionEncoder::predict_batch(std::span<const Tensor> agent_embeddings) const {
  if (static_cast<int>(agent_embeddings.size()) != num_agents_)
    throw std::invalid_argument("predict_batch: one embedding block per agent required");
  return mlp_forward(predictor_spec_, predictor_, hcat(agent_embeddings));
}

std::vector<Tensor> ActionEncoder::parameters() const {
  std::vector<Tensor> out;
  for (const MlpParams* p : {&trunk_, &action_, &fusion_, &predictor_}) {
    auto t = p->all();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

Tensor ae_loss(const ActionEncoder& encoder, std::span<const Transition> batch) {
  if (batch.empty()) throw std::invalid_argument("ae_loss: empty batch");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const int n = encoder.num_agents();
  const Eigen::Index obs_w = encoder.obs_width();

  Eigen::MatrixXd states(b, encoder.state_width());
  for (Eigen::Index k = 0; k < b; ++k) states.row(k) = batch[k].state;
  const Tensor state_t = Tensor::from_matrix(states);

  std::vector<Tensor> embeddings;
  embeddings.reserve(n);
  Eigen::MatrixXd next_obs_all(b, n * obs_w);
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd obs(b, obs_w);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(b, encoder.num_actions());
    for (Eigen::Index k = 0; k < b; ++k) {
      obs.row(k) = batch[k].obs[i];
      onehot(k, batch[k].actions[i]) = 1.0;
      next_obs_all.block(k, i * obs_w, 1, obs_w) = batch[k].next_obs[i].transpose();
    }
    embeddings.push_back(encoder.encode_batch(Tensor::from_matrix(obs), state_t, Tensor::from_matrix(onehot)));
  }
  Tensor predicted = encoder.predict_batch(embeddings);
  Tensor diff = sub(predicted, Tensor::from_matrix(next_obs_all));
  // summed over agents and components, averaged over the batch
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(b));
}

// ---- NearGreedySet ---------------------------------------------------------

JointAction NearGreedySet::joint_action(std::size_t entry_index) const {
  JointAction u = anchor;
  const Entry& e = entries.at(entry_index);
  u[e.agent] = e.action;
  return u;
}

std::size_t NearGreedySet::anchor_entry(int agent) const {
  for (std::size_t k = 0; k < entries.size(); ++k)
    if (entries[k].agent == agent && entries[k].action == anchor[agent]) return k;
  throw std::logic_error("anchor entry missing for agent " + std::to_string(agent));
}

NearGreedySet build_near_greedy(const JointAction& u_star, std::span<const AvailMask> avail) {
  if (u_star.size() != avail.size())
    throw std::invalid_argument("build_near_greedy: need one mask per agent");
  NearGreedySet set;
  set.anchor = u_star;
  for (std::size_t i = 0; i < u_star.size(); ++i) {
    if (!avail[i][u_star[i]])
      throw std::invalid_argument("build_near_greedy: anchor action unavailable for agent " +
                                  std::to_string(i));
    for (int a = 0; a < static_cast<int>(avail[i].size()); ++a)
      if (avail[i][a]) set.entries.push_back({static_cast<int>(i), a});
  }
  return set;
}

// ---- similarity ------------------------------------------------------------

std::vector<double> candidate_similarities(const ActionEncoder& encoder,
                                           std::span<const Eigen::VectorXd> next_obs,
                                           const Eigen::VectorXd& next_state, const NearGreedySet& set) {
  NoGradGuard no_grad;
  const int n = static_cast<int>(set.anchor.size());
  std::vector<Eigen::VectorXd> greedy_embedding(n);
  std::vector<double> greedy_norm(n);
  for (int i = 0; i < n; ++i) {
    greedy_embedding[i] = encoder.encode(next_obs[i], next_state, set.anchor[i]);
    greedy_norm[i] = greedy_embedding[i].norm();
  }
  std::vector<double> sims(set.entries.size());
  for (std::size_t k = 0; k < set.entries.size(); ++k) {
    const auto& e = set.entries[k];
    if (e.action == set.anchor[e.agent]) {
      sims[k] = 1.0;  // identical embeddings; pinned even if zero-norm
      continue;
    }
    const Eigen::VectorXd f = encoder.encode(next_obs[e.agent], next_state, e.action);
    const double denom = greedy_norm[e.agent] * f.norm();
    sims[k] = denom > 0.0 ? greedy_embedding[e.agent].dot(f) / denom : 0.0;
  }
  return sims;
}

SimilarityWeights similarity_softmax(const NearGreedySet& set, std::span<const double> similarities,
                                     double kappa, double threshold, std::optional<int> top_n) {
  if (similarities.size() != set.entries.size())
    throw std::invalid_argument("similarity_softmax: one similarity per entry required");
  if (kappa < 0.0) throw std::invalid_argument("kappa must be non-negative");
  if (top_n && *top_n < 1) throw std::invalid_argument("top_n must be positive");

  const int n = static_cast<int>(set.anchor.size());
  SimilarityWeights out;
  out.similarity.assign(similarities.begin(), similarities.end());
  out.weight.assign(set.entries.size(), 0.0);

  for (int agent = 0; agent < n; ++agent) {
    std::vector<std::size_t> survivors;
    for (std::size_t k = 0; k < set.entries.size(); ++k) {
      if (set.entries[k].agent != agent) continue;
      const bool is_anchor = set.entries[k].action == set.anchor[agent];
      if (is_anchor || similarities[k] >= threshold) survivors.push_back(k);
    }
    if (top_n && static_cast<int>(survivors.size()) > *top_n) {
      // keep the N most similar; stable, so ties prefer lower action index
      std::stable_sort(survivors.begin(), survivors.end(), [&](std::size_t a, std::size_t b) {
        return similarities[a] > similarities[b];
      });
      survivors.resize(static_cast<std::size_t>(*top_n));
    }
    if (survivors.empty()) throw std::logic_error("no surviving entries for agent " + std::to_string(agent));

    double max_scaled = -std::numeric_limits<double>::infinity();
    for (std::size_t k : survivors) max_scaled = std::max(max_scaled, kappa * similarities[k]);
    double denom = 0.0;
    for (std::size_t k : survivors) denom += std::exp(kappa * similarities[k] - max_scaled);
    for (std::size_t k : survivors) out.weight[k] = std::exp(kappa * similarities[k] - max_scaled) / denom;
  }
  return out;
}

double weighted_candidate_value(const NearGreedySet& set, std::span<const double> weights,
                                std::span<const double> candidate_values) {
  if (weights.size() != set.entries.size() || candidate_values.size() != set.entries.size())
    throw std::invalid_argument("weighted_candidate_value: per-entry inputs required");
  const double inv_n = 1.0 / static_cast<double>(set.anchor.size());
  double v = 0.0;
  for (std::size_t k = 0; k < set.entries.size(); ++k) v += inv_n * weights[k] * candidate_values[k];
  return v;
}

// ---- qsim_target -----------------------------------------------------------

double qsim_target(const NetworkPair& pair, const ActionEncoder* encoder, const Transition& t,
                   double gamma, const QsimOptions& options) {
  if (t.terminal) return t.reward;
  if (!options.uniform && encoder == nullptr)
    throw std::invalid_argument("qsim_target: encoder required unless weighting is uniform");

  NoGradGuard no_grad;
  const VdModel& selector = options.double_q ? pair.main : pair.target;
  const JointAction u_star = igm_argmax(selector.agents, t.next_obs, t.next_avail);
  const NearGreedySet set = build_near_greedy(u_star, t.next_avail);
  const int n = static_cast<int>(u_star.size());

  SimilarityWeights weights;
  if (options.uniform) {
    weights.similarity.assign(set.entries.size(), 1.0);
    weights.weight.resize(set.entries.size());
    std::vector<int> per_agent_count(n, 0);
    for (const auto& e : set.entries) ++per_agent_count[e.agent];
    for (std::size_t k = 0; k < set.entries.size(); ++k)
      weights.weight[k] = 1.0 / static_cast<double>(per_agent_count[set.entries[k].agent]);
  } else {
    const std::vector<double> sims = candidate_similarities(*encoder, t.next_obs, t.next_state, set);
    weights = similarity_softmax(set, sims, options.kappa, options.threshold, options.top_n);
  }

  // all-action utilities from the target network, evaluated once per agent
  std::vector<Eigen::VectorXd> target_q(n);
  Eigen::VectorXd anchor_q(n);
  for (int i = 0; i < n; ++i) {
    target_q[i] = agent_q_values(pair.target.agents[i], t.next_obs[i], t.next_avail[i]);
    anchor_q[i] = target_q[i][u_star[i]];
  }

  std::vector<double> candidate_q(set.entries.size());
  for (std::size_t k = 0; k < set.entries.size(); ++k) {
    const auto& e = set.entries[k];
    Eigen::VectorXd q = anchor_q;
    q[e.agent] = target_q[e.agent][e.action];
    candidate_q[k] = pair.target.mixer.mix(q, t.next_state);
  }

  return t.reward + gamma * weighted_candidate_value(set, weights.weight, candidate_q);
}

Eigen::VectorXd qsim_targets(const NetworkPair& pair, const ActionEncoder* encoder,
                             std::span<const Transition> batch, double gamma,
                             const QsimOptions& options) {
  if (!options.uniform && encoder == nullptr)
    throw std::invalid_argument("qsim_targets: encoder required unless weighting is uniform");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const int n = static_cast<int>(pair.target.agents.size());
  const int actions = static_cast<int>(pair.target.agents[0].spec.output_width());

  Eigen::VectorXd targets(b);
  std::vector<Transition> live;
  std::vector<Eigen::Index> live_at;
  for (Eigen::Index k = 0; k < b; ++k) {
    targets[k] = batch[k].reward;
    if (!batch[k].terminal) {
      live.push_back(batch[k]);
      live_at.push_back(k);
    }
  }
  if (live.empty()) return targets;
  const Eigen::Index m = static_cast<Eigen::Index>(live.size());

  NoGradGuard no_grad;
  const std::vector<Eigen::MatrixXd> select_q =
      next_utilities(options.double_q ? pair.main : pair.target, live);
  const std::vector<JointAction> u_star = igm_argmax_rows(select_q, live);
  const std::vector<Eigen::MatrixXd> target_q =
      options.double_q ? next_utilities(pair.target, live) : select_q;

  // embeddings for every (agent, action) over the whole live batch
  std::vector<std::vector<Eigen::MatrixXd>> embeddings;  // [agent][action] -> {m, d}
  Eigen::MatrixXd states(m, live[0].next_state.size());
  for (Eigen::Index j = 0; j < m; ++j) states.row(j) = live[j].next_state;
  if (!options.uniform) {
    embeddings.resize(n);
    for (int i = 0; i < n; ++i) {
      Eigen::MatrixXd obs(m, live[0].next_obs[i].size());
      for (Eigen::Index j = 0; j < m; ++j) obs.row(j) = live[j].next_obs[i];
      embeddings[i].reserve(actions);
      for (int a = 0; a < actions; ++a) embeddings[i].push_back(encoder->encode_rows(obs, states, a));
    }
  }

  std::vector<NearGreedySet> sets(live.size());
  std::vector<Eigen::MatrixXd> q_sets(live.size());
  std::vector<SimilarityWeights> weights(live.size());
  for (Eigen::Index j = 0; j < m; ++j) {
    const NearGreedySet set = build_near_greedy(u_star[j], live[j].next_avail);
    const std::size_t entries = set.entries.size();

    if (options.uniform) {
      weights[j].similarity.assign(entries, 1.0);
      weights[j].weight.resize(entries);
      std::vector<int> per_agent(n, 0);
      for (const auto& e : set.entries) ++per_agent[e.agent];
      for (std::size_t k = 0; k < entries; ++k)
        weights[j].weight[k] = 1.0 / static_cast<double>(per_agent[set.entries[k].agent]);
    } else {
      std::vector<double> sims(entries);
      for (std::size_t k = 0; k < entries; ++k) {
        const auto& e = set.entries[k];
        if (e.action == set.anchor[e.agent]) {
          sims[k] = 1.0;
          continue;
        }
        const auto greedy_row = embeddings[e.agent][set.anchor[e.agent]].row(j);
        const auto entry_row = embeddings[e.agent][e.action].row(j);
        const double denom = greedy_row.norm() * entry_row.norm();
        sims[k] = denom > 0.0 ? greedy_row.dot(entry_row) / denom : 0.0;
      }
      weights[j] = similarity_softmax(set, sims, options.kappa, options.threshold, options.top_n);
    }

    Eigen::MatrixXd q_rows(entries, n);
    for (std::size_t k = 0; k < entries; ++k) {
      const JointAction c = set.joint_action(k);
      for (int i = 0; i < n; ++i) q_rows(static_cast<Eigen::Index>(k), i) = target_q[i](j, c[i]);
    }
    sets[j] = std::move(set);
    q_sets[j] = std::move(q_rows);
  }

  const std::vector<Eigen::VectorXd> mixed = pair.target.mixer.mix_rows(q_sets, states);
  for (Eigen::Index j = 0; j < m; ++j) {
    std::vector<double> candidate_q(mixed[j].data(), mixed[j].data() + mixed[j].size());
    targets[live_at[j]] += gamma * weighted_candidate_value(sets[j], weights[j].weight, candidate_q);
  }
  return targets;
}

// ---- kappa schedule ----------------------------------------------------------

double KappaSchedule::at(std::int64_t step) const {
  if (step < 0) throw std::invalid_argument("kappa schedule: negative step");
  switch (mode) {
    case Mode::Constant: return constant;
    case Mode::Linear: {
      const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
      return start + (end - start) * frac;
    }
  }
  throw std::logic_error("unknown kappa schedule mode");
}

KappaSchedule KappaSchedule::fixed(double value) {
  KappaSchedule s;
  s.mode = Mode::Constant;
  s.constant = value;
  return s;
}

KappaSchedule KappaSchedule::linear(double start, double end, std::int64_t horizon) {
  if (horizon <= 0) throw std::invalid_argument("kappa schedule horizon must be positive");
  KappaSchedule s;
  s.mode = Mode::Linear;
  s.start = start;
  s.end = end;
  s.horizon = horizon;
  return s;
}

}  // namespace qsim
