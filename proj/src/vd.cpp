#include "qsim/vd.hpp"

#include <algorithm>
#include <stdexcept>

namespace qsim {

AgentNet make_agent_net(Eigen::Index obs_width, int num_actions, Eigen::Index hidden, Rng& rng) {
  AgentNet net;
  net.spec.layer_widths = {obs_width, hidden, num_actions};
  net.spec.hidden_activation = Activation::ReLU;
  net.spec.final_activation = Activation::Identity;
  net.params = MlpParams::init(net.spec, rng);
  return net;
}

Eigen::VectorXd agent_q_values(const AgentNet& net, const Eigen::VectorXd& obs, const AvailMask& avail) {
  if (static_cast<Eigen::Index>(avail.size()) != net.spec.output_width())
    throw std::invalid_argument("availability mask width does not match action count");
  if (std::none_of(avail.begin(), avail.end(), [](std::uint8_t a) { return a != 0; }))
    throw std::invalid_argument("all actions masked");
  Eigen::VectorXd q = mlp_eval(net.spec, net.params, obs);
  for (Eigen::Index a = 0; a < q.size(); ++a)
    if (!avail[a]) q[a] = kUnavailableQ;
  return q;
}

int masked_argmax(const Eigen::VectorXd& q, const AvailMask& avail) {
  int best = -1;
  for (Eigen::Index a = 0; a < q.size(); ++a) {
    if (!avail[a]) continue;
    if (best < 0 || q[a] > q[best]) best = static_cast<int>(a);
  }
  if (best < 0) throw std::invalid_argument("all actions masked");
  return best;
}

JointAction igm_argmax(std::span<const AgentNet> agents, std::span<const Eigen::VectorXd> obs,
                       std::span<const AvailMask> avail) {
  if (agents.size() != obs.size() || agents.size() != avail.size())
    throw std::invalid_argument("igm_argmax: per-agent inputs have different lengths");
  JointAction u(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Eigen::VectorXd q = agent_q_values(agents[i], obs[i], avail[i]);
    u[i] = masked_argmax(q, avail[i]);
  }
  return u;
}

// ---- Mixer ---------------------------------------------------------------

namespace {

MlpSpec hyper_spec(Eigen::Index state_width, Eigen::Index hidden, Eigen::Index out) {
  MlpSpec s;
  s.layer_widths = {state_width, hidden, out};
  s.hidden_activation = Activation::ReLU;
  s.final_activation = Activation::Identity;
  return s;
}

}  // namespace

Mixer Mixer::vdn(int num_agents) {
  Mixer m;
  m.kind_ = MixerKind::VDN;
  m.num_agents_ = num_agents;
  return m;
}

Mixer Mixer::qmix(int num_agents, Eigen::Index state_width, const QmixArch& arch, Rng& rng) {
  if (num_agents <= 0) throw std::invalid_argument("mixer needs at least one agent");
  Mixer m;
  m.kind_ = MixerKind::QMIX;
  m.num_agents_ = num_agents;
  m.state_width_ = state_width;
  m.arch_ = arch;
  m.w1_spec_ = hyper_spec(state_width, arch.hyper_hidden, num_agents * arch.embed);
  m.b1_spec_ = hyper_spec(state_width, arch.hyper_hidden, arch.embed);
  m.w2_spec_ = hyper_spec(state_width, arch.hyper_hidden, arch.embed);
  m.b2_spec_ = hyper_spec(state_width, arch.hyper_hidden, 1);
  m.w1_ = MlpParams::init(m.w1_spec_, rng);
  m.b1_ = MlpParams::init(m.b1_spec_, rng);
  m.w2_ = MlpParams::init(m.w2_spec_, rng);
  m.b2_ = MlpParams::init(m.b2_spec_, rng);
  return m;
}

Mixer Mixer::qmix_identity(int num_agents, Eigen::Index state_width) {
  Mixer m;
  m.kind_ = MixerKind::QMIX;
  m.num_agents_ = num_agents;
  m.state_width_ = state_width;
  m.arch_ = QmixArch{num_agents, 4};
  m.w1_spec_ = hyper_spec(state_width, m.arch_.hyper_hidden, num_agents * num_agents);
  m.b1_spec_ = hyper_spec(state_width, m.arch_.hyper_hidden, num_agents);
  m.w2_spec_ = hyper_spec(state_width, m.arch_.hyper_hidden, num_agents);
  m.b2_spec_ = hyper_spec(state_width, m.arch_.hyper_hidden, 1);
  m.w1_ = MlpParams::zeros(m.w1_spec_, true);
  m.b1_ = MlpParams::zeros(m.b1_spec_, true);
  m.w2_ = MlpParams::zeros(m.w2_spec_, true);
  m.b2_ = MlpParams::zeros(m.b2_spec_, true);
  // constant outputs via the final-layer bias
  for (int i = 0; i < num_agents; ++i) m.w1_.biases.back().array()[i * num_agents + i] = 1.0;
  m.w2_.biases.back().array().setConstant(1.0);
  return m;
}

double Mixer::mix(const Eigen::VectorXd& agent_q, const Eigen::VectorXd& state) const {
  if (agent_q.size() != num_agents_) throw std::invalid_argument("mix: expected one utility per agent");
  if (kind_ == MixerKind::VDN) return agent_q.sum();
  if (state.size() != state_width_) throw std::invalid_argument("mix: state width mismatch");

  NoGradGuard no_grad;
  const Eigen::Index embed = arch_.embed;
  const Eigen::VectorXd w1 = mlp_eval(w1_spec_, w1_, state).cwiseAbs();
  const Eigen::VectorXd b1 = mlp_eval(b1_spec_, b1_, state);
  const Eigen::VectorXd w2 = mlp_eval(w2_spec_, w2_, state).cwiseAbs();
  const double b2 = mlp_eval(b2_spec_, b2_, state)[0];

  Eigen::Map<const RowMatrixXd> w1m(w1.data(), num_agents_, embed);
  Eigen::VectorXd hidden = (w1m.transpose() * agent_q + b1);
  for (Eigen::Index j = 0; j < hidden.size(); ++j)
    hidden[j] = hidden[j] > 0.0 ? hidden[j] : std::expm1(hidden[j]);
  return hidden.dot(w2) + b2;
}

Tensor Mixer::mix_batch(const Tensor& agent_q, const Tensor& states) const {
  if (agent_q.cols() != num_agents_) throw std::invalid_argument("mix_batch: expected one utility per agent");
  if (kind_ == MixerKind::VDN) return sum_rows(agent_q);
  if (states.cols() != state_width_) throw std::invalid_argument("mix_batch: state width mismatch");
  if (states.rows() != agent_q.rows()) throw std::invalid_argument("mix_batch: batch size mismatch");

  const Eigen::Index batch = agent_q.rows();
  const Eigen::Index embed = arch_.embed;
  const Tensor w1_flat = abs(mlp_forward(w1_spec_, w1_, states));  // {B, N*E}
  const Tensor b1 = mlp_forward(b1_spec_, b1_, states);            // {B, E}
  const Tensor w2_flat = abs(mlp_forward(w2_spec_, w2_, states));  // {B, E}
  const Tensor b2 = mlp_forward(b2_spec_, b2_, states);            // {B, 1}

  std::vector<Tensor> outputs;
  outputs.reserve(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    Tensor w1_i = reshape(row(w1_flat, i), {num_agents_, embed});
    Tensor hidden = elu(add(matmul(row(agent_q, i), w1_i), row(b1, i)));  // {1, E}
    Tensor w2_i = reshape(row(w2_flat, i), {embed, 1});
    outputs.push_back(reshape(add(matmul(hidden, w2_i), row(b2, i)), {}));
  }
  return stack_scalars(outputs);
}

std::vector<Eigen::VectorXd> Mixer::mix_rows(std::span<const Eigen::MatrixXd> q_sets,
                                             const Eigen::MatrixXd& states) const {
  if (static_cast<Eigen::Index>(q_sets.size()) != states.rows())
    throw std::invalid_argument("mix_rows: one candidate set per state required");
  std::vector<Eigen::VectorXd> out(q_sets.size());
  if (kind_ == MixerKind::VDN) {
    for (std::size_t k = 0; k < q_sets.size(); ++k) out[k] = q_sets[k].rowwise().sum();
    return out;
  }
  if (states.cols() != state_width_) throw std::invalid_argument("mix_rows: state width mismatch");

  NoGradGuard no_grad;
  const Eigen::Index embed = arch_.embed;
  const Tensor state_t = Tensor::from_matrix(states);
  const RowMatrixXd w1_all = mlp_forward(w1_spec_, w1_, state_t).matrix().cwiseAbs();
  const RowMatrixXd b1_all = mlp_forward(b1_spec_, b1_, state_t).matrix();
  const RowMatrixXd w2_all = mlp_forward(w2_spec_, w2_, state_t).matrix().cwiseAbs();
  const RowMatrixXd b2_all = mlp_forward(b2_spec_, b2_, state_t).matrix();

  for (std::size_t k = 0; k < q_sets.size(); ++k) {
    const Eigen::Index row = static_cast<Eigen::Index>(k);
    if (q_sets[k].cols() != num_agents_)
      throw std::invalid_argument("mix_rows: expected one utility per agent");
    Eigen::Map<const RowMatrixXd> w1(w1_all.row(row).data(), num_agents_, embed);
    Eigen::MatrixXd hidden = q_sets[k] * w1;  // {C, E}
    hidden.rowwise() += b1_all.row(row);
    hidden = hidden.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    out[k] = hidden * w2_all.row(row).transpose();
    out[k].array() += b2_all(row, 0);
  }
  return out;
}

std::vector<Tensor> Mixer::parameters() const {
  if (kind_ == MixerKind::VDN) return {};
  std::vector<Tensor> out;
  for (const MlpParams* p : {&w1_, &b1_, &w2_, &b2_}) {
    auto t = p->all();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

Mixer Mixer::clone(bool requires_grad) const {
  Mixer m = *this;
  if (kind_ == MixerKind::QMIX) {
    m.w1_ = w1_.clone(requires_grad);
    m.b1_ = b1_.clone(requires_grad);
    m.w2_ = w2_.clone(requires_grad);
    m.b2_ = b2_.clone(requires_grad);
  }
  return m;
}

void Mixer::copy_values_from(const Mixer& other) {
  if (kind_ != other.kind_) throw std::invalid_argument("mixer kind mismatch");
  if (kind_ == MixerKind::QMIX) {
    w1_.copy_values_from(other.w1_);
    b1_.copy_values_from(other.b1_);
    w2_.copy_values_from(other.w2_);
    b2_.copy_values_from(other.b2_);
  }
}

void Mixer::lerp_values_from(const Mixer& other, double tau) {
  if (kind_ != other.kind_) throw std::invalid_argument("mixer kind mismatch");
  if (kind_ == MixerKind::QMIX) {
    w1_.lerp_values_from(other.w1_, tau);
    b1_.lerp_values_from(other.b1_, tau);
    w2_.lerp_values_from(other.w2_, tau);
    b2_.lerp_values_from(other.b2_, tau);
  }
}

// ---- VdModel / NetworkPair -----------------------------------------------

std::vector<Tensor> VdModel::parameters() const {
  std::vector<Tensor> out;
  for (const AgentNet& a : agents) {
    auto t = a.params.all();
    out.insert(out.end(), t.begin(), t.end());
  }
  auto t = mixer.parameters();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

VdModel VdModel::clone(bool requires_grad) const {
  VdModel m;
  m.agents.reserve(agents.size());
  for (const AgentNet& a : agents) m.agents.push_back({a.spec, a.params.clone(requires_grad)});
  m.mixer = mixer.clone(requires_grad);
  return m;
}

void VdModel::copy_values_from(const VdModel& other) {
  if (agents.size() != other.agents.size()) throw std::invalid_argument("agent count mismatch");
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i].params.copy_values_from(other.agents[i].params);
  mixer.copy_values_from(other.mixer);
}

void VdModel::lerp_values_from(const VdModel& other, double tau) {
  if (agents.size() != other.agents.size()) throw std::invalid_argument("agent count mismatch");
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i].params.lerp_values_from(other.agents[i].params, tau);
  mixer.lerp_values_from(other.mixer, tau);
}

NetworkPair NetworkPair::make(VdModel main_model) {
  NetworkPair pair;
  pair.target = main_model.clone(/*requires_grad=*/false);
  pair.main = std::move(main_model);
  return pair;
}

void update_target(NetworkPair& pair, TargetUpdateMode mode, double tau) {
  switch (mode) {
    case TargetUpdateMode::Hard: pair.target.copy_values_from(pair.main); break;
    case TargetUpdateMode::Soft: pair.target.lerp_values_from(pair.main, tau); break;
  }
}

double greedy_td_target(const NetworkPair& pair, const Transition& t, double gamma, bool double_q) {
  if (t.terminal) return t.reward;
  NoGradGuard no_grad;
  const VdModel& selector = double_q ? pair.main : pair.target;
  const JointAction u = igm_argmax(selector.agents, t.next_obs, t.next_avail);
  Eigen::VectorXd q(static_cast<Eigen::Index>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i)
    q[static_cast<Eigen::Index>(i)] =
        agent_q_values(pair.target.agents[i], t.next_obs[i], t.next_avail[i])[u[i]];
  return t.reward + gamma * pair.target.mixer.mix(q, t.next_state);
}

std::vector<Eigen::MatrixXd> next_utilities(const VdModel& model, std::span<const Transition> batch) {
  NoGradGuard no_grad;
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  std::vector<Eigen::MatrixXd> utilities;
  utilities.reserve(model.agents.size());
  for (std::size_t i = 0; i < model.agents.size(); ++i) {
    Eigen::MatrixXd obs(b, batch[0].next_obs[i].size());
    for (Eigen::Index k = 0; k < b; ++k) obs.row(k) = batch[k].next_obs[i];
    Eigen::MatrixXd q =
        mlp_forward(model.agents[i].spec, model.agents[i].params, Tensor::from_matrix(obs)).matrix();
    for (Eigen::Index k = 0; k < b; ++k)
      for (Eigen::Index a = 0; a < q.cols(); ++a)
        if (!batch[k].next_avail[i][a]) q(k, a) = kUnavailableQ;
    utilities.push_back(std::move(q));
  }
  return utilities;
}

std::vector<JointAction> igm_argmax_rows(std::span<const Eigen::MatrixXd> utilities,
                                         std::span<const Transition> batch) {
  std::vector<JointAction> actions(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    JointAction u(utilities.size());
    for (std::size_t i = 0; i < utilities.size(); ++i)
      u[i] = masked_argmax(utilities[i].row(static_cast<Eigen::Index>(k)), batch[k].next_avail[i]);
    actions[k] = u;
  }
  return actions;
}

Eigen::VectorXd greedy_targets(const NetworkPair& pair, std::span<const Transition> batch,
                               double gamma, bool double_q) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const int n = static_cast<int>(pair.target.agents.size());
  Eigen::VectorXd targets(b);
  std::vector<std::size_t> live;
  std::vector<Transition> live_batch;
  for (Eigen::Index k = 0; k < b; ++k) {
    targets[k] = batch[k].reward;
    if (!batch[k].terminal) {
      live.push_back(static_cast<std::size_t>(k));
      live_batch.push_back(batch[k]);
    }
  }
  if (live.empty()) return targets;

  const std::vector<Eigen::MatrixXd> select_q =
      next_utilities(double_q ? pair.main : pair.target, live_batch);
  const std::vector<JointAction> u_star = igm_argmax_rows(select_q, live_batch);
  const std::vector<Eigen::MatrixXd> target_q =
      double_q ? next_utilities(pair.target, live_batch) : select_q;

  Eigen::MatrixXd states(static_cast<Eigen::Index>(live.size()), batch[0].next_state.size());
  std::vector<Eigen::MatrixXd> q_sets(live.size());
  for (std::size_t j = 0; j < live.size(); ++j) {
    states.row(static_cast<Eigen::Index>(j)) = live_batch[j].next_state;
    Eigen::MatrixXd q_row(1, n);
    for (int i = 0; i < n; ++i) q_row(0, i) = target_q[i](static_cast<Eigen::Index>(j), u_star[j][i]);
    q_sets[j] = std::move(q_row);
  }
  const std::vector<Eigen::VectorXd> mixed = pair.target.mixer.mix_rows(q_sets, states);
  for (std::size_t j = 0; j < live.size(); ++j)
    targets[static_cast<Eigen::Index>(live[j])] += gamma * mixed[j][0];
  return targets;
}

Tensor qtot_batch(const VdModel& model, std::span<const Transition> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const std::size_t n = model.agents.size();

  std::vector<Tensor> per_agent_q;
  per_agent_q.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixXd obs(b, batch[0].obs[i].size());
    std::vector<Eigen::Index> taken(b);
    for (Eigen::Index k = 0; k < b; ++k) {
      obs.row(k) = batch[k].obs[i];
      taken[k] = batch[k].actions[i];
    }
    Tensor q_all = mlp_forward(model.agents[i].spec, model.agents[i].params, Tensor::from_matrix(obs));
    per_agent_q.push_back(reshape(select_columns(q_all, taken), {b, 1}));
  }
  Tensor q = hcat(per_agent_q);  // {B, N}

  Eigen::MatrixXd states(b, batch[0].state.size());
  for (Eigen::Index k = 0; k < b; ++k) states.row(k) = batch[k].state;
  return model.mixer.mix_batch(q, Tensor::from_matrix(states));
}

Tensor td_loss(const VdModel& model, std::span<const Transition> batch, const Eigen::VectorXd& targets) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (targets.size() != static_cast<Eigen::Index>(batch.size()))
    throw std::invalid_argument("one target per transition required");
  return mse(qtot_batch(model, batch), Tensor::from_vector(targets));
}

}  // namespace qsim
