#include "qsim/trainer.hpp"

#include "qsim/analysis.hpp"
#include "qsim/threading.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>

namespace qsim {

namespace fs = std::filesystem;

// ---- ReplayBuffer ----------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::int64_t capacity) : capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
}

void ReplayBuffer::add(Episode episode) {
  if (episode.steps.empty()) throw std::invalid_argument("cannot store an empty episode");
  episodes_.push_back(std::move(episode));
  if (static_cast<std::int64_t>(episodes_.size()) > capacity_) episodes_.pop_front();
}

std::vector<std::int64_t> ReplayBuffer::sample_indices(std::int64_t count, Rng& rng) const {
  if (count > size()) throw std::invalid_argument("not enough episodes in the buffer");
  std::vector<std::int64_t> order(episodes_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t j = i + rng.uniform_int(static_cast<std::int64_t>(order.size()) - i);
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  return order;
}

// ---- RewardStandardizer ----------------------------------------------------

void RewardStandardizer::update(double reward) {
  if (!enabled_) return;
  ++count_;
  const double delta = reward - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (reward - mean_);
}

double RewardStandardizer::transform(double reward) const {
  if (!enabled_ || count_ < 2) return reward;
  const double stddev = std::sqrt(m2_ / static_cast<double>(count_));
  return (reward - mean_) / std::max(stddev, 1e-6);
}

// ---- TrainState -------------------------------------------------------------

TrainState TrainState::make(const ExperimentConfig& config, std::uint64_t seed) {
  auto env = config.make_env();
  const int n = env->num_agents();

  Rng init_theta = Rng::substream(seed, "init_theta");
  VdModel model;
  model.agents.reserve(n);
  for (int i = 0; i < n; ++i)
    model.agents.push_back(make_agent_net(env->obs_width(), env->num_actions(), config.agent_hidden,
                                          init_theta));
  model.mixer = config.mixer == MixerKind::VDN
                    ? Mixer::vdn(n)
                    : Mixer::qmix(n, env->state_width(), config.mixer_arch, init_theta);

  TrainState st{
      .config = config,
      .env = std::move(env),
      .pair = NetworkPair::make(std::move(model)),
      .encoder = std::nullopt,
      .opt_theta = std::nullopt,
      .opt_phi = std::nullopt,
      .buffer = ReplayBuffer(config.buffer_episodes),
      .reward_std = RewardStandardizer(config.reward_standardization),
      .env_steps = 0,
      .train_steps = 0,
      .rng_env = Rng::substream(seed, "env"),
      .rng_explore = Rng::substream(seed, "explore"),
      .rng_sample = Rng::substream(seed, "sample"),
      .rng_eval = Rng::substream(seed, "eval"),
  };

  if (config.uses_encoder()) {
    Rng init_phi = Rng::substream(seed, "init_phi");
    st.encoder = ActionEncoder::init(n, st.env->obs_width(), st.env->state_width(),
                                     st.env->num_actions(), config.encoder_arch, init_phi);
    st.opt_phi.emplace(st.encoder->parameters(),
                       OptimizerConfig{OptimizerKind::Adam, config.learning_rate, 0.9, 0.999, 1e-8});
  }
  st.opt_theta.emplace(st.pair.main.parameters(),
                       OptimizerConfig{OptimizerKind::Adam, config.learning_rate, 0.9, 0.999, 1e-8});
  return st;
}

// ---- experience collection ---------------------------------------------------

namespace {

int epsilon_greedy_action(const AgentNet& net, const Eigen::VectorXd& obs, const AvailMask& avail,
                          double epsilon, Rng& rng) {
  const double coin = rng.uniform();
  if (coin < epsilon) {
    std::vector<int> candidates;
    for (int a = 0; a < static_cast<int>(avail.size()); ++a)
      if (avail[a]) candidates.push_back(a);
    if (candidates.empty()) throw std::invalid_argument("all actions masked");
    return candidates[rng.uniform_int(static_cast<std::int64_t>(candidates.size()))];
  }
  return masked_argmax(agent_q_values(net, obs, avail), avail);
}

}  // namespace

Episode collect_episode(TrainState& state, double epsilon, bool store) {
  Env& env = *state.env;
  ResetResult cur = env.reset(state.rng_env.next_u64());
  const int n = env.num_agents();

  Episode episode;
  for (;;) {
    EpisodeStep step;
    step.state = cur.state;
    step.obs = cur.obs;
    step.avail = cur.avail;
    step.actions.resize(n);
    for (int i = 0; i < n; ++i)
      step.actions[i] = epsilon_greedy_action(state.pair.main.agents[i], cur.obs[i], cur.avail[i],
                                              epsilon, state.rng_explore);
    EnvStep out = env.step(step.actions);
    step.reward = out.reward;
    episode.steps.push_back(std::move(step));
    if (store) {
      ++state.env_steps;
      state.reward_std.update(out.reward);
    }
    if (out.terminal) {
      episode.terminal = true;
      episode.final_state = out.next_state;
      episode.final_obs = out.next_obs;
      episode.final_avail = out.next_avail;
      break;
    }
    cur.state = out.next_state;
    cur.obs = out.next_obs;
    cur.avail = out.next_avail;
  }
  if (store) state.buffer.add(episode);
  return episode;
}

// ---- training ---------------------------------------------------------------

namespace {

std::vector<Transition> flatten_batch(const TrainState& state, const std::vector<std::int64_t>& episodes) {
  std::vector<Transition> batch;
  for (std::int64_t e : episodes) {
    const Episode& ep = state.buffer.at(e);
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      Transition tr;
      tr.state = ep.steps[t].state;
      tr.obs = ep.steps[t].obs;
      tr.avail = ep.steps[t].avail;
      tr.actions = ep.steps[t].actions;
      tr.reward = state.reward_std.transform(ep.steps[t].reward);
      const bool last = t + 1 == ep.steps.size();
      tr.terminal = last && ep.terminal;
      tr.next_state = last ? ep.final_state : ep.steps[t + 1].state;
      tr.next_obs = last ? ep.final_obs : ep.steps[t + 1].obs;
      tr.next_avail = last ? ep.final_avail : ep.steps[t + 1].avail;
      batch.push_back(std::move(tr));
    }
  }
  return batch;
}

QsimOptions qsim_options(const TrainState& state) {
  QsimOptions opt;
  opt.kappa = state.config.algo == Algo::QsimMean ? 0.0 : state.config.kappa.at(state.env_steps);
  opt.threshold = state.config.threshold;
  opt.top_n = state.config.top_n;
  opt.uniform = state.config.algo == Algo::QsimMean;
  opt.double_q = state.config.double_q;
  return opt;
}

}  // namespace

TrainMetrics train_step(TrainState& state) {
  const ExperimentConfig& cfg = state.config;
  if (state.buffer.size() < cfg.batch_size)
    throw std::runtime_error("train_step: buffer holds fewer episodes than the batch size");

  const std::vector<std::int64_t> episodes = state.buffer.sample_indices(cfg.batch_size, state.rng_sample);
  const std::vector<Transition> batch = flatten_batch(state, episodes);

  TrainMetrics metrics;
  metrics.ae_loss = std::numeric_limits<double>::quiet_NaN();

  // (1) representation update
  if (state.encoder) {
    Tensor ae = ae_loss(*state.encoder, batch);
    state.opt_phi->zero_grad();
    backward(ae);
    state.opt_phi->step();
    metrics.ae_loss = ae.value();
  }

  // (2) targets, detached from the tape
  Eigen::VectorXd targets;
  if (cfg.algo == Algo::GreedyBaseline) {
    targets = greedy_targets(state.pair, batch, cfg.gamma, cfg.double_q);
  } else {
    const ActionEncoder* enc = state.encoder ? &*state.encoder : nullptr;
    targets = qsim_targets(state.pair, enc, batch, cfg.gamma, qsim_options(state));
  }

  // (3) TD update
  Tensor qtot = qtot_batch(state.pair.main, batch);
  Tensor loss = mse(qtot, Tensor::from_vector(targets));
  state.opt_theta->zero_grad();
  backward(loss);
  state.opt_theta->step();
  ++state.train_steps;

  metrics.td_loss = loss.value();
  metrics.mean_target = targets.mean();
  metrics.mean_qtot = qtot.array().mean();
  return metrics;
}

// ---- evaluation ---------------------------------------------------------------

EvalResult evaluate(TrainState& state, std::int64_t episodes) {
  Env& env = *state.env;
  const int n = env.num_agents();
  EvalResult result;
  std::vector<double> deltas;
  double total_return = 0.0;

  NoGradGuard no_grad;
  for (std::int64_t e = 0; e < episodes; ++e) {
    ResetResult cur = env.reset(state.rng_eval.next_u64());
    std::vector<double> rewards;
    double q_hat = 0.0;
    bool done = false;
    for (std::int64_t t = 0; !done; ++t) {
      const JointAction actions = igm_argmax(state.pair.main.agents, cur.obs, cur.avail);
      if (t == 0) {
        Eigen::VectorXd q(n);
        for (int i = 0; i < n; ++i)
          q[i] = agent_q_values(state.pair.main.agents[i], cur.obs[i], cur.avail[i])[actions[i]];
        q_hat = state.pair.main.mixer.mix(q, cur.state);
        result.first_greedy_action = actions;
      }
      EnvStep out = env.step(actions);
      rewards.push_back(state.reward_std.transform(out.reward));
      total_return += out.reward;
      done = out.terminal;
      cur.state = out.next_state;
      cur.obs = out.next_obs;
      cur.avail = out.next_avail;
    }
    deltas.push_back(delta_q(q_hat, rewards, state.config.gamma));
  }

  result.mean_return = total_return / static_cast<double>(episodes);
  std::sort(deltas.begin(), deltas.end());
  const std::size_t m = deltas.size();
  result.median_delta_q = m % 2 ? deltas[m / 2] : 0.5 * (deltas[m / 2 - 1] + deltas[m / 2]);
  return result;
}

// ---- full runs -------------------------------------------------------------------

namespace {

void export_embeddings(std::ofstream& out, TrainState& state, std::int64_t step) {
  ResetResult cur = state.env->reset(state.rng_eval.next_u64());
  char buf[64];
  for (int i = 0; i < state.env->num_agents(); ++i) {
    for (int a = 0; a < state.env->num_actions(); ++a) {
      const Eigen::VectorXd f = state.encoder->encode(cur.obs[i], cur.state, a);
      out << step << ',' << i << ',' << a;
      for (Eigen::Index k = 0; k < f.size(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.10g", f[k]);
        out << buf;
      }
      out << '\n';
    }
  }
}

std::vector<NamedTensor> named_parameters(const TrainState& state) {
  std::vector<NamedTensor> named;
  auto add_params = [&named](const std::string& prefix, const MlpParams& p) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      named.push_back({prefix + ".layer" + std::to_string(l) + ".weight", p.weights[l]});
      named.push_back({prefix + ".layer" + std::to_string(l) + ".bias", p.biases[l]});
    }
  };
  for (std::size_t i = 0; i < state.pair.main.agents.size(); ++i)
    add_params("main.agent" + std::to_string(i), state.pair.main.agents[i].params);
  const std::vector<Tensor> mixer_params = state.pair.main.mixer.parameters();
  for (std::size_t i = 0; i < mixer_params.size(); ++i)
    named.push_back({"main.mixer.param" + std::to_string(i), mixer_params[i]});
  if (state.encoder) {
    const std::vector<Tensor> enc = state.encoder->parameters();
    for (std::size_t i = 0; i < enc.size(); ++i)
      named.push_back({"encoder.param" + std::to_string(i), enc[i]});
  }
  return named;
}

}  // namespace

RunResult run_single_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const fs::path run_dir = fs::path(config.output_dir) / ("seed_" + std::to_string(seed));
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw std::runtime_error("cannot create run directory " + run_dir.string() + ": " + ec.message());

  TrainState state = TrainState::make(config, seed);
  MetricsWriter metrics(run_dir / "metrics.csv", config.variant_name(), seed);

  std::ofstream embeddings_csv;
  const bool dump_embeddings = config.export_embeddings && state.encoder.has_value();
  if (dump_embeddings) {
    embeddings_csv.open(run_dir / "embeddings.csv");
    embeddings_csv << "step,agent,action";
    for (Eigen::Index k = 0; k < config.encoder_arch.embed; ++k) embeddings_csv << ",e" << k;
    embeddings_csv << '\n';
  }

  RunResult result;
  result.run_dir = run_dir.string();

  TrainMetrics accum;
  std::int64_t accum_count = 0;
  auto emit_row = [&](std::int64_t boundary) {
    const EvalResult ev = evaluate(state, config.eval_episodes);
    MetricsWriter::Row row;
    row.step = boundary;
    row.eval_return = ev.mean_return;
    const double count = accum_count > 0 ? static_cast<double>(accum_count) : 1.0;
    row.td_loss = accum.td_loss / count;
    row.ae_loss = state.encoder ? accum.ae_loss / count : std::numeric_limits<double>::quiet_NaN();
    row.mean_target = accum.mean_target / count;
    row.mean_qtot = accum.mean_qtot / count;
    row.delta_q = ev.median_delta_q;
    row.epsilon = config.epsilon.at(boundary);
    row.kappa = config.algo == Algo::QsimMean ? 0.0 : config.kappa.at(boundary);
    metrics.append(row);
    accum = TrainMetrics{};
    accum_count = 0;
    if (dump_embeddings) export_embeddings(embeddings_csv, state, boundary);
    result.final_eval_return = ev.mean_return;
    result.final_greedy_action = ev.first_greedy_action;
  };

  std::int64_t next_boundary = 0;
  if (config.step_max > 0) {
    emit_row(0);
    next_boundary = config.eval_interval;
  }

  while (state.env_steps < config.step_max) {
    collect_episode(state, config.epsilon.at(state.env_steps), /*store=*/true);
    if (state.buffer.size() >= config.batch_size) {
      const TrainMetrics m = train_step(state);
      accum.td_loss += m.td_loss;
      accum.ae_loss += std::isnan(m.ae_loss) ? 0.0 : m.ae_loss;
      accum.mean_target += m.mean_target;
      accum.mean_qtot += m.mean_qtot;
      ++accum_count;
      if (config.target_update.mode == TargetUpdateMode::Soft) {
        update_target(state.pair, TargetUpdateMode::Soft, config.target_update.tau);
      } else if (state.train_steps % config.target_update.interval == 0) {
        update_target(state.pair, TargetUpdateMode::Hard);
      }
    }
    while (next_boundary <= state.env_steps && next_boundary <= config.step_max) {
      emit_row(next_boundary);
      next_boundary += config.eval_interval;
    }
  }

  metrics.flush();
  write_manifest(run_dir.string(), config.echo_json(), config.config_hash(), seed);
  save_checkpoint((run_dir / "checkpoint.bin").string(), named_parameters(state));
  return result;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config) {
  std::vector<RunResult> results(config.seeds.size());
  parallel_for(config.seeds.size(), 0,
               [&](std::size_t i) { results[i] = run_single_seed(config, config.seeds[i]); });
  return results;
}

}  // namespace qsim
