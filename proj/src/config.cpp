#include "qsim/config.hpp"

#include "qsim/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qsim {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw std::invalid_argument("config error at `" + path + "`: " + message);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
    std::string best;
    std::size_t best_dist = 4;  // suggest only close misses
    for (const std::string& candidate : allowed) {
      const std::size_t d = edit_distance(key, candidate);
      if (d < best_dist) {
        best_dist = d;
        best = candidate;
      }
    }
    std::string message = "unknown key '" + key + "'";
    if (!best.empty()) message += "; did you mean '" + best + "'?";
    fail(path, message);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

double require_in(double v, double lo, double hi, bool lo_open, const std::string& path) {
  const bool ok = (lo_open ? v > lo : v >= lo) && v <= hi;
  if (!ok) {
    std::ostringstream os;
    os << "value " << v << " outside " << (lo_open ? "(" : "[") << lo << ", " << hi << "]";
    fail(path, os.str());
  }
  return v;
}

std::int64_t require_positive(std::int64_t v, const std::string& path) {
  if (v <= 0) fail(path, "must be positive, got " + std::to_string(v));
  return v;
}

}  // namespace

std::string algo_name(Algo algo) {
  switch (algo) {
    case Algo::GreedyBaseline: return "greedy";
    case Algo::Qsim: return "qsim";
    case Algo::QsimMean: return "qsim_mean";
    case Algo::QsimTopN: return "qsim_topn";
    case Algo::QsimNoState: return "qsim_nostate";
  }
  throw std::logic_error("unknown algo");
}

double EpsilonScheduleConfig::at(std::int64_t step) const {
  if (step < 0) throw std::invalid_argument("epsilon schedule: negative step");
  if (step >= anneal_steps) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(anneal_steps);
  return start + (end - start) * frac;
}

std::unique_ptr<Env> ExperimentConfig::make_env() const {
  switch (env) {
    case EnvKind::Climbing: return make_climbing();
    case EnvKind::Gridworld: return make_gridworld(gridworld);
  }
  throw std::logic_error("unknown env");
}

bool ExperimentConfig::uses_encoder() const {
  return algo == Algo::Qsim || algo == Algo::QsimMean || algo == Algo::QsimTopN ||
         algo == Algo::QsimNoState;
}

std::string ExperimentConfig::variant_name() const { return algo_name(algo); }

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

  check_keys(j, {"env", "algo", "top_n", "mixer", "kappa", "threshold", "gamma", "lr",
                 "buffer_episodes", "batch_size", "epsilon", "target_update", "double_q",
                 "reward_standardization", "step_max", "eval_interval", "eval_episodes",
                 "agent_hidden", "mixer_embed", "hyper_hidden", "encoder_hidden", "encoder_embed",
                 "seeds", "output_dir", "export_embeddings"},
             "<root>");

  ExperimentConfig c;

  // environment (string shorthand or object with parameters)
  if (j.contains("env")) {
    const json& e = j.at("env");
    std::string name;
    if (e.is_string()) {
      name = e.get<std::string>();
    } else if (e.is_object()) {
      check_keys(e, {"name", "width", "height", "agents", "horizon", "goals"}, "env");
      if (!e.contains("name")) fail("env.name", "missing required field");
      name = e.at("name").get<std::string>();
    } else {
      fail("env", "expected a string or an object");
    }
    if (name == "climbing") {
      c.env = EnvKind::Climbing;
    } else if (name == "gridworld") {
      c.env = EnvKind::Gridworld;
    } else {
      fail("env", "unknown environment '" + name + "' (expected climbing or gridworld)");
    }
    if (e.is_object()) {
      c.gridworld.width = static_cast<int>(get_or<std::int64_t>(e, "width", c.gridworld.width));
      c.gridworld.height = static_cast<int>(get_or<std::int64_t>(e, "height", c.gridworld.height));
      c.gridworld.num_agents = static_cast<int>(get_or<std::int64_t>(e, "agents", c.gridworld.num_agents));
      c.gridworld.horizon = static_cast<int>(get_or<std::int64_t>(e, "horizon", c.gridworld.horizon));
      if (e.contains("goals")) {
        for (const json& g : e.at("goals")) {
          if (!g.is_array() || g.size() != 2) fail("env.goals", "each goal must be an [x, y] pair");
          c.gridworld.goals.emplace_back(g[0].get<int>(), g[1].get<int>());
        }
      }
      if (c.env == EnvKind::Gridworld) {
        try {
          c.gridworld.validate();
          (void)c.gridworld.resolved_goals();
        } catch (const std::exception& ex) {
          fail("env", ex.what());
        }
      }
    }
  }

  if (j.contains("algo")) {
    const std::string a = j.at("algo").get<std::string>();
    if (a == "greedy") c.algo = Algo::GreedyBaseline;
    else if (a == "qsim") c.algo = Algo::Qsim;
    else if (a == "qsim_mean") c.algo = Algo::QsimMean;
    else if (a == "qsim_topn") c.algo = Algo::QsimTopN;
    else if (a == "qsim_nostate") c.algo = Algo::QsimNoState;
    else fail("algo", "unknown variant '" + a + "'");
  }
  if (j.contains("top_n")) {
    c.top_n = static_cast<int>(require_positive(j.at("top_n").get<std::int64_t>(), "top_n"));
  }
  if (c.algo == Algo::QsimTopN && !c.top_n) fail("top_n", "required for the qsim_topn variant");

  if (j.contains("mixer")) {
    const std::string m = j.at("mixer").get<std::string>();
    if (m == "vdn") c.mixer = MixerKind::VDN;
    else if (m == "qmix") c.mixer = MixerKind::QMIX;
    else fail("mixer", "unknown mixer '" + m + "' (expected vdn or qmix)");
  }

  if (j.contains("kappa")) {
    const json& k = j.at("kappa");
    if (k.is_number()) {
      c.kappa = KappaSchedule::fixed(require_in(k.get<double>(), 0.0, 1e12, false, "kappa"));
    } else if (k.is_object()) {
      check_keys(k, {"mode", "value", "start", "end", "horizon"}, "kappa");
      const std::string mode = get_or<std::string>(k, "mode", "constant");
      if (mode == "constant") {
        c.kappa = KappaSchedule::fixed(require_in(get_or<double>(k, "value", 3.0), 0.0, 1e12, false, "kappa.value"));
      } else if (mode == "linear") {
        const double start = require_in(get_or<double>(k, "start", 1.0), 0.0, 1e12, false, "kappa.start");
        const double end = require_in(get_or<double>(k, "end", 10.0), 0.0, 1e12, false, "kappa.end");
        const std::int64_t horizon = require_positive(get_or<std::int64_t>(k, "horizon", 50'000), "kappa.horizon");
        c.kappa = KappaSchedule::linear(start, end, horizon);
      } else {
        fail("kappa.mode", "expected constant or linear");
      }
    } else {
      fail("kappa", "expected a number or an object");
    }
  }

  c.threshold = get_or<double>(j, "threshold", 0.0);
  c.gamma = require_in(get_or<double>(j, "gamma", 0.99), 0.0, 1.0, true, "gamma");
  c.learning_rate = require_in(get_or<double>(j, "lr", 0.0005), 0.0, 1.0, true, "lr");
  c.buffer_episodes = require_positive(get_or<std::int64_t>(j, "buffer_episodes", 5000), "buffer_episodes");
  c.batch_size = require_positive(get_or<std::int64_t>(j, "batch_size", 32), "batch_size");
  if (c.batch_size > c.buffer_episodes) fail("batch_size", "cannot exceed buffer_episodes");

  if (j.contains("epsilon")) {
    const json& e = j.at("epsilon");
    check_keys(e, {"start", "end", "anneal_steps"}, "epsilon");
    c.epsilon.start = require_in(get_or<double>(e, "start", 1.0), 0.0, 1.0, false, "epsilon.start");
    c.epsilon.end = require_in(get_or<double>(e, "end", 0.05), 0.0, 1.0, false, "epsilon.end");
    c.epsilon.anneal_steps = require_positive(get_or<std::int64_t>(e, "anneal_steps", 50'000),
                                              "epsilon.anneal_steps");
  }

  // environment-dependent defaults (soft updates and reward standardization
  // for the matrix game, hard updates and raw rewards for the gridworld)
  if (c.env == EnvKind::Climbing) {
    c.target_update = {TargetUpdateMode::Soft, 0.01, 200};
    c.reward_standardization = true;
  } else {
    c.target_update = {TargetUpdateMode::Hard, 0.01, 200};
    c.reward_standardization = false;
  }
  if (j.contains("target_update")) {
    const json& t = j.at("target_update");
    check_keys(t, {"mode", "tau", "interval"}, "target_update");
    const std::string mode = get_or<std::string>(t, "mode", "soft");
    if (mode == "soft") c.target_update.mode = TargetUpdateMode::Soft;
    else if (mode == "hard") c.target_update.mode = TargetUpdateMode::Hard;
    else fail("target_update.mode", "expected soft or hard");
    c.target_update.tau = require_in(get_or<double>(t, "tau", 0.01), 0.0, 1.0, true, "target_update.tau");
    c.target_update.interval = require_positive(get_or<std::int64_t>(t, "interval", 200),
                                                "target_update.interval");
  }
  if (j.contains("double_q")) c.double_q = j.at("double_q").get<bool>();
  if (j.contains("reward_standardization"))
    c.reward_standardization = j.at("reward_standardization").get<bool>();

  c.step_max = get_or<std::int64_t>(j, "step_max", 50'000);
  if (c.step_max < 0) fail("step_max", "must be non-negative");
  c.eval_interval = require_positive(get_or<std::int64_t>(j, "eval_interval", 1000), "eval_interval");
  c.eval_episodes = require_positive(get_or<std::int64_t>(j, "eval_episodes", 32), "eval_episodes");

  c.agent_hidden = require_positive(get_or<std::int64_t>(j, "agent_hidden", 64), "agent_hidden");
  c.mixer_arch.embed = require_positive(get_or<std::int64_t>(j, "mixer_embed", 32), "mixer_embed");
  c.mixer_arch.hyper_hidden = require_positive(get_or<std::int64_t>(j, "hyper_hidden", 64), "hyper_hidden");
  c.encoder_arch.hidden = require_positive(get_or<std::int64_t>(j, "encoder_hidden", 128), "encoder_hidden");
  c.encoder_arch.embed = require_positive(get_or<std::int64_t>(j, "encoder_embed", 16), "encoder_embed");
  c.encoder_arch.use_state = c.algo != Algo::QsimNoState;

  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const json& s : j.at("seeds")) c.seeds.push_back(s.get<std::uint64_t>());
  }
  if (c.seeds.empty()) fail("seeds", "at least one seed required");
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);
  c.export_embeddings = get_or<bool>(j, "export_embeddings", false);

  return c;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config_text(os.str());
}

std::string ExperimentConfig::echo_json() const {
  json j;
  if (env == EnvKind::Climbing) {
    j["env"] = "climbing";
  } else {
    json e;
    e["name"] = "gridworld";
    e["width"] = gridworld.width;
    e["height"] = gridworld.height;
    e["agents"] = gridworld.num_agents;
    e["horizon"] = gridworld.horizon;
    json goals = json::array();
    for (const auto& [x, y] : gridworld.resolved_goals()) goals.push_back({x, y});
    e["goals"] = goals;
    j["env"] = e;
  }
  j["algo"] = algo_name(algo);
  if (top_n) j["top_n"] = *top_n;
  j["mixer"] = mixer == MixerKind::VDN ? "vdn" : "qmix";
  if (kappa.mode == KappaSchedule::Mode::Constant) {
    j["kappa"] = {{"mode", "constant"}, {"value", kappa.constant}};
  } else {
    j["kappa"] = {{"mode", "linear"}, {"start", kappa.start}, {"end", kappa.end}, {"horizon", kappa.horizon}};
  }
  j["threshold"] = threshold;
  j["gamma"] = gamma;
  j["lr"] = learning_rate;
  j["buffer_episodes"] = buffer_episodes;
  j["batch_size"] = batch_size;
  j["epsilon"] = {{"start", epsilon.start}, {"end", epsilon.end}, {"anneal_steps", epsilon.anneal_steps}};
  if (target_update.mode == TargetUpdateMode::Soft) {
    j["target_update"] = {{"mode", "soft"}, {"tau", target_update.tau}};
  } else {
    j["target_update"] = {{"mode", "hard"}, {"interval", target_update.interval}};
  }
  j["double_q"] = double_q;
  j["reward_standardization"] = reward_standardization;
  j["step_max"] = step_max;
  j["eval_interval"] = eval_interval;
  j["eval_episodes"] = eval_episodes;
  j["agent_hidden"] = agent_hidden;
  j["mixer_embed"] = mixer_arch.embed;
  j["hyper_hidden"] = mixer_arch.hyper_hidden;
  j["encoder_hidden"] = encoder_arch.hidden;
  j["encoder_embed"] = encoder_arch.embed;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  j["export_embeddings"] = export_embeddings;
  return j.dump(2);
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(echo_json()); }

}  // namespace qsim
