#include "qsim/analysis.hpp"

#include "qsim/rng.hpp"
#include "qsim/threading.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qsim {

namespace {

/// Compensated (Kahan) accumulator.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

std::int64_t joint_space_size(int num_agents, int num_actions, std::int64_t cap) {
  if (num_agents <= 0 || num_actions <= 0)
    throw std::invalid_argument("agent and action counts must be positive");
  std::int64_t m = 1;
  for (int i = 0; i < num_agents; ++i) {
    if (m > cap / num_actions)
      throw std::invalid_argument("joint action space exceeds cap of " + std::to_string(cap));
    m *= num_actions;
  }
  return m;
}

}  // namespace

double max_bias_bound(int num_agents, int num_actions, double sigma) {
  return sigma * std::sqrt(2.0 * num_agents * std::log(static_cast<double>(num_actions)));
}

BiasResult mc_max_bias(int num_agents, int num_actions, double sigma, std::int64_t trials,
                       std::uint64_t seed, std::int64_t joint_cap) {
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  if (sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");
  const std::int64_t m = joint_space_size(num_agents, num_actions, joint_cap);

  constexpr std::int64_t kChunkTrials = 8192;
  const std::size_t chunks = static_cast<std::size_t>((trials + kChunkTrials - 1) / kChunkTrials);
  std::vector<std::pair<double, double>> chunk_sums(chunks);  // (sum of max, sum of max^2)

  parallel_for(chunks, 0, [&](std::size_t c) {
    Rng rng(mix_seed(mix_seed(seed) ^ (0x6d635f636870ULL + static_cast<std::uint64_t>(c) * 0x9e3779b97f4a7c15ULL)));
    const std::int64_t begin = static_cast<std::int64_t>(c) * kChunkTrials;
    const std::int64_t end = std::min(trials, begin + kChunkTrials);
    KahanSum s1, s2;
    for (std::int64_t t = begin; t < end; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < m; ++k) best = std::max(best, rng.normal());
      const double x = sigma * best;
      s1.add(x);
      s2.add(x * x);
    }
    chunk_sums[c] = {s1.sum, s2.sum};
  });

  KahanSum total1, total2;
  for (const auto& [a, b] : chunk_sums) {
    total1.add(a);
    total2.add(b);
  }
  const double n = static_cast<double>(trials);
  const double mean = total1.sum / n;
  const double var = trials > 1 ? std::max(0.0, (total2.sum - total1.sum * total1.sum / n) / (n - 1.0)) : 0.0;

  BiasResult r;
  r.empirical = mean;
  r.std_err = std::sqrt(var / n);
  r.bound = max_bias_bound(num_agents, num_actions, sigma);
  r.trials = trials;
  return r;
}

std::vector<BiasRow> bias_sweep(const BiasSweepConfig& config) {
  if (config.agent_counts.empty() || config.action_sizes.empty())
    throw std::invalid_argument("bias sweep needs agent counts and action sizes");
  std::vector<BiasRow> rows;
  for (int a : config.action_sizes) {
    for (int n : config.agent_counts) {
      const std::uint64_t row_seed = mix_seed(config.seed) ^ fnv1a64("sweep") ^
                                     (static_cast<std::uint64_t>(n) << 32 | static_cast<std::uint64_t>(a));
      const BiasResult r = mc_max_bias(n, a, config.sigma, config.trials, row_seed, config.joint_cap);
      BiasRow row;
      row.num_agents = n;
      row.num_actions = a;
      row.sigma = config.sigma;
      row.trials = config.trials;
      row.empirical = r.empirical;
      row.std_err = r.std_err;
      row.bound = r.bound;
      row.ratio = r.bound > 0.0 ? r.empirical / r.bound : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bias_rows_csv(std::span<const BiasRow> rows) {
  std::ostringstream os;
  os << "N,A,sigma,trials,empirical_bias,std_err,bound,ratio\n";
  char buf[256];
  for (const BiasRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%lld,%.10g,%.10g,%.10g,%.10g\n", r.num_agents,
                  r.num_actions, r.sigma, static_cast<long long>(r.trials), r.empirical, r.std_err,
                  r.bound, r.ratio);
    os << buf;
  }
  return os.str();
}

std::vector<std::string> check_bias_bound_trend(std::span<const BiasRow> rows) {
  std::vector<std::string> failures;
  for (const BiasRow& r : rows) {
    if (r.empirical > r.bound + 3.0 * r.std_err) {
      std::ostringstream os;
      os << "bound violated at N=" << r.num_agents << " A=" << r.num_actions << ": empirical "
         << r.empirical << " > bound " << r.bound << " + 3se";
      failures.push_back(os.str());
    }
  }
  // monotone growth in N per action size
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (rows[i].num_actions != rows[j].num_actions || rows[j].num_agents != rows[i].num_agents + 1)
        continue;
      const double margin = 3.0 * std::sqrt(rows[i].std_err * rows[i].std_err +
                                            rows[j].std_err * rows[j].std_err);
      if (!(rows[j].empirical - rows[i].empirical > margin)) {
        std::ostringstream os;
        os << "empirical bias not increasing from N=" << rows[i].num_agents << " to N="
           << rows[j].num_agents << " at A=" << rows[i].num_actions;
        failures.push_back(os.str());
      }
    }
  }
  return failures;
}

// ---- weighted-target bound harness ---------------------------------------------

std::string TargetBoundReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["violations"] = violations;
  j["worst_margin"] = worst_margin;
  if (!worst_instance.empty()) j["worst_instance"] = worst_instance;
  return j.dump(2);
}

TargetBoundReport verify_target_bound(std::int64_t samples, std::uint64_t seed, FaultInjection fault) {
  if (samples < 1) throw std::invalid_argument("samples must be at least 1");
  Rng rng = Rng::substream(seed, "target_bound");

  TargetBoundReport report;
  report.samples = samples;
  report.worst_margin = std::numeric_limits<double>::infinity();

  for (std::int64_t s = 0; s < samples; ++s) {
    const int n = 1 + static_cast<int>(rng.uniform_int(4));  // agents in [1,4]
    const int a = 2 + static_cast<int>(rng.uniform_int(4));  // actions in [2,5]

    std::vector<AvailMask> avail(n, AvailMask(a, 0));
    for (int i = 0; i < n; ++i) {
      for (int act = 0; act < a; ++act) avail[i][act] = rng.uniform() < 0.8;
      if (std::none_of(avail[i].begin(), avail[i].end(), [](std::uint8_t v) { return v != 0; }))
        avail[i][rng.uniform_int(a)] = 1;
    }

    // random joint Q-table; the greedy action is its argmax over available
    // joint actions, so the evaluation table and the selection agree (the
    // bound's premise).
    std::int64_t m = 1;
    for (int i = 0; i < n; ++i) m *= a;
    std::vector<double> table(m);
    for (double& q : table) q = rng.uniform(-10.0, 10.0);

    auto flat_index = [&](const JointAction& u) {
      std::int64_t idx = 0;
      for (int i = 0; i < n; ++i) idx = idx * a + u[i];
      return idx;
    };
    auto available = [&](std::int64_t idx) {
      for (int i = n - 1; i >= 0; --i) {
        if (!avail[i][idx % a]) return false;
        idx /= a;
      }
      return true;
    };

    JointAction u_star;
    double best = -std::numeric_limits<double>::infinity();
    for (std::int64_t idx = 0; idx < m; ++idx) {
      if (!available(idx) || table[idx] <= best) continue;
      best = table[idx];
      JointAction u(n);
      std::int64_t rest = idx;
      for (int i = n - 1; i >= 0; --i) {
        u[i] = static_cast<int>(rest % a);
        rest /= a;
      }
      u_star = u;
    }

    const NearGreedySet set = build_near_greedy(u_star, avail);
    std::vector<double> sims(set.entries.size());
    for (std::size_t k = 0; k < set.entries.size(); ++k) {
      const auto& e = set.entries[k];
      sims[k] = e.action == u_star[e.agent] ? 1.0 : rng.uniform(-1.0, 1.0);
    }
    const double kappa = rng.uniform(0.0, 10.0);
    const double threshold = rng.uniform(-1.0, 1.0);
    std::optional<int> top_n;
    if (rng.uniform() < 0.5) top_n = 1 + static_cast<int>(rng.uniform_int(a));

    SimilarityWeights weights = similarity_softmax(set, sims, kappa, threshold, top_n);
    if (fault == FaultInjection::InflateWeights)
      for (double& w : weights.weight) w *= 1.05;

    std::vector<double> candidate_q(set.entries.size());
    for (std::size_t k = 0; k < set.entries.size(); ++k)
      candidate_q[k] = table[flat_index(set.joint_action(k))];

    const double v_qsim = weighted_candidate_value(set, weights.weight, candidate_q);
    const double v_greedy = table[flat_index(u_star)];
    const double margin = v_greedy - v_qsim;
    if (margin < -1e-9) ++report.violations;
    if (margin < report.worst_margin) {
      report.worst_margin = margin;
      std::ostringstream os;
      os << "sample=" << s << " N=" << n << " A=" << a << " kappa=" << kappa
         << " threshold=" << threshold << " top_n=" << (top_n ? std::to_string(*top_n) : "none")
         << " V_qsim=" << v_qsim << " V_greedy=" << v_greedy;
      report.worst_instance = os.str();
    }
  }
  return report;
}

// ---- randomized implementation checks --------------------------------------------

SuiteReport gradient_check_suite(std::int64_t instances, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "gradcheck");
  SuiteReport report;
  report.instances = instances;
  const double fd_eps = 1e-5;

  for (std::int64_t k = 0; k < instances; ++k) {
    const int depth = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<Eigen::Index> widths;
    widths.push_back(1 + rng.uniform_int(5));
    for (int l = 0; l < depth; ++l) widths.push_back(1 + rng.uniform_int(5));
    MlpSpec spec;
    spec.layer_widths = widths;
    spec.hidden_activation = rng.uniform() < 0.5 ? Activation::Tanh : Activation::ReLU;
    spec.final_activation = Activation::Identity;
    const Eigen::Index batch = 1 + rng.uniform_int(4);

    MlpParams params = MlpParams::init(spec, rng);
    Eigen::MatrixXd input(batch, widths.front()), target(batch, widths.back());

    // redraw inputs until every pre-activation clears the stencil width;
    // finite differences across a ReLU kink say nothing about the gradient
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
      if (spec.hidden_activation == Activation::Tanh) break;
      NoGradGuard no_grad;
      bool clear = true;
      Eigen::MatrixXd x = input;
      for (std::size_t l = 0; l < params.weights.size() && clear; ++l) {
        Eigen::MatrixXd pre = x * Eigen::MatrixXd(params.weights[l].matrix());
        pre.rowwise() += Eigen::RowVectorXd::Map(params.biases[l].array().data(),
                                                 params.biases[l].size());
        if (l + 1 < params.weights.size()) {
          if (pre.array().abs().minCoeff() < 1e-3) clear = false;
          x = pre.array().max(0.0);
        }
      }
      if (clear || attempt > 200) break;
    }
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

    auto loss_value = [&]() {
      NoGradGuard no_grad;
      return mse(mlp_forward(spec, params, Tensor::from_matrix(input)), Tensor::from_matrix(target))
          .value();
    };

    Tensor loss = mse(mlp_forward(spec, params, Tensor::from_matrix(input)), Tensor::from_matrix(target));
    for (Tensor& p : params.all()) p.zero_grad();
    backward(loss);

    double max_rel = 0.0;
    for (Tensor& p : params.all()) {
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double saved = p.array()[i];
        p.array()[i] = saved + fd_eps;
        const double up = loss_value();
        p.array()[i] = saved - fd_eps;
        const double down = loss_value();
        p.array()[i] = saved;
        const double fd = (up - down) / (2.0 * fd_eps);
        const double g = p.has_grad() ? p.grad()[i] : 0.0;
        max_rel = std::max(max_rel, std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)}));
      }
    }
    report.worst = std::max(report.worst, max_rel);
    if (max_rel >= 1e-4) ++report.violations;
  }
  return report;
}

SuiteReport monotonicity_check_suite(std::int64_t instances, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "monotonicity");
  SuiteReport report;
  report.instances = instances;
  report.worst = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < instances; ++k) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    const Eigen::Index state_w = 1 + rng.uniform_int(6);
    Mixer mixer = Mixer::qmix(n, state_w, QmixArch{8, 16}, rng);
    Eigen::VectorXd q(n), state(state_w);
    for (int i = 0; i < n; ++i) q[i] = rng.normal(0.0, 3.0);
    for (Eigen::Index i = 0; i < state_w; ++i) state[i] = rng.normal();
    Eigen::VectorXd bumped = q;
    bumped[rng.uniform_int(n)] += rng.uniform(1e-3, 2.0);
    const double margin = mixer.mix(bumped, state) - mixer.mix(q, state);
    report.worst = std::min(report.worst, margin);
    if (margin < -1e-12) ++report.violations;
  }
  return report;
}

// ---- delta_q -------------------------------------------------------------------

double delta_q(double q_hat, std::span<const double> rewards, double gamma) {
  double ret = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    ret += discount * r;
    discount *= gamma;
  }
  return q_hat - ret;
}

// ---- metric comparison -----------------------------------------------------------

namespace {

struct MetricRows {
  std::vector<std::int64_t> steps;
  std::vector<double> delta_q;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

MetricRows read_metrics(const std::string& run_dir) {
  const std::string path = run_dir + "/metrics.csv";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty metrics file: " + path);
  const auto header = split_csv_line(line);
  std::ptrdiff_t step_col = -1, dq_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "step") step_col = static_cast<std::ptrdiff_t>(i);
    if (header[i] == "delta_q") dq_col = static_cast<std::ptrdiff_t>(i);
  }
  if (step_col < 0 || dq_col < 0)
    throw std::runtime_error("metrics file missing step/delta_q columns: " + path);
  MetricRows rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    rows.steps.push_back(std::stoll(fields[step_col]));
    rows.delta_q.push_back(std::stod(fields[dq_col]));
  }
  return rows;
}

nlohmann::json read_manifest_config(const std::string& run_dir) {
  const std::string path = run_dir + "/manifest.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  return j.at("config");
}

nlohmann::json comparable_config(nlohmann::json config) {
  for (const char* key : {"algo", "top_n", "double_q", "kappa", "threshold", "seeds", "output_dir",
                          "export_embeddings"})
    config.erase(key);
  return config;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = p * (static_cast<double>(values.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

std::string DeltaQSummary::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["baseline_median"] = baseline_median;
  j["baseline_iqr"] = baseline_iqr;
  j["qsim_median"] = qsim_median;
  j["qsim_iqr"] = qsim_iqr;
  j["final_quarter"] = {{"baseline_median", final_quarter_baseline},
                        {"qsim_median", final_quarter_qsim},
                        {"qsim_lower", qsim_lower}};
  return j.dump(2);
}

DeltaQSummary compare_delta_q(std::span<const std::string> baseline_run_dirs,
                              std::span<const std::string> qsim_run_dirs) {
  if (baseline_run_dirs.empty() || qsim_run_dirs.empty())
    throw std::invalid_argument("compare_delta_q needs runs on both sides");

  const nlohmann::json reference = comparable_config(read_manifest_config(std::string(baseline_run_dirs[0])));
  for (std::span<const std::string> group : {baseline_run_dirs, qsim_run_dirs}) {
    for (const std::string& dir : group) {
      if (comparable_config(read_manifest_config(dir)) != reference)
        throw std::runtime_error("mismatched configs: " + dir +
                                 " differs beyond the algorithm variant");
    }
  }

  auto collect = [](std::span<const std::string> dirs) {
    std::vector<MetricRows> all;
    for (const std::string& d : dirs) all.push_back(read_metrics(d));
    for (const MetricRows& r : all)
      if (r.steps != all[0].steps)
        throw std::runtime_error("runs have different evaluation steps; cannot compare");
    return all;
  };
  const std::vector<MetricRows> base = collect(baseline_run_dirs);
  const std::vector<MetricRows> qsim = collect(qsim_run_dirs);
  if (!base[0].steps.empty() && !qsim[0].steps.empty() && base[0].steps != qsim[0].steps)
    throw std::runtime_error("baseline and qsim runs have different evaluation steps");

  DeltaQSummary out;
  out.steps = base[0].steps;
  const std::int64_t max_step = out.steps.empty() ? 0 : out.steps.back();
  const double cutoff = 0.75 * static_cast<double>(max_step);
  std::vector<double> base_tail, qsim_tail;

  for (std::size_t row = 0; row < out.steps.size(); ++row) {
    std::vector<double> b, q;
    for (const MetricRows& r : base) b.push_back(r.delta_q[row]);
    for (const MetricRows& r : qsim) q.push_back(r.delta_q[row]);
    out.baseline_median.push_back(percentile(b, 0.5));
    out.baseline_iqr.push_back(percentile(b, 0.75) - percentile(b, 0.25));
    out.qsim_median.push_back(percentile(q, 0.5));
    out.qsim_iqr.push_back(percentile(q, 0.75) - percentile(q, 0.25));
    if (static_cast<double>(out.steps[row]) > cutoff) {
      base_tail.insert(base_tail.end(), b.begin(), b.end());
      qsim_tail.insert(qsim_tail.end(), q.begin(), q.end());
    }
  }
  if (!base_tail.empty()) {
    out.final_quarter_baseline = percentile(base_tail, 0.5);
    out.final_quarter_qsim = percentile(qsim_tail, 0.5);
    out.qsim_lower = out.final_quarter_qsim < out.final_quarter_baseline;
  }
  return out;
}

}  // namespace qsim
