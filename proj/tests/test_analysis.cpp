#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsim/analysis.hpp"
#include "qsim/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace qsim;
namespace fs = std::filesystem;

TEST_CASE("single-draw max has zero bias and zero bound") {
  const BiasResult r = mc_max_bias(1, 1, 1.0, 50'000, 3);
  CHECK(r.bound == 0.0);
  CHECK(std::abs(r.empirical) < 3.0 / std::sqrt(50'000.0));
}

TEST_CASE("expected max of two standard normals approaches 1/sqrt(pi)") {
  // oracle: numeric integration of x * 2 phi(x) Phi(x) gives 0.5641895835477566
  const BiasResult r = mc_max_bias(1, 2, 1.0, 1'000'000, 7);
  CHECK(std::abs(r.empirical - 0.5641895835477566) < 0.01);
  CHECK(std::abs(r.empirical - 0.5641895835477566) < 3.0 * r.std_err + 0.005);
}

TEST_CASE("closed-form bound values") {
  CHECK(max_bias_bound(2, 3, 1.0) == doctest::Approx(2.09629414793641).epsilon(1e-12));
  CHECK(max_bias_bound(1, 1, 5.0) == 0.0);
  CHECK(max_bias_bound(3, 4, 2.0) == doctest::Approx(2.0 * std::sqrt(6.0 * std::log(4.0))));
}

TEST_CASE("sigma scales both columns linearly") {
  const BiasResult base = mc_max_bias(2, 3, 1.0, 20'000, 11);
  const BiasResult doubled = mc_max_bias(2, 3, 2.0, 20'000, 11);
  CHECK(doubled.empirical == doctest::Approx(2.0 * base.empirical).epsilon(1e-12));
  CHECK(doubled.bound == doctest::Approx(2.0 * base.bound).epsilon(1e-12));

  const BiasResult zero = mc_max_bias(2, 3, 0.0, 1000, 11);
  CHECK(zero.empirical == 0.0);
  CHECK(zero.bound == 0.0);
}

TEST_CASE("mc_max_bias is deterministic and thread-count independent") {
  const BiasResult a = mc_max_bias(2, 4, 1.0, 30'000, 21);
  const BiasResult b = mc_max_bias(2, 4, 1.0, 30'000, 21);
  CHECK(a.empirical == b.empirical);
  CHECK(a.std_err == b.std_err);

  // the chunked compensated reduction must not depend on the worker count
  setenv("QSIM_LAB_THREADS", "1", 1);
  const BiasResult serial = mc_max_bias(2, 4, 1.0, 30'000, 21);
  setenv("QSIM_LAB_THREADS", "3", 1);
  const BiasResult threaded = mc_max_bias(2, 4, 1.0, 30'000, 21);
  unsetenv("QSIM_LAB_THREADS");
  CHECK(serial.empirical == threaded.empirical);
  CHECK(serial.std_err == threaded.std_err);
}

TEST_CASE("joint-space cap rejects oversized requests") {
  CHECK_THROWS(mc_max_bias(10, 10, 1.0, 10, 1, 1'000'000));
  CHECK_THROWS(mc_max_bias(2, 2, 1.0, 0, 1));
}

TEST_CASE("bias sweep satisfies the bound and grows with the agent count") {
  BiasSweepConfig sweep;
  sweep.agent_counts = {1, 2, 3};
  sweep.action_sizes = {4};
  sweep.sigma = 1.0;
  sweep.trials = 20'000;
  sweep.seed = 5;
  const auto rows = bias_sweep(sweep);
  REQUIRE(rows.size() == 3);
  CHECK(check_bias_bound_trend(rows).empty());
  for (const BiasRow& r : rows) {
    CHECK(r.ratio > 0.5);
    CHECK(r.ratio <= 1.0);
  }
  const std::string csv = bias_rows_csv(rows);
  CHECK(csv.find("N,A,sigma,trials,empirical_bias,std_err,bound,ratio") == 0);
}

TEST_CASE("trend checker reports violations on doctored rows") {
  BiasRow good{1, 4, 1.0, 1000, 1.0, 0.01, 1.67, 0.6};
  BiasRow bad_bound{2, 4, 1.0, 1000, 3.0, 0.01, 2.35, 1.27};  // exceeds the bound
  BiasRow bad_trend{3, 4, 1.0, 1000, 2.9, 0.01, 2.88, 1.0};   // decreases vs N=2
  const std::vector<BiasRow> rows = {good, bad_bound, bad_trend};
  const auto failures = check_bias_bound_trend(rows);
  CHECK(failures.size() == 2);
}

TEST_CASE("the weighted target never exceeds the greedy value on random tables") {
  const TargetBoundReport report = verify_target_bound(3000, 17);
  CHECK(report.samples == 3000);
  CHECK(report.violations == 0);
  CHECK(report.worst_margin >= -1e-9);
  CHECK(report.to_json().find("\"violations\": 0") != std::string::npos);
}

TEST_CASE("the bound harness detects an injected normalization fault") {
  const TargetBoundReport report = verify_target_bound(3000, 17, FaultInjection::InflateWeights);
  CHECK(report.violations > 0);
  CHECK(report.worst_margin < -1e-9);
}

TEST_CASE("the bound harness accepts a single sample") {
  const TargetBoundReport report = verify_target_bound(1, 99);
  CHECK(report.samples == 1);
  CHECK(report.violations == 0);
  CHECK_THROWS(verify_target_bound(0, 1));
}

TEST_CASE("delta_q arithmetic") {
  std::vector<double> one = {4.0};
  CHECK(delta_q(5.0, one, 0.37) == doctest::Approx(1.0));
  std::vector<double> two = {1.0, 1.0};
  CHECK(delta_q(0.0, two, 0.5) == doctest::Approx(-1.5));
  std::vector<double> three = {2.0, 3.0, 1.0};
  const double ret = 2.0 + 0.9 * 3.0 + 0.81 * 1.0;
  CHECK(delta_q(ret, three, 0.9) == doctest::Approx(0.0));
  CHECK(delta_q(1.0, {}, 0.9) == doctest::Approx(1.0));
}

namespace {

void write_run_dir(const fs::path& dir, const std::string& algo, std::uint64_t seed,
                   const std::vector<std::pair<int, double>>& step_delta) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.json");
  manifest << R"({"schema":"qsim-lab-run-v1","seed":)" << seed << R"(,"config_hash":"x","config":{)"
           << R"("env":"climbing","algo":")" << algo
           << R"(","double_q":false,"gamma":0.99,"step_max":4000}})";
  manifest.close();
  std::ofstream metrics(dir / "metrics.csv");
  metrics << MetricsWriter::header() << "\n";
  for (const auto& [step, dq] : step_delta)
    metrics << step << "," << algo << "," << seed << ",0,0,0,0,0," << dq << ",0.05,3\n";
}

}  // namespace

TEST_CASE("compare_delta_q recovers medians from synthetic files") {
  const fs::path root = fs::temp_directory_path() / "qsim_compare_test";
  fs::remove_all(root);
  // two baseline seeds, two qsim seeds, four eval steps
  write_run_dir(root / "base1", "greedy", 1, {{1000, 2.0}, {2000, 3.0}, {3000, 4.0}, {4000, 6.0}});
  write_run_dir(root / "base2", "greedy", 2, {{1000, 4.0}, {2000, 5.0}, {3000, 6.0}, {4000, 8.0}});
  write_run_dir(root / "q1", "qsim", 1, {{1000, 1.0}, {2000, 1.0}, {3000, 2.0}, {4000, 2.0}});
  write_run_dir(root / "q2", "qsim", 2, {{1000, 3.0}, {2000, 2.0}, {3000, 3.0}, {4000, 4.0}});

  const std::vector<std::string> base = {(root / "base1").string(), (root / "base2").string()};
  const std::vector<std::string> qsim_dirs = {(root / "q1").string(), (root / "q2").string()};
  const DeltaQSummary summary = compare_delta_q(base, qsim_dirs);

  REQUIRE(summary.steps.size() == 4);
  CHECK(summary.baseline_median[0] == doctest::Approx(3.0));
  CHECK(summary.qsim_median[0] == doctest::Approx(2.0));
  CHECK(summary.baseline_iqr[0] == doctest::Approx(1.0));
  // final quarter: step > 3000 -> only the 4000 rows, pooled across seeds
  CHECK(summary.final_quarter_baseline == doctest::Approx(7.0));
  CHECK(summary.final_quarter_qsim == doctest::Approx(3.0));
  CHECK(summary.qsim_lower);

  // identical runs compared against themselves -> zero gap
  const DeltaQSummary self = compare_delta_q(base, base);
  CHECK(self.final_quarter_baseline == self.final_quarter_qsim);
  CHECK_FALSE(self.qsim_lower);
  fs::remove_all(root);
}

TEST_CASE("compare_delta_q rejects mismatched configs") {
  const fs::path root = fs::temp_directory_path() / "qsim_compare_bad";
  fs::remove_all(root);
  write_run_dir(root / "a", "greedy", 1, {{1000, 1.0}});
  write_run_dir(root / "b", "qsim", 1, {{1000, 1.0}});
  // doctor the env so the configs differ beyond the variant
  {
    std::ofstream manifest(root / "b" / "manifest.json");
    manifest << R"({"schema":"qsim-lab-run-v1","seed":1,"config_hash":"x","config":{)"
             << R"("env":"gridworld","algo":"qsim","double_q":true,"gamma":0.99,"step_max":4000}})";
  }
  const std::vector<std::string> base = {(root / "a").string()};
  const std::vector<std::string> qsim_dirs = {(root / "b").string()};
  CHECK_THROWS(compare_delta_q(base, qsim_dirs));
  fs::remove_all(root);
}
