#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsim/config.hpp"

#include <string>

using namespace qsim;

TEST_CASE("minimal config resolves the published defaults") {
  const ExperimentConfig c = parse_config_text(R"({"env":"climbing","algo":"qsim","seeds":[1]})");
  CHECK(c.env == EnvKind::Climbing);
  CHECK(c.algo == Algo::Qsim);
  CHECK(c.kappa.mode == KappaSchedule::Mode::Constant);
  CHECK(c.kappa.constant == 3.0);
  CHECK(c.threshold == 0.0);
  CHECK(c.learning_rate == 0.0005);
  CHECK(c.buffer_episodes == 5000);
  CHECK(c.gamma == 0.99);
  CHECK(c.epsilon.start == 1.0);
  CHECK(c.epsilon.end == 0.05);
  CHECK(c.epsilon.anneal_steps == 50'000);
  CHECK(c.target_update.mode == TargetUpdateMode::Soft);
  CHECK(c.target_update.tau == 0.01);
  CHECK(c.reward_standardization);
  CHECK(c.double_q);
  CHECK(c.encoder_arch.hidden == 128);
  CHECK(c.mixer_arch.embed == 32);
  CHECK(c.mixer_arch.hyper_hidden == 64);
  CHECK(c.seeds == std::vector<std::uint64_t>{1});
}

TEST_CASE("gridworld defaults differ where the published table says so") {
  const ExperimentConfig c = parse_config_text(R"({"env":"gridworld","algo":"greedy","seeds":[1]})");
  CHECK(c.target_update.mode == TargetUpdateMode::Hard);
  CHECK(c.target_update.interval == 200);
  CHECK_FALSE(c.reward_standardization);
  CHECK(c.gridworld.width == 4);
  CHECK(c.gridworld.num_agents == 2);
}

TEST_CASE("constraint violations name the offending field") {
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","gamma":1.5,"seeds":[1]})"),
                       doctest::Contains("gamma"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","lr":0,"seeds":[1]})"),
                       doctest::Contains("lr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","seeds":[]})"),
                       doctest::Contains("seeds"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","kappa":-1,"seeds":[1]})"),
                       doctest::Contains("kappa"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"env":"climbing","batch_size":64,"buffer_episodes":32,"seeds":[1]})"),
      doctest::Contains("batch_size"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","algo":"qsim_topn","seeds":[1]})"),
                       doctest::Contains("top_n"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"mars","seeds":[1]})"),
                       doctest::Contains("unknown environment"), std::invalid_argument);
}

TEST_CASE("unknown keys are rejected with a suggestion") {
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","kapa":3,"seeds":[1]})"),
                       doctest::Contains("did you mean 'kappa'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"env":"climbing","epsilon":{"strt":1},"seeds":[1]})"),
                       doctest::Contains("did you mean 'start'"), std::invalid_argument);
  CHECK_THROWS(parse_config_text("not json at all"));
  CHECK_THROWS(parse_config_text("[1,2,3]"));
}

TEST_CASE("echoed configs reparse to the identical canonical form") {
  const char* samples[] = {
      R"({"env":"climbing","algo":"qsim","seeds":[1,2,3]})",
      R"({"env":{"name":"gridworld","width":5,"height":4,"agents":3,"horizon":12,
          "goals":[[0,0],[4,3],[0,3]]},"algo":"qsim_topn","top_n":2,"mixer":"vdn",
          "kappa":{"mode":"linear","start":1,"end":10,"horizon":9000},"seeds":[7],
          "target_update":{"mode":"hard","interval":50},"double_q":false})",
      R"({"env":"climbing","algo":"qsim_nostate","threshold":0.25,"seeds":[9],
          "export_embeddings":true})",
  };
  for (const char* text : samples) {
    const ExperimentConfig c = parse_config_text(text);
    const ExperimentConfig round = parse_config_text(c.echo_json());
    CHECK(round.echo_json() == c.echo_json());
    CHECK(round.config_hash() == c.config_hash());
  }
}

TEST_CASE("config hash separates distinct configs") {
  const ExperimentConfig a = parse_config_text(R"({"env":"climbing","algo":"qsim","seeds":[1]})");
  const ExperimentConfig b = parse_config_text(R"({"env":"climbing","algo":"greedy","seeds":[1]})");
  CHECK(a.config_hash() != b.config_hash());
  CHECK(a.config_hash() == parse_config_text(R"({"env":"climbing","algo":"qsim","seeds":[1]})").config_hash());
}

TEST_CASE("the no-state variant drops the state from the encoder input") {
  const ExperimentConfig c =
      parse_config_text(R"({"env":"climbing","algo":"qsim_nostate","seeds":[1]})");
  CHECK_FALSE(c.encoder_arch.use_state);
  CHECK(parse_config_text(R"({"env":"climbing","algo":"qsim","seeds":[1]})").encoder_arch.use_state);
}

TEST_CASE("variant names match the metrics vocabulary") {
  CHECK(algo_name(Algo::GreedyBaseline) == "greedy");
  CHECK(algo_name(Algo::Qsim) == "qsim");
  CHECK(algo_name(Algo::QsimMean) == "qsim_mean");
  CHECK(algo_name(Algo::QsimTopN) == "qsim_topn");
  CHECK(algo_name(Algo::QsimNoState) == "qsim_nostate");
}
