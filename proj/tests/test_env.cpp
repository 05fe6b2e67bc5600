#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsim/env.hpp"

using namespace qsim;

TEST_CASE("climbing payoff matrix matches the published table") {
  // rows: agent 0 in {A,B,C}; cols: agent 1 in {A,B,C}
  const double expected[3][3] = {{0, 6, 5}, {-30, 7, 0}, {11, -30, 0}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      ClimbingGame game;
      (void)game.reset(0);
      const EnvStep out = game.step({r, c});
      CHECK(out.reward == expected[r][c]);
      CHECK(out.terminal);
    }
}

TEST_CASE("climbing optimum and penalties") {
  ClimbingGame game;
  (void)game.reset(0);
  CHECK(game.step({2, 0}).reward == 11);  // (C, A) global optimum
  (void)game.reset(0);
  CHECK(game.step({1, 0}).reward == -30);  // (B, A)
  (void)game.reset(0);
  CHECK(game.step({0, 0}).reward == 0);  // (A, A)
}

TEST_CASE("climbing reset gives the constant start observation with full availability") {
  ClimbingGame game;
  const ResetResult a = game.reset(1);
  const ResetResult b = game.reset(999);  // seed is irrelevant here
  REQUIRE(a.obs.size() == 2);
  CHECK(a.obs[0] == b.obs[0]);
  CHECK(a.obs[0].size() == game.obs_width());
  CHECK(a.obs[0][4] == 1.0);  // start flag
  CHECK(a.obs[0].head(4).isZero());
  CHECK(a.state.size() == game.state_width());
  for (const AvailMask& mask : a.avail)
    for (std::uint8_t v : mask) CHECK(v == 1);
}

TEST_CASE("climbing next observation encodes the own action plus terminal flag") {
  ClimbingGame game;
  (void)game.reset(0);
  const EnvStep out = game.step({2, 1});
  CHECK(out.next_obs[0][2] == 1.0);
  CHECK(out.next_obs[1][1] == 1.0);
  CHECK(out.next_obs[0][3] == 1.0);  // terminal flag
  CHECK(out.next_obs[0][4] == 0.0);
  CHECK(out.next_state.head(5) == out.next_obs[0]);
  CHECK(out.next_state.tail(5) == out.next_obs[1]);
}

TEST_CASE("stepping a finished climbing episode is an error") {
  ClimbingGame game;
  (void)game.reset(0);
  (void)game.step({0, 0});
  CHECK_THROWS(game.step({0, 0}));
  CHECK_THROWS([&] { ClimbingGame g; (void)g.reset(0); (void)g.step({3, 0}); }());
}

TEST_CASE("gridworld widths follow the documented encoding") {
  CoopGridworld env(GridworldConfig{4, 4, 2, 25, {}});
  // state: 2 agents * 2 coords + 2 goals * 2 coords = 2*2*2
  CHECK(env.state_width() == 8);
  CHECK(env.obs_width() == 6);  // all agent coords + one-hot id
  CHECK(env.num_actions() == 5);
}

TEST_CASE("gridworld reset is deterministic per seed with distinct positions") {
  CoopGridworld env(GridworldConfig{4, 4, 2, 25, {}});
  (void)env.reset(77);
  const auto first = env.agent_positions();
  (void)env.reset(77);
  CHECK(env.agent_positions() == first);
  CHECK(first[0] != first[1]);
  (void)env.reset(78);
  bool moved = env.agent_positions() != first;
  CHECK(moved);
}

TEST_CASE("gridworld observation layout matches the docs") {
  CoopGridworld env(GridworldConfig{4, 4, 2, 25, {{0, 0}, {3, 3}}});
  const ResetResult r = env.reset(3);
  const auto& pos = env.agent_positions();
  for (int i = 0; i < 2; ++i) {
    CHECK(r.obs[i][0] == doctest::Approx(pos[0].first / 3.0));
    CHECK(r.obs[i][1] == doctest::Approx(pos[0].second / 3.0));
    CHECK(r.obs[i][2] == doctest::Approx(pos[1].first / 3.0));
    CHECK(r.obs[i][3] == doctest::Approx(pos[1].second / 3.0));
    CHECK(r.obs[i][4 + i] == 1.0);
  }
  // state: agent coords then goal coords
  CHECK(r.state[0] == doctest::Approx(pos[0].first / 3.0));
  CHECK(r.state[4] == 0.0);
  CHECK(r.state[5] == 0.0);
  CHECK(r.state[6] == 1.0);
  CHECK(r.state[7] == 1.0);
}

TEST_CASE("gridworld masks forbid leaving the grid") {
  CoopGridworld env(GridworldConfig{3, 3, 2, 25, {{0, 0}, {2, 2}}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ResetResult r = env.reset(seed);
    const auto& pos = env.agent_positions();
    for (int i = 0; i < 2; ++i) {
      CHECK(static_cast<bool>(r.avail[i][CoopGridworld::kUp]) == (pos[i].second > 0));
      CHECK(static_cast<bool>(r.avail[i][CoopGridworld::kDown]) == (pos[i].second < 2));
      CHECK(static_cast<bool>(r.avail[i][CoopGridworld::kLeft]) == (pos[i].first > 0));
      CHECK(static_cast<bool>(r.avail[i][CoopGridworld::kRight]) == (pos[i].first < 2));
      CHECK(r.avail[i][CoopGridworld::kStay] == 1);
    }
  }
}

TEST_CASE("gridworld reward counts occupied goals minus the step cost") {
  CoopGridworld env(GridworldConfig{2, 2, 2, 25, {{0, 0}, {1, 1}}});
  // find a seed where both agents start on the two goals; then 'stay' ends it
  for (std::uint64_t seed = 0;; ++seed) {
    (void)env.reset(seed);
    const auto pos = env.agent_positions();
    const bool on_goals = (pos[0] == std::make_pair(0, 0) && pos[1] == std::make_pair(1, 1)) ||
                          (pos[0] == std::make_pair(1, 1) && pos[1] == std::make_pair(0, 0));
    if (!on_goals) continue;
    const EnvStep out = env.step({CoopGridworld::kStay, CoopGridworld::kStay});
    CHECK(out.reward == doctest::Approx(2.0 - 0.01));
    CHECK(out.terminal);  // all goals covered
    break;
  }
}

TEST_CASE("gridworld transitions are deterministic and ends at the horizon") {
  GridworldConfig cfg{4, 4, 2, 3, {}};
  CoopGridworld env(cfg);
  (void)env.reset(5);
  CoopGridworld env2(cfg);
  (void)env2.reset(5);
  int steps = 0;
  bool done = false;
  while (!done) {
    const JointAction a = {CoopGridworld::kStay, CoopGridworld::kStay};
    const EnvStep s1 = env.step(a);
    const EnvStep s2 = env2.step(a);
    CHECK(s1.next_state == s2.next_state);
    CHECK(s1.reward == s2.reward);
    done = s1.terminal;
    ++steps;
  }
  CHECK(steps == 3);  // horizon
  CHECK_THROWS(env.step({CoopGridworld::kStay, CoopGridworld::kStay}));
}

TEST_CASE("gridworld rejects unavailable actions and bad configs") {
  CoopGridworld env(GridworldConfig{2, 2, 2, 25, {{0, 0}, {1, 1}}});
  for (std::uint64_t seed = 0;; ++seed) {
    (void)env.reset(seed);
    if (env.agent_positions()[0] == std::make_pair(0, 0)) break;  // up unavailable
  }
  CHECK_THROWS(env.step({CoopGridworld::kUp, CoopGridworld::kStay}));
  CHECK_THROWS(CoopGridworld(GridworldConfig{0, 3, 2, 25, {}}));
  CHECK_THROWS(CoopGridworld(GridworldConfig{3, 3, 1, 25, {}}));
  CHECK_THROWS(CoopGridworld(GridworldConfig{3, 3, 2, 25, {{5, 0}}}));
}
