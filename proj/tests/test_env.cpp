#include <gtest/gtest.h>

#include <bit>
#include <fstream>
#include <sstream>
#include <vector>

#include "aqmix/env.hpp"

using namespace aqmix;

namespace {

using A = CommAction;

TaskSpec task_of(const std::string& line) {
  std::istringstream in(line);
  return parse_suite(in).at(0);
}

std::vector<TaskSpec> load(const std::string& name) {
  std::ifstream in(std::string(AQMIX_DATA_DIR) + "/" + name);
  return parse_suite(in);
}

JointAction joint_of(std::initializer_list<A> a) { return JointAction(std::vector<A>(a)); }

JointAction decode(std::uint64_t code, std::size_t n) {
  JointAction j(n, A::solo_process);
  for (std::size_t i = n; i-- > 0; code /= 6) j[i] = action_from_index(code % 6);
  return j;
}

EnvState fresh(const TaskSpec& t) {
  Rng rng(0);
  return reset(t, 1.0, rng);
}

}  // namespace

TEST(ResetTest, FeaturesOfAnEasyTask) {
  const TaskSpec t = task_of("3 3 -1 0.5 0,1,2 - -");
  const EnvState s = fresh(t);
  EXPECT_EQ(s.tokens, 0.0);
  EXPECT_EQ(s.round, 0u);
  const auto f0 = task_features(t, s, 0);
  ASSERT_EQ(f0.size(), 6u);
  EXPECT_EQ(f0[0], 1.0);
  EXPECT_EQ(f0[1], 1.0);
  EXPECT_EQ(f0[5], 1.0);
  EXPECT_EQ(task_features(t, s, 1)[0], 0.0);
  EXPECT_EQ(observation_dim(3, task_feature_dim(3)), 19u);
}

TEST(ResetTest, NoiselessFlagsMarkTheAdversary) {
  const TaskSpec t = task_of("3 3 2 0.5 0 1 2");
  const EnvState s = fresh(t);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.flags[i], (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(s.clues[2], 0u);
}

TEST(ResetTest, NoisyFlagsAreCorrectAtTheConfiguredRate) {
  const TaskSpec t = task_of("3 3 1 0.5 0 1 2");
  Rng rng(4);
  double correct = 0, total = 0;
  for (int k = 0; k < 4000; ++k) {
    const EnvState s = reset(t, 0.9, rng);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        correct += s.flags[i][j] == (j == 1 ? 1.0 : 0.0);
        total += 1;
      }
  }
  EXPECT_NEAR(correct / total, 0.9, 0.01);
}

TEST(ResetTest, InvalidTasksAreRejected) {
  TaskSpec t;
  t.K = 3;
  t.kappa = 4;
  t.clues = {1, 2};
  Rng rng;
  EXPECT_THROW(reset(t, 1.0, rng), ConfigError);
  t.kappa = 2;
  t.clues = {1, 8};
  EXPECT_THROW(reset(t, 1.0, rng), ConfigError);
  t.clues = {1, 2};
  t.adversary = 2;
  EXPECT_THROW(reset(t, 1.0, rng), ConfigError);
}

TEST(PropagateTest, IdentityGraphOnlyAdvancesTheRound) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  EnvState s = fresh(t);
  const auto before = s.clues;
  EnvConfig cfg;
  const CommGraph g = CommGraph::identity(3);
  propagate(s, g, execution_order(g), cfg);
  EXPECT_EQ(s.clues, before);
  EXPECT_EQ(s.round, 1u);
  EXPECT_EQ(s.tokens, 600.0);
}

TEST(PropagateTest, ChainedFreshEdges) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  EnvState s = fresh(t);
  CommGraph g = CommGraph::identity(3);
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  propagate(s, g, execution_order(g), EnvConfig{});
  EXPECT_EQ(s.clues[2], 0b111u);
  EXPECT_EQ(s.clues[1], 0b011u);
  EXPECT_EQ(s.clues[0], 0b001u);
  EXPECT_EQ(s.tokens, 600.0 + 800.0);
}

TEST(PropagateTest, DeferredEdgeCarriesTheRoundStartSet) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  EnvState s = fresh(t);
  CommGraph g = CommGraph::identity(3);
  g.add_edge(0, 1);
  g.add_edge(1, 0);
  g.add_edge(2, 1);
  const ExecutionOrder eo = execution_order(g);
  ASSERT_EQ(eo.order, (std::vector<std::size_t>{2, 0, 1}));
  propagate(s, g, eo, EnvConfig{});
  EXPECT_EQ(s.clues[1], 0b111u);
  EXPECT_EQ(s.clues[0], 0b011u);  // agent 1's round-start set only
}

TEST(PropagateTest, MismatchedOrderIsAHardError) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  EnvState s = fresh(t);
  CommGraph g = CommGraph::identity(3);
  g.add_edge(0, 1);
  EXPECT_THROW(propagate(s, g, ExecutionOrder{{1, 0, 2}, {}}, EnvConfig{}), ShapeError);
  EXPECT_THROW(propagate(s, CommGraph::identity(2), execution_order(CommGraph::identity(2)), EnvConfig{}),
               ShapeError);
}

TEST(FinishTest, EasyAllSoloScoresFullCredit) {
  const TaskSpec t = task_of("3 3 -1 0.5 0,1,2 - -");
  const std::vector<JointAction> seq(2, JointAction(3, A::solo_process));
  const EpisodeScore sc = evaluate_sequence(t, seq, EnvConfig{});
  EXPECT_EQ(sc.accuracy, 1.0);
  EXPECT_EQ(sc.tokens, 2 * 200.0 * 3);
}

TEST(FinishTest, PartialCreditWithoutPoison) {
  const TaskSpec t = task_of("4 4 -1 0 0,1 2 3");
  const EpisodeScore sc = finish(fresh(t), t);
  EXPECT_DOUBLE_EQ(sc.accuracy, 0.5);
}

TEST(FinishTest, PoisonReducesTheScore) {
  const TaskSpec t = task_of("4 4 0 0.5 - 0,1,2,3 -");
  EnvState s = fresh(t);
  CommGraph g = CommGraph::identity(3);
  g.add_edge(0, 1);
  for (int r = 0; r < 2; ++r) propagate(s, g, execution_order(g), EnvConfig{});
  EXPECT_EQ(s.poison[1], 2u);
  EXPECT_EQ(std::popcount(s.clues[1]), 4);
  EXPECT_DOUBLE_EQ(finish(s, t).accuracy, 0.75);
}

TEST(FinishTest, AdversaryIsExcludedFromTheMaximum) {
  const TaskSpec t = task_of("3 1 1 0.5 - 0 -");
  EXPECT_EQ(finish(fresh(t), t).accuracy, 0.0);
}

TEST(RewardTest, ExactValues) {
  EXPECT_NEAR(reward(1.0, 0.0, 1.25, 0.10, 10000.0), 1.25, 1e-12);
  EXPECT_NEAR(reward(1.0, 10000.0, 1.25, 0.10, 10000.0), 1.15, 1e-12);
  EXPECT_EQ(reward(1.0, 25000.0, 1.25, 0.10, 10000.0), reward(1.0, 10000.0, 1.25, 0.10, 10000.0));
  EXPECT_NEAR(reward(0.5, 5000.0, RewardWeights{}), 0.625 - 0.05, 1e-12);
}

TEST(OracleTest, EasyTasksAreSolvedSolo) {
  const RunConfig cfg;
  for (const TaskSpec& t : load("easy.suite")) {
    const OracleResult r = oracle_optimal(t, cfg.env, 2, RewardWeights::from(cfg));
    EXPECT_EQ(r.evaluations, 46656u);
    EXPECT_EQ(r.accuracy, 1.0);
    for (const auto& j : r.sequence) EXPECT_EQ(j, JointAction(3, A::solo_process));
    EXPECT_NEAR(r.best_return, 1.25 - 0.1 * 0.12, 1e-12);
  }
}

TEST(OracleTest, HardThreeClueTaskNeedsCommunication) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  const RunConfig cfg;
  const OracleResult r = oracle_optimal(t, cfg.env, 2, RewardWeights::from(cfg));
  const std::vector<JointAction> solo(2, JointAction(3, A::solo_process));
  const EpisodeScore s = evaluate_sequence(t, solo, cfg.env);
  EXPECT_GT(r.best_return, reward(s.accuracy, s.tokens, RewardWeights::from(cfg)));
  EXPECT_EQ(r.accuracy, 1.0);
  // The returned sequence reproduces the returned optimum.
  const EpisodeScore again = evaluate_sequence(t, r.sequence, cfg.env);
  EXPECT_EQ(reward(again.accuracy, again.tokens, RewardWeights::from(cfg)), r.best_return);
}

TEST(OracleTest, MatchesDirectEnumeration) {
  const RunConfig cfg;
  const RewardWeights w = RewardWeights::from(cfg);
  for (const TaskSpec& t : {task_of("4 3 -1 0.5 0,1 1,2 3"), task_of("4 4 2 0.5 0,1 2 3")}) {
    double best = -1e9;
    for (std::uint64_t a = 0; a < 216; ++a)
      for (std::uint64_t b = 0; b < 216; ++b) {
        const std::vector<JointAction> seq{decode(a, 3), decode(b, 3)};
        const EpisodeScore s = evaluate_sequence(t, seq, cfg.env);
        best = std::max(best, reward(s.accuracy, s.tokens, w));
      }
    EXPECT_EQ(oracle_optimal(t, cfg.env, 2, w).best_return, best);
  }
}

TEST(OracleTest, FreeTokensMakeEveryHardTaskSolvable) {
  RunConfig cfg;
  RewardWeights w = RewardWeights::from(cfg);
  w.w_tok = 0.0;
  for (const TaskSpec& t : load("hard.suite")) {
    const OracleResult r = oracle_optimal(t, cfg.env, 2, w);
    EXPECT_EQ(r.accuracy, 1.0);
    const std::vector<JointAction> bc(2, JointAction(3, A::broadcast_all));
    EXPECT_EQ(evaluate_sequence(t, bc, cfg.env).accuracy, 1.0);
  }
}

TEST(OracleTest, RefusesOversizedSearch) {
  const TaskSpec t = task_of("3 3 -1 0.5 0 1 2");
  try {
    oracle_optimal(t, EnvConfig{}, 4, RewardWeights{});
    FAIL() << "expected refusal";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("6^12"), std::string::npos);
  }
}

TEST(EnvPropertyTest, DeterministicAndMonotone) {
  const auto suite = load("hard.suite");
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    TaskSpec t = suite[rng.index(suite.size())];
    if (rng.bernoulli(0.3)) t.adversary = static_cast<int>(rng.index(3));
    EnvState s = fresh(t);
    for (int r = 0; r < 3; ++r) {
      const CommGraph g = action_to_adjacency(decode(rng.index(216), 3), 3);
      const EnvState before = s;
      propagate(s, g, execution_order(g), EnvConfig{});
      for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(s.clues[i] & before.clues[i], before.clues[i]);
        EXPECT_GE(s.poison[i], before.poison[i]);
      }
      EXPECT_GE(s.tokens, before.tokens);
    }
    std::vector<JointAction> seq{decode(rng.index(216), 3), decode(rng.index(216), 3)};
    const EpisodeScore a = evaluate_sequence(t, seq, EnvConfig{});
    const EpisodeScore b = evaluate_sequence(t, seq, EnvConfig{});
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.tokens, b.tokens);
  }
}

TEST(EnvPropertyTest, HardSuiteIsTopologySensitive) {
  const auto suite = load("hard.suite");
  ASSERT_EQ(suite.size(), 15u);
  bool witnessed = false;
  for (const TaskSpec& t : suite) {
    EXPECT_FALSE(t.easy());
    const std::vector<JointAction> solo(2, JointAction(3, A::solo_process));
    const std::vector<JointAction> bc(2, JointAction(3, A::broadcast_all));
    witnessed |= evaluate_sequence(t, solo, EnvConfig{}).accuracy != evaluate_sequence(t, bc, EnvConfig{}).accuracy;
  }
  EXPECT_TRUE(witnessed);
  for (const TaskSpec& t : load("easy.suite")) EXPECT_TRUE(t.easy());
}

TEST(EnvPropertyTest, AdversaryNeverRaisesAccuracy) {
  const auto suite = load("hard.suite");
  Rng rng(9);
  for (int trial = 0; trial < 2000; ++trial) {
    const TaskSpec clean = suite[rng.index(suite.size())];
    TaskSpec attacked = clean;
    attacked.adversary = static_cast<int>(rng.index(3));
    const std::vector<JointAction> seq{decode(rng.index(216), 3), decode(rng.index(216), 3)};
    EXPECT_LE(evaluate_sequence(attacked, seq, EnvConfig{}).accuracy,
              evaluate_sequence(clean, seq, EnvConfig{}).accuracy);
  }
}

TEST(SuiteFormatTest, RoundTrip) {
  const auto suite = load("hard.suite");
  std::ostringstream out;
  write_suite(out, suite);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_suite(in), suite);
  const TaskSpec t = task_of("6 2 1 0.25 0,5 - 3  # trailing comment");
  EXPECT_EQ(t.clues, (std::vector<std::uint64_t>{0b100001, 0, 0b1000}));
  EXPECT_EQ(t.adversary, 1);
  EXPECT_EQ(t.poison_weight, 0.25);
  EXPECT_EQ(format_task(t), "6 2 1 0.25 0,5 - 3");
}

TEST(SuiteFormatTest, ParseErrorsNameTheLine) {
  const std::vector<std::string> bad{"3 3 -1 0.5 0",         "3 3 -1 x 0 1 2",     "3 4 -1 0.5 0 1 2",
                                     "3 3 -1 0.5 0 1 7",     "3 3 5 0.5 0 1 2",    "3 3 -1 0.5 0,,1 1 2",
                                     "3 3 -1 0.5 0 1 2\n3 3 -1 0.5 0 1"};
  for (const auto& text : bad) {
    std::istringstream in("# header\n" + text);
    EXPECT_THROW(parse_suite(in), ConfigError) << text;
  }
  std::istringstream mixed("3 3 -1 0.5 0 1 2\n3 3 -1 0.5 0 1 2 -\n");
  try {
    parse_suite(mixed);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
