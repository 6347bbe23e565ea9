// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#include "sbsim/adversary.hpp"

#include <gtest/gtest.h>

namespace sbsim {
namespace {

TEST(AttackSuite, EveryScenarioReportsItsExpectedOutcome) {
  for (const auto& attack : attack_catalog()) {
    AttackOutcome out = attack.run();
    EXPECT_TRUE(out.pass) << attack.name << ": " << out.detail;
  }
}

TEST(AttackSuite, CatalogCoversTheAnalysisSurface) {
  auto catalog = attack_catalog();
  EXPECT_GE(catalog.size(), 8u);
  const char* required[] = {
      "boomerang_deref",      "secure_world_read",    "split_view_race",
      "toctou_exclusive",     "code_injection_shared", "vq_pointer_escape",
      "forged_mmio",          "disallowed_device_launch",
      "device_data_tamper"};
  for (const char* name : required) {
    bool found = false;
    for (const auto& a : catalog)
      if (a.name == name) found = true;
    EXPECT_TRUE(found) << name;
  }
}

// The transition-system oracle: on a small all-normal machine, every call
// sequence reaches exactly the four dynamic pair states and nothing else.
TEST(TransitionSystem, ExhaustiveEnumerationMatchesExpectedPairs) {
  PairEnumeration e = enumerate_gpt_transition_system(4, 6);
  EXPECT_TRUE(e.closure_ok);
  std::set<std::string> expected = {"normal/na", "realm/realm", "normal/realm",
                                    "na/realm"};
  EXPECT_EQ(e.pairs_reached, expected);
  EXPECT_GT(e.states_visited, 1u);
}

TEST(TransitionSystem, SingleGranuleDepthCoversAllPairsByDepthThree) {
  PairEnumeration e = enumerate_gpt_transition_system(1, 3);
  EXPECT_TRUE(e.closure_ok);
  EXPECT_EQ(e.pairs_reached.size(), 4u);
}

TEST(Fuzz, CleanRunHasNoViolations) {
  FuzzConfig cfg;
  cfg.seed = 99;
  cfg.steps = 1500;
  FuzzReport rep = fuzz(cfg);
  EXPECT_TRUE(rep.violations.empty())
      << rep.violations.size() << " violations, first: "
      << rep.violations.front().invariant;
  EXPECT_EQ(rep.steps, 1500u);
}

TEST(Fuzz, ReachesAllSixLegalPairStates) {
  FuzzConfig cfg;
  cfg.seed = 1;
  cfg.steps = 2000;
  FuzzReport rep = fuzz(cfg);
  EXPECT_TRUE(rep.violations.empty());
  std::set<std::string> expected = {"normal/na",   "realm/realm",
                                    "normal/realm", "na/realm",
                                    "root/root",   "secure/secure"};
  EXPECT_EQ(rep.pairs_reached, expected);
}

TEST(Fuzz, ZeroStepsLeavesBootInvariantsIntact) {
  FuzzConfig cfg;
  cfg.steps = 0;
  FuzzReport rep = fuzz(cfg);
  EXPECT_TRUE(rep.violations.empty());
  EXPECT_TRUE(rep.coverage.empty());
  EXPECT_EQ(rep.steps, 0u);
}

TEST(Fuzz, IdenticalConfigsProduceIdenticalReportsAndTraces) {
  FuzzConfig cfg;
  cfg.seed = 1234;
  cfg.steps = 800;
  FuzzReport a = fuzz(cfg);
  FuzzReport b = fuzz(cfg);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.trace_text, b.trace_text);
  EXPECT_FALSE(a.trace_text.empty());
}

TEST(Fuzz, DifferentSeedsDiverge) {
  FuzzConfig a, b;
  a.seed = 1;
  b.seed = 2;
  a.steps = b.steps = 300;
  EXPECT_NE(fuzz(a).trace_text, fuzz(b).trace_text);
}

TEST(Fuzz, EnabledCallFilterRestrictsCoverage) {
  FuzzConfig cfg;
  cfg.seed = 5;
  cfg.steps = 200;
  cfg.enabled_calls = {"mem_rw", "flush"};
  FuzzReport rep = fuzz(cfg);
  for (const auto& [call, n] : rep.coverage)
    EXPECT_TRUE(call == std::string("mem_rw") || call == std::string("flush"))
        << call;
}

// Mutation sensitivity: disabling any one defensive check must surface at
// least one violation within a modest budget.
struct MutationCase {
  const char* name;
  void (*set)(Hooks&);
  const char* expected_substr;
};

class MutationTest : public ::testing::TestWithParam<MutationCase> {};

TEST_P(MutationTest, SeededBugIsDetected) {
  const MutationCase& mc = GetParam();
  FuzzConfig cfg;
  cfg.seed = 7;
  cfg.steps = 3000;
  mc.set(cfg.hooks);
  FuzzReport rep = fuzz(cfg);
  ASSERT_GE(rep.violations.size(), 1u) << mc.name;
  bool matched = false;
  for (const auto& v : rep.violations)
    if (v.invariant.find(mc.expected_substr) != std::string::npos)
      matched = true;
  EXPECT_TRUE(matched) << mc.name << ": first violation was "
                       << rep.violations.front().invariant;
}

INSTANTIATE_TEST_SUITE_P(
    AllHooks, MutationTest,
    ::testing::Values(
        MutationCase{"skip_log_check",
                     [](Hooks& h) { h.skip_log_check = true; },
                     "auth_soundness"},
        MutationCase{"skip_flush", [](Hooks& h) { h.skip_flush = true; },
                     "isolation_matrix"},
        MutationCase{"skip_nx", [](Hooks& h) { h.skip_nx = true; }, "shared_nx"},
        MutationCase{"skip_overlap_check",
                     [](Hooks& h) { h.skip_overlap_check = true; }, "sandbox_"},
        MutationCase{"skip_mmio_gate",
                     [](Hooks& h) { h.skip_mmio_gate = true; },
                     "mmio_gate"}),
    [](const ::testing::TestParamInfo<MutationCase>& info) {
      return info.param.name;
    });

TEST(Invariants, CheckerAcceptsFreshlyBootedSystem) {
  System sys;
  ASSERT_TRUE(sys.boot());
  InvariantChecker chk(sys);
  EXPECT_TRUE(chk.all(true).empty());
}

TEST(Invariants, CheckerFlagsIllegalPairAndForeignS2Mapping) {
  System sys;
  ASSERT_TRUE(sys.boot());
  // Plant an illegal pair directly.
  GranuleIdx g = 0;
  for (GranuleIdx i = 0; i < sys.machine().granules(); i++)
    if (sys.machine().gpt_pair(i) == std::pair{Pas::Normal, Pas::NotAccessible}) {
      g = i;
      break;
    }
  sys.machine().set_gpt_entry(GptId::GptN, g, Pas::Secure);
  InvariantChecker chk(sys);
  auto v = chk.closure();
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("closure"), std::string::npos);
}

}  // namespace
}  // namespace sbsim
