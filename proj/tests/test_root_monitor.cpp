// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#include "sbsim/root_monitor.hpp"

#include <gtest/gtest.h>

#include "sbsim/memory_model.hpp"

namespace sbsim {
namespace {

class RootMonitorTest : public ::testing::Test {
 protected:
  void SetUp() override { build(MachineLayout::standard(64)); }

  void build(const MachineLayout& layout) {
    trace_ = std::make_unique<Trace>();
    machine_ = std::make_unique<Machine>(layout, 2, trace_.get());
    root_ = std::make_unique<RootMonitor>(machine_.get(), trace_.get(), &hooks_);
    ASSERT_TRUE(root_->boot_create_gpts());
  }

  GranuleIdx normal_granule(int nth = 0) {
    int seen = 0;
    for (GranuleIdx g = 0; g < machine_->granules(); g++)
      if (machine_->gpt_pair(g) == std::pair{Pas::Normal, Pas::NotAccessible})
        if (seen++ == nth) return g;
    ADD_FAILURE() << "no normal granule";
    return 0;
  }

  RootStatus delegate(GranuleIdx g) {
    root_->log_rmi("rmi_granule_delegate", g, 1);
    return root_->smc_delegate(0, g);
  }
  RootStatus share(GranuleIdx g) {
    root_->log_rmi("rmi_rtt_map_unprotected", g, 1);
    return root_->smc_2gpt_ns_share(0, g);
  }
  RootStatus undelegate(GranuleIdx g) {
    root_->log_rmi("rmi_granule_undelegate", g, 1);
    return root_->smc_undelegate(0, g);
  }

  Hooks hooks_;
  std::unique_ptr<Trace> trace_;
  std::unique_ptr<Machine> machine_;
  std::unique_ptr<RootMonitor> root_;
};

TEST_F(RootMonitorTest, BootTagsRegionsAndHidesNormalInGptRs) {
  MachineLayout layout;
  layout.granules = 20;
  layout.regions = {{RegionKind::Root, 0, 4},
                    {RegionKind::Realm, 4, 4},
                    {RegionKind::Normal, 8, 8},
                    {RegionKind::Secure, 16, 4}};
  build(layout);
  for (GranuleIdx g = 8; g < 16; g++)
    EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Normal, Pas::NotAccessible}));
  for (GranuleIdx g = 0; g < 4; g++)
    EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Root, Pas::Root}));
  for (GranuleIdx g = 4; g < 8; g++)
    EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Realm, Pas::Realm}));
  for (GranuleIdx g = 16; g < 20; g++)
    EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Secure, Pas::Secure}));
}

TEST_F(RootMonitorTest, BootWithZeroNormalMakesGptsEqual) {
  MachineLayout layout;
  layout.granules = 8;
  layout.regions = {{RegionKind::Root, 0, 2},
                    {RegionKind::Realm, 2, 4},
                    {RegionKind::Secure, 6, 2}};
  build(layout);
  EXPECT_EQ(machine_->gpt(GptId::GptN).entries(),
            machine_->gpt(GptId::GptRs).entries());
}

TEST_F(RootMonitorTest, BootRejectsOverlappingLayout) {
  Trace trace;
  MachineLayout layout;
  layout.granules = 8;
  layout.regions = {{RegionKind::Realm, 0, 5}, {RegionKind::Normal, 4, 4}};
  Machine machine(layout, 1, &trace);
  RootMonitor root(&machine, &trace, &hooks_);
  EXPECT_FALSE(root.boot_create_gpts());
}

TEST_F(RootMonitorTest, LogKeepsMultiplicity) {
  GranuleIdx g = normal_granule();
  root_->log_rmi("rmi_granule_delegate", g, 1);
  root_->log_rmi("rmi_granule_delegate", g, 1);
  EXPECT_EQ(root_->pending_count("rmi_granule_delegate", g, 1), 2u);
  // One consumption leaves the second authorization in place.
  EXPECT_EQ(root_->smc_delegate(0, g), RootStatus::Ok);
  EXPECT_EQ(root_->pending_count("rmi_granule_delegate", g, 1), 1u);
}

TEST_F(RootMonitorTest, DelegateHappyPath) {
  GranuleIdx g = normal_granule();
  EXPECT_EQ(delegate(g), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Realm, Pas::Realm}));
  // The mutation is followed by a global flush.
  const auto& events = trace_->events();
  bool flush_after = false;
  for (size_t i = 0; i < events.size(); i++)
    if (events[i].kind == EventKind::TlbFlush && i > 0) flush_after = true;
  EXPECT_TRUE(flush_after);
}

TEST_F(RootMonitorTest, DelegateWithoutPendingDenied) {
  GranuleIdx g = normal_granule();
  EXPECT_EQ(root_->smc_delegate(0, g), RootStatus::Denied);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Normal, Pas::NotAccessible}));
}

// Enumerates all 36 (GptN, GptRs) precondition pairs: only
// (Normal, NotAccessible) admits delegation.
TEST_F(RootMonitorTest, DelegatePreconditionTable) {
  const Pas values[] = {Pas::Root, Pas::Realm, Pas::Normal,
                        Pas::Secure, Pas::NotAccessible, Pas::AllAccessible};
  for (Pas n : values) {
    for (Pas rs : values) {
      build(MachineLayout::standard(64));
      GranuleIdx g = normal_granule();
      machine_->set_gpt_entry(GptId::GptN, g, n);
      machine_->set_gpt_entry(GptId::GptRs, g, rs);
      machine_->flush_all_gpc_tlbs();
      bool expect_ok = n == Pas::Normal && rs == Pas::NotAccessible;
      EXPECT_EQ(delegate(g) == RootStatus::Ok, expect_ok)
          << "pair " << to_string(n) << "/" << to_string(rs);
    }
  }
}

TEST_F(RootMonitorTest, UndelegateRequiresScrubbedContent) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  machine_->granule_data(g)[17] = 0x5A;
  EXPECT_EQ(undelegate(g), RootStatus::ScrubViolation);
  machine_->granule_data(g)[17] = 0;
  EXPECT_EQ(undelegate(g), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Normal, Pas::NotAccessible}));
}

TEST_F(RootMonitorTest, UndelegateOfNormalGranuleDenied) {
  GranuleIdx g = normal_granule();
  EXPECT_EQ(undelegate(g), RootStatus::Denied);
}

TEST_F(RootMonitorTest, ShareTransition) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  EXPECT_EQ(share(g), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Normal, Pas::Realm}));
}

TEST_F(RootMonitorTest, ShareOfUndelegatedDenied) {
  GranuleIdx g = normal_granule();
  EXPECT_EQ(share(g), RootStatus::Denied);
}

TEST_F(RootMonitorTest, ShareWithoutPendingDenied) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  EXPECT_EQ(root_->smc_2gpt_ns_share(0, g), RootStatus::Denied);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Realm, Pas::Realm}));
}

TEST_F(RootMonitorTest, ExclusiveAccessToggles) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  ASSERT_EQ(share(g), RootStatus::Ok);
  EXPECT_EQ(root_->smc_2gpt_ex_access(0, g, true), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::NotAccessible, Pas::Realm}));
  EXPECT_EQ(root_->smc_2gpt_ex_access(0, g, false), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Normal, Pas::Realm}));
}

TEST_F(RootMonitorTest, ExclusiveAccessOnPrivateGranuleDenied) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  EXPECT_EQ(root_->smc_2gpt_ex_access(0, g, true), RootStatus::Denied);
}

TEST_F(RootMonitorTest, UnshareReturnsToRealmPrivate) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  ASSERT_EQ(share(g), RootStatus::Ok);
  EXPECT_EQ(root_->smc_2gpt_ns_unshare(0, g), RootStatus::Ok);
  EXPECT_EQ(machine_->gpt_pair(g), (std::pair{Pas::Realm, Pas::Realm}));
}

TEST_F(RootMonitorTest, StaticRegionsAreImmutable) {
  GranuleIdx root_g = 0;
  ASSERT_EQ(machine_->gpt_pair(root_g), (std::pair{Pas::Root, Pas::Root}));
  EXPECT_EQ(delegate(root_g), RootStatus::Denied);
  // The RMM's own carve-out is (Realm, Realm) but must reject share and
  // undelegate: it never entered the delegation pool.
  GranuleIdx rmm_g = machine_->layout().regions[1].start;
  ASSERT_EQ(machine_->gpt_pair(rmm_g), (std::pair{Pas::Realm, Pas::Realm}));
  EXPECT_EQ(share(rmm_g), RootStatus::Denied);
  EXPECT_EQ(undelegate(rmm_g), RootStatus::Denied);
}

TEST_F(RootMonitorTest, OutOfRangeGranuleDenied) {
  root_->log_rmi("rmi_granule_delegate", machine_->granules() + 3, 1);
  EXPECT_EQ(root_->smc_delegate(0, machine_->granules() + 3), RootStatus::Denied);
}

// Mutual isolation at this layer: after a delegate + share sequence, the
// post-flush protection decisions track the tables exactly.
TEST_F(RootMonitorTest, PostFlushIsolationMatrixHolds) {
  GranuleIdx g = normal_granule();
  ASSERT_EQ(delegate(g), RootStatus::Ok);
  machine_->context_switch(0, World::Normal);
  machine_->context_switch(1, World::Realm);
  EXPECT_FALSE(machine_->gpc_check(0, g, Access::Read).allowed);
  EXPECT_TRUE(machine_->gpc_check(1, g, Access::Read).allowed);
  ASSERT_EQ(share(g), RootStatus::Ok);
  EXPECT_TRUE(machine_->gpc_check(0, g, Access::Read).allowed);
  EXPECT_TRUE(machine_->gpc_check(1, g, Access::Read).allowed);
  ASSERT_EQ(root_->smc_2gpt_ex_access(0, g, true), RootStatus::Ok);
  EXPECT_FALSE(machine_->gpc_check(0, g, Access::Read).allowed);
  EXPECT_TRUE(machine_->gpc_check(1, g, Access::Read).allowed);
}

TEST_F(RootMonitorTest, LockIsReleasedAfterEachSmc) {
  GranuleIdx g = normal_granule();
  delegate(g);
  EXPECT_FALSE(root_->lock_holder().has_value());
}

}  // namespace
}  // namespace sbsim
