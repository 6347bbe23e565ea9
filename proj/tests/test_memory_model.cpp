// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#include "sbsim/memory_model.hpp"

#include <gtest/gtest.h>

#include "sbsim/trace.hpp"
#include "support/oracles.hpp"

namespace sbsim {
namespace {

class MemoryModelTest : public ::testing::Test {
 protected:
  void SetUp() override {
    MachineLayout layout;
    layout.granules = 64;
    layout.regions = {{RegionKind::Normal, 0, 64}};
    machine_ = std::make_unique<Machine>(layout, 2, &trace_);
    for (GranuleIdx g = 0; g < 64; g++) {
      machine_->set_gpt_entry(GptId::GptN, g, Pas::Normal);
      machine_->set_gpt_entry(GptId::GptRs, g, Pas::NotAccessible);
    }
  }

  void set_pair(GranuleIdx g, Pas n, Pas rs) {
    machine_->set_gpt_entry(GptId::GptN, g, n);
    machine_->set_gpt_entry(GptId::GptRs, g, rs);
    machine_->flush_all_gpc_tlbs();
  }

  Trace trace_;
  std::unique_ptr<Machine> machine_;
};

// All 4 worlds x 6 PAS values x 3 access kinds against the longhand table.
TEST_F(MemoryModelTest, BruteForceAccessMatrix) {
  const World worlds[] = {World::Root, World::Realm, World::Normal,
                          World::Secure};
  const Pas values[] = {Pas::Root, Pas::Realm, Pas::Normal,
                        Pas::Secure, Pas::NotAccessible, Pas::AllAccessible};
  const Access accesses[] = {Access::Read, Access::Write, Access::Execute};
  for (World w : worlds) {
    machine_->context_switch(0, w);
    for (Pas p : values) {
      for (Access a : accesses) {
        machine_->set_gpt_entry(GptId::GptN, 5, p);
        machine_->set_gpt_entry(GptId::GptRs, 5, p);
        machine_->flush_all_gpc_tlbs();
        CheckResult r = machine_->gpc_check(0, 5, a);
        EXPECT_EQ(r.allowed, oracle::access_allowed(w, p))
            << "world=" << to_string(w) << " pas=" << to_string(p)
            << " access=" << to_string(a);
      }
    }
  }
}

TEST_F(MemoryModelTest, NormalWorldReadOfRealmGranuleFaults) {
  set_pair(3, Pas::Realm, Pas::Realm);
  CheckResult r = machine_->gpc_check(0, 3, Access::Read);
  EXPECT_FALSE(r.allowed);
  EXPECT_EQ(r.fault, FaultKind::GranuleProtectionFault);
  EXPECT_EQ(trace_.counters().gpfs, 1u);
}

TEST_F(MemoryModelTest, SameWorldWriteAllowed) {
  std::array<uint8_t, 4> data{1, 2, 3, 4};
  EXPECT_TRUE(machine_->write_bytes(0, 7 * kGranuleSize, data).allowed);
  EXPECT_EQ(machine_->granule_data(7)[0], 1);
}

TEST_F(MemoryModelTest, RealmCoreReadOfNotAccessibleFaults) {
  machine_->context_switch(0, World::Realm);
  // Boot view: normal memory is not-accessible in GPT_rs.
  CheckResult r = machine_->gpc_check(0, 9, Access::Read);
  EXPECT_FALSE(r.allowed);
  EXPECT_EQ(r.pas, Pas::NotAccessible);
}

TEST_F(MemoryModelTest, RealmCoreReadOfSecureFaults) {
  set_pair(9, Pas::Secure, Pas::Secure);
  machine_->context_switch(0, World::Realm);
  EXPECT_FALSE(machine_->gpc_check(0, 9, Access::Read).allowed);
}

TEST_F(MemoryModelTest, StaleTlbEntrySurvivesUntilFlush) {
  // Prime the TLB with the old mapping.
  EXPECT_TRUE(machine_->gpc_check(0, 4, Access::Read).allowed);
  // GPT changes without a flush: the stale entry still answers.
  machine_->set_gpt_entry(GptId::GptN, 4, Pas::Realm);
  EXPECT_TRUE(machine_->gpc_check(0, 4, Access::Read).allowed);
  // After the flush the updated entry is fetched.
  machine_->flush_all_gpc_tlbs();
  EXPECT_FALSE(machine_->gpc_check(0, 4, Access::Read).allowed);
}

TEST_F(MemoryModelTest, FlushOnEmptyTlbsOnlyTraces) {
  uint64_t events_before = trace_.events().size();
  machine_->flush_all_gpc_tlbs();
  EXPECT_EQ(trace_.events().size(), events_before + 1);
  EXPECT_EQ(trace_.events().back().kind, EventKind::TlbFlush);
}

TEST_F(MemoryModelTest, ContextSwitchRebindsGpt) {
  machine_->context_switch(0, World::Realm);
  EXPECT_EQ(machine_->core(0).active_gpt, GptId::GptRs);
  machine_->context_switch(0, World::Normal);
  EXPECT_EQ(machine_->core(0).active_gpt, GptId::GptN);
  machine_->context_switch(0, World::Secure);
  EXPECT_EQ(machine_->core(0).active_gpt, GptId::GptRs);
}

TEST_F(MemoryModelTest, SelfTransitionStillCounts) {
  machine_->context_switch(0, World::Secure);
  uint64_t before = trace_.counters().context_switches;
  machine_->context_switch(0, World::Secure);
  EXPECT_EQ(trace_.counters().context_switches, before + 1);
  EXPECT_EQ(machine_->core(0).active_gpt, GptId::GptRs);
}

TEST_F(MemoryModelTest, ContextSwitchFlushesSwitchingCoreOnly) {
  EXPECT_TRUE(machine_->gpc_check(0, 4, Access::Read).allowed);
  EXPECT_TRUE(machine_->gpc_check(1, 4, Access::Read).allowed);
  machine_->context_switch(0, World::Secure);
  EXPECT_TRUE(machine_->core(0).tlb.empty());
  EXPECT_FALSE(machine_->core(1).tlb.empty());
}

// View partition: the binding always matches sec_state after any sequence
// of switches.
TEST_F(MemoryModelTest, ViewPartitionInvariant) {
  const World seq[] = {World::Realm, World::Secure, World::Normal,
                       World::Root, World::Realm, World::Normal};
  for (World w : seq) {
    machine_->context_switch(1, w);
    if (w == World::Normal) {
      EXPECT_EQ(machine_->core(1).active_gpt, GptId::GptN);
    }
    if (w == World::Realm || w == World::Secure) {
      EXPECT_EQ(machine_->core(1).active_gpt, GptId::GptRs);
    }
  }
}

// Fault totality: replaying the same access pattern yields identical
// decisions and an identical trace.
TEST_F(MemoryModelTest, ReplayYieldsIdenticalFaultDecisions) {
  auto run = [](std::string& trace_out) {
    Trace trace;
    MachineLayout layout;
    layout.granules = 16;
    layout.regions = {{RegionKind::Normal, 0, 16}};
    Machine m(layout, 2, &trace);
    for (GranuleIdx g = 0; g < 16; g++) {
      m.set_gpt_entry(GptId::GptN, g, g % 2 ? Pas::Realm : Pas::Normal);
      m.set_gpt_entry(GptId::GptRs, g, g % 3 ? Pas::NotAccessible : Pas::Realm);
    }
    std::vector<bool> decisions;
    for (int i = 0; i < 50; i++) {
      CoreId c = i % 2;
      if (i % 7 == 0) m.context_switch(c, i % 14 ? World::Realm : World::Normal);
      decisions.push_back(m.gpc_check(c, (i * 5) % 16, Access::Read).allowed);
    }
    trace_out = trace.to_text();
    return decisions;
  };
  std::string t1, t2;
  auto d1 = run(t1);
  auto d2 = run(t2);
  EXPECT_EQ(d1, d2);
  EXPECT_EQ(t1, t2);
}

TEST_F(MemoryModelTest, OutOfRangeGranuleFaults) {
  EXPECT_FALSE(machine_->gpc_check(0, 64, Access::Read).allowed);
  EXPECT_FALSE(machine_->gpc_check(0, 70, Access::Write).allowed);
}

TEST_F(MemoryModelTest, RootBypassesGpt) {
  set_pair(2, Pas::NotAccessible, Pas::NotAccessible);
  machine_->context_switch(0, World::Root);
  EXPECT_TRUE(machine_->gpc_check(0, 2, Access::Write).allowed);
}

TEST_F(MemoryModelTest, CrossGranuleAccessChecksEveryGranule) {
  set_pair(11, Pas::Realm, Pas::Realm);
  std::vector<uint8_t> buf(kGranuleSize, 0xAA);
  // Write straddling granule 10 (normal) into granule 11 (realm): the copy
  // must stop at the protection boundary.
  CheckResult r = machine_->write_bytes(0, 10 * kGranuleSize + 2048, buf);
  EXPECT_FALSE(r.allowed);
  EXPECT_EQ(machine_->granule_data(10)[2048], 0xAA);
  EXPECT_TRUE(machine_->granule_is_zero(11));
}

TEST_F(MemoryModelTest, LayoutValidation) {
  MachineLayout ok = MachineLayout::standard(128);
  EXPECT_TRUE(ok.valid());
  MachineLayout overlap;
  overlap.granules = 8;
  overlap.regions = {{RegionKind::Realm, 0, 5}, {RegionKind::Normal, 4, 4}};
  EXPECT_FALSE(overlap.valid());
  MachineLayout gap;
  gap.granules = 8;
  gap.regions = {{RegionKind::Realm, 0, 4}};
  EXPECT_FALSE(gap.valid());
}

}  // namespace
}  // namespace sbsim
