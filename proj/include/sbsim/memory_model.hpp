// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

enum class RegionKind : uint8_t { Root, Realm, Normal, Secure };

constexpr Pas pas_for_region(RegionKind k) {
  switch (k) {
    case RegionKind::Root: return Pas::Root;
    case RegionKind::Realm: return Pas::Realm;
    case RegionKind::Normal: return Pas::Normal;
    case RegionKind::Secure: return Pas::Secure;
  }
  return Pas::NotAccessible;
}

constexpr std::string_view to_string(RegionKind k) {
  switch (k) {
    case RegionKind::Root: return "root";
    case RegionKind::Realm: return "realm";
    case RegionKind::Normal: return "normal";
    case RegionKind::Secure: return "secure";
  }
  return "?";
}

inline std::optional<RegionKind> region_from_string(std::string_view s) {
  if (s == "root") return RegionKind::Root;
  if (s == "realm") return RegionKind::Realm;
  if (s == "normal") return RegionKind::Normal;
  if (s == "secure") return RegionKind::Secure;
  return std::nullopt;
}

struct LayoutRegion {
  RegionKind kind;
  GranuleIdx start = 0;
  GranuleIdx count = 0;
};

/// Static carve-up of the physical address space. Regions must partition
/// [0, granules) exactly; zero-length regions are permitted.
struct MachineLayout {
  GranuleIdx granules = 1024;
  std::vector<LayoutRegion> regions;

  bool valid() const {
    std::vector<bool> seen(granules, false);
    for (const auto& r : regions) {
      if (static_cast<uint64_t>(r.start) + r.count > granules) return false;
      for (GranuleIdx g = r.start; g < r.start + r.count; g++) {
        if (seen[g]) return false;
        seen[g] = true;
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  }

  /// Default carve-up used by the CLI and most tests.
  static MachineLayout standard(GranuleIdx granules = 1024) {
    MachineLayout l;
    l.granules = granules;
    GranuleIdx root = std::max<GranuleIdx>(1, granules / 32);
    GranuleIdx realm = std::max<GranuleIdx>(1, granules / 8);
    GranuleIdx secure = std::max<GranuleIdx>(1, granules / 16);
    GranuleIdx normal = granules - root - realm - secure;
    l.regions = {
        {RegionKind::Root, 0, root},
        {RegionKind::Realm, root, realm},
        {RegionKind::Normal, root + realm, normal},
        {RegionKind::Secure, root + realm + normal, secure},
    };
    return l;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "granules=" << granules;
    for (const auto& r : regions)
      os << " " << to_string(r.kind) << "=" << r.start << "+" << r.count;
    return os.str();
  }
};

struct Granule {
  std::vector<uint8_t> content;
  explicit Granule() : content(kGranuleSize, 0) {}
  bool is_zero() const {
    return std::all_of(content.begin(), content.end(),
                       [](uint8_t b) { return b == 0; });
  }
};

/// One view of the physical address space: a total map granule -> PAS.
/// Entries change only through the root monitor.
class Gpt {
 public:
  Gpt() = default;
  Gpt(GptId id, GranuleIdx granules)
      : id_(id), entries_(granules, Pas::NotAccessible) {}

  GptId id() const { return id_; }
  GranuleIdx size() const { return static_cast<GranuleIdx>(entries_.size()); }
  Pas entry(GranuleIdx g) const { return entries_[g]; }
  void set_entry(GranuleIdx g, Pas p) { entries_[g] = p; }
  const std::vector<Pas>& entries() const { return entries_; }
  bool operator==(const Gpt&) const = default;

 private:
  GptId id_ = GptId::GptN;
  std::vector<Pas> entries_;
};

struct Core {
  CoreId id = 0;
  World sec_state = World::Normal;
  GptId active_gpt = GptId::GptN;
  std::map<GranuleIdx, Pas> tlb;  // GPC TLB; may lag the GPT until a flush
};

enum class FaultKind : uint8_t { None, GranuleProtectionFault, S2Fault };

struct CheckResult {
  bool allowed = false;
  FaultKind fault = FaultKind::None;
  Pas pas = Pas::NotAccessible;  // the PAS value the decision used
};

/// The physical machine: granules, the two GPTs, and per-core GPC state.
/// All memory traffic from simulated actors funnels through gpc_check.
class Machine {
 public:
  Machine() = default;
  Machine(const MachineLayout& layout, uint32_t cores, Trace* trace)
      : layout_(layout),
        mem_(layout.granules),
        gpt_n_(GptId::GptN, layout.granules),
        gpt_rs_(GptId::GptRs, layout.granules),
        trace_(trace) {
    for (CoreId c = 0; c < cores; c++)
      cores_.push_back(Core{c, World::Normal, GptId::GptN, {}});
  }

  const MachineLayout& layout() const { return layout_; }
  GranuleIdx granules() const { return layout_.granules; }
  uint32_t core_count() const { return static_cast<uint32_t>(cores_.size()); }
  Core& core(CoreId c) { return cores_[c]; }
  const Core& core(CoreId c) const { return cores_[c]; }

  Gpt& gpt(GptId id) { return id == GptId::GptN ? gpt_n_ : gpt_rs_; }
  const Gpt& gpt(GptId id) const { return id == GptId::GptN ? gpt_n_ : gpt_rs_; }

  std::vector<uint8_t>& granule_data(GranuleIdx g) { return mem_[g].content; }
  const std::vector<uint8_t>& granule_data(GranuleIdx g) const {
    return mem_[g].content;
  }
  bool granule_is_zero(GranuleIdx g) const { return mem_[g].is_zero(); }

  /// The per-access protection check. Fills the core's TLB from the bound
  /// GPT on a miss; faults are appended to the trace. Root bypasses lookup.
  CheckResult gpc_check(CoreId core_id, GranuleIdx g, Access a) {
    Core& c = cores_[core_id];
    if (c.sec_state == World::Root)
      return {true, FaultKind::None, Pas::AllAccessible};
    if (g >= granules()) {
      trace_fault(core_id, g, a, Pas::NotAccessible);
      return {false, FaultKind::GranuleProtectionFault, Pas::NotAccessible};
    }
    Pas pas;
    auto it = c.tlb.find(g);
    if (it != c.tlb.end()) {
      pas = it->second;
    } else {
      pas = gpt(c.active_gpt).entry(g);
      c.tlb.emplace(g, pas);
    }
    if (pas_permits(c.sec_state, pas)) return {true, FaultKind::None, pas};
    trace_fault(core_id, g, a, pas);
    return {false, FaultKind::GranuleProtectionFault, pas};
  }

  /// Side-effect-free variant for invariant sweeps: consults the TLB first
  /// (stale entries stay visible) but neither fills it nor writes the trace.
  CheckResult gpc_probe(CoreId core_id, GranuleIdx g, Access) const {
    const Core& c = cores_[core_id];
    if (c.sec_state == World::Root)
      return {true, FaultKind::None, Pas::AllAccessible};
    if (g >= granules())
      return {false, FaultKind::GranuleProtectionFault, Pas::NotAccessible};
    Pas pas;
    auto it = c.tlb.find(g);
    pas = it != c.tlb.end() ? it->second : gpt(c.active_gpt).entry(g);
    if (pas_permits(c.sec_state, pas)) return {true, FaultKind::None, pas};
    return {false, FaultKind::GranuleProtectionFault, pas};
  }

  void flush_all_gpc_tlbs() {
    for (auto& c : cores_) c.tlb.clear();
    if (trace_) trace_->emit(0, EventKind::TlbFlush, "flush_all_gpc_tlbs");
  }

  void context_switch(CoreId core_id, World to) {
    Core& c = cores_[core_id];
    World from = c.sec_state;
    c.sec_state = to;
    if (to != World::Root) c.active_gpt = gpt_for_world(to);
    c.tlb.clear();  // conservative per-core flush on every switch
    if (trace_)
      trace_->emit(core_id, EventKind::ContextSwitch, "context_switch",
                   "from=" + std::string(to_string(from)) +
                       " to=" + std::string(to_string(to)));
  }

  /// Checked byte access at a physical byte address. Touching more than one
  /// granule checks each granule in turn; a fault stops the copy cold.
  CheckResult read_bytes(CoreId core_id, uint64_t pa, std::span<uint8_t> out) {
    return access(core_id, pa, Access::Read, out, {});
  }
  CheckResult write_bytes(CoreId core_id, uint64_t pa,
                          std::span<const uint8_t> in) {
    return access(core_id, pa, Access::Write, {}, in);
  }
  CheckResult exec_check(CoreId core_id, uint64_t pa) {
    GranuleIdx g = static_cast<GranuleIdx>(pa / kGranuleSize);
    return gpc_check(core_id, g, Access::Execute);
  }

  // Root monitor's mutation path; nothing else writes GPT entries.
  void set_gpt_entry(GptId id, GranuleIdx g, Pas p) { gpt(id).set_entry(g, p); }

  std::pair<Pas, Pas> gpt_pair(GranuleIdx g) const {
    return {gpt_n_.entry(g), gpt_rs_.entry(g)};
  }

  Trace* trace() { return trace_; }
  void set_trace(Trace* t) { trace_ = t; }

 private:
  void trace_fault(CoreId core_id, GranuleIdx g, Access a, Pas pas) {
    if (!trace_) return;
    std::ostringstream args;
    args << "g=" << g << " access=" << to_string(a)
         << " world=" << to_string(cores_[core_id].sec_state)
         << " pas=" << to_string(pas);
    trace_->emit(core_id, EventKind::Gpf, "gpc_check", args.str(), "fault");
  }

  CheckResult access(CoreId core_id, uint64_t pa, Access a,
                     std::span<uint8_t> out, std::span<const uint8_t> in) {
    size_t len = a == Access::Read ? out.size() : in.size();
    size_t done = 0;
    while (done < len) {
      uint64_t addr = pa + done;
      GranuleIdx g = static_cast<GranuleIdx>(addr / kGranuleSize);
      uint64_t off = addr % kGranuleSize;
      size_t chunk = std::min<uint64_t>(len - done, kGranuleSize - off);
      CheckResult r = gpc_check(core_id, g, a);
      if (!r.allowed) return r;
      if (a == Access::Read)
        std::memcpy(out.data() + done, mem_[g].content.data() + off, chunk);
      else
        std::memcpy(mem_[g].content.data() + off, in.data() + done, chunk);
      done += chunk;
    }
    return {true, FaultKind::None, Pas::AllAccessible};
  }

  MachineLayout layout_;
  std::vector<Granule> mem_;
  Gpt gpt_n_, gpt_rs_;
  std::vector<Core> cores_;
  Trace* trace_ = nullptr;
};

/// Scoped world switch for dispatch paths: enters `to` if the core is not
/// already there and restores the previous world on scope exit.
class WorldGuard {
 public:
  WorldGuard(Machine& m, CoreId core, World to)
      : machine_(m), core_(core), prev_(m.core(core).sec_state) {
    if (prev_ != to) machine_.context_switch(core_, to);
  }
  ~WorldGuard() {
    if (machine_.core(core_).sec_state != prev_)
      machine_.context_switch(core_, prev_);
  }
  WorldGuard(const WorldGuard&) = delete;
  WorldGuard& operator=(const WorldGuard&) = delete;

 private:
  Machine& machine_;
  CoreId core_;
  World prev_;
};

}  // namespace sbsim
