// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <functional>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/system.hpp"

namespace sbsim {

struct Violation {
  uint64_t step = 0;
  std::string call;
  std::string invariant;
};

inline bool legal_gpt_pair(std::pair<Pas, Pas> p) {
  return p == std::pair{Pas::Normal, Pas::NotAccessible} ||
         p == std::pair{Pas::Realm, Pas::Realm} ||
         p == std::pair{Pas::Normal, Pas::Realm} ||
         p == std::pair{Pas::NotAccessible, Pas::Realm} ||
         p == std::pair{Pas::Root, Pas::Root} ||
         p == std::pair{Pas::Secure, Pas::Secure};
}

inline std::string pair_name(std::pair<Pas, Pas> p) {
  return std::string(to_string(p.first)) + "/" + std::string(to_string(p.second));
}

/// Checks the four security primitives plus granule-state closure against a
/// live system. The isolation matrix is meaningful only at flush barriers;
/// callers run it right after GPT-mutating operations.
class InvariantChecker {
 public:
  explicit InvariantChecker(System& sys) : sys_(sys) {}

  std::vector<std::string> closure() {
    std::vector<std::string> v;
    for (GranuleIdx g = 0; g < sys_.machine().granules(); g++) {
      auto p = sys_.machine().gpt_pair(g);
      if (!legal_gpt_pair(p))
        v.push_back("closure g=" + std::to_string(g) + " pair=" + pair_name(p));
    }
    return v;
  }

  /// Sandboxing: every granule has at most one owning realm, and every
  /// stage-2 mapping points at a granule owned by that same realm.
  std::vector<std::string> ownership() {
    std::vector<std::string> v;
    std::map<GranuleIdx, RealmId> seen;
    for (const auto& [id, r] : sys_.rmm().realms()) {
      if (r.state == RealmState::Destroyed) continue;
      for (const auto& [page, e] : r.s2) {
        auto it = seen.find(e.granule);
        if (it != seen.end() && it->second != id) {
          v.push_back("sandbox_overlap g=" + std::to_string(e.granule) +
                      " realms=" + std::to_string(it->second) + "," +
                      std::to_string(id));
        }
        seen.emplace(e.granule, id);
        auto owner = sys_.rmm().owner_of(e.granule);
        if (!owner || *owner != id)
          v.push_back("sandbox_owner g=" + std::to_string(e.granule) +
                      " realm=" + std::to_string(id));
      }
    }
    return v;
  }

  /// Mutual isolation: per-core protection decisions (through the
  /// possibly-stale TLB) match the bound GPT exactly. Valid post-flush.
  std::vector<std::string> isolation_matrix() {
    std::vector<std::string> v;
    Machine& m = sys_.machine();
    for (CoreId c = 0; c < m.core_count(); c++) {
      const Core& core = m.core(c);
      if (core.sec_state == World::Root) continue;
      for (GranuleIdx g = 0; g < m.granules(); g++) {
        bool expected =
            pas_permits(core.sec_state, m.gpt(core.active_gpt).entry(g));
        bool actual = m.gpc_probe(c, g, Access::Read).allowed;
        if (expected != actual)
          v.push_back("isolation_matrix core=" + std::to_string(c) +
                      " g=" + std::to_string(g));
      }
    }
    return v;
  }

  /// Interface hardening: shared regions are contiguous, never executable,
  /// not grown after activation, and MMIO emulation only happened for
  /// marked pages.
  std::vector<std::string> interface_hardening() {
    std::vector<std::string> v;
    for (const auto& [id, r] : sys_.rmm().realms()) {
      if (r.state == RealmState::Destroyed) continue;
      if (r.shared_region) {
        auto [base, pages] = *r.shared_region;
        for (uint64_t i = 0; i < pages; i++) {
          uint64_t page = (base >> kPageShift) + i;
          auto it = r.s2.find(page);
          if (it == r.s2.end()) {
            v.push_back("shared_contiguity realm=" + std::to_string(id) +
                        " page=" + std::to_string(i));
            continue;
          }
          if (it->second.perms & kPermX)
            v.push_back("shared_nx realm=" + std::to_string(id) +
                        " page=" + std::to_string(i));
        }
        if (r.state == RealmState::Active && r.shared_pages_at_activate &&
            pages != *r.shared_pages_at_activate)
          v.push_back("shared_seal realm=" + std::to_string(id));
      }
    }
    if (sys_.rmm().mmio_unmarked_emulations() > reported_unmarked_) {
      v.push_back("mmio_gate count=" +
                  std::to_string(sys_.rmm().mmio_unmarked_emulations()));
      reported_unmarked_ = sys_.rmm().mmio_unmarked_emulations();
    }
    return v;
  }

  /// Attestation: the running measurement equals an independent fold of
  /// the log.
  std::vector<std::string> measurement_chain() {
    std::vector<std::string> v;
    for (const auto& [id, r] : sys_.rmm().realms()) {
      Digest256 folded{};
      for (const auto& e : r.measurement.log)
        folded = extend_digest(folded, Measurement::entry_digest(e));
      if (folded != r.measurement.value)
        v.push_back("measurement_chain realm=" + std::to_string(id));
    }
    return v;
  }

  /// Trace audit: every applied delegate/undelegate/share carried a consumed
  /// request-log authorization. Incremental over the trace.
  std::vector<std::string> authorization_audit() {
    std::vector<std::string> v;
    const auto& events = sys_.trace().events();
    for (; audit_pos_ < events.size(); audit_pos_++) {
      const Event& e = events[audit_pos_];
      if (e.kind != EventKind::Smc || e.outcome != "ok") continue;
      if (e.name != "smc_granule_delegate" &&
          e.name != "smc_granule_undelegate" && e.name != "smc_2gpt_ns_share")
        continue;
      if (e.args.find("auth=log") == std::string::npos)
        v.push_back("auth_soundness step=" + std::to_string(e.step) +
                    " op=" + e.name);
    }
    return v;
  }

  std::vector<std::string> all(bool with_isolation) {
    std::vector<std::string> v;
    auto add = [&](std::vector<std::string> more) {
      v.insert(v.end(), more.begin(), more.end());
    };
    add(closure());
    add(ownership());
    if (with_isolation) add(isolation_matrix());
    add(interface_hardening());
    add(measurement_chain());
    add(authorization_audit());
    return v;
  }

 private:
  System& sys_;
  size_t audit_pos_ = 0;
  uint64_t reported_unmarked_ = 0;
};

// ---------------------------------------------------------------------------
// Exhaustive enumeration of the two-GPT transition system.
// ---------------------------------------------------------------------------

struct PairEnumeration {
  std::set<std::string> pairs_reached;
  bool closure_ok = true;
  uint64_t states_visited = 0;
};

/// Breadth-first walk of the root-monitor interface on a small all-normal
/// machine: every call sequence up to `depth` is covered by exploring the
/// state graph (authorization is granted per attempted call, so the request
/// log never carries state between steps).
inline PairEnumeration enumerate_gpt_transition_system(GranuleIdx granules,
                                                       int depth) {
  enum Op : uint8_t { Delegate, Undelegate, Share, Unshare, ExOn, ExOff, NumOps };
  using StateKey = std::vector<uint8_t>;  // per-granule pair code

  auto pair_code = [](std::pair<Pas, Pas> p) -> uint8_t {
    if (p == std::pair{Pas::Normal, Pas::NotAccessible}) return 0;
    if (p == std::pair{Pas::Realm, Pas::Realm}) return 1;
    if (p == std::pair{Pas::Normal, Pas::Realm}) return 2;
    if (p == std::pair{Pas::NotAccessible, Pas::Realm}) return 3;
    return 255;
  };

  PairEnumeration out;
  MachineLayout layout;
  layout.granules = granules;
  layout.regions = {{RegionKind::Normal, 0, granules}};

  // Replays one op sequence from boot; returns the resulting state key and
  // folds every intermediate pair into the result set.
  auto apply = [&](const std::vector<std::pair<Op, GranuleIdx>>& seq)
      -> std::optional<StateKey> {
    Hooks hooks;
    Trace trace;
    Machine machine(layout, 1, &trace);
    RootMonitor root(&machine, &trace, &hooks);
    if (!root.boot_create_gpts()) return std::nullopt;
    for (auto [op, g] : seq) {
      switch (op) {
        case Delegate:
          root.log_rmi("rmi_granule_delegate", g, 0);
          root.smc_delegate(0, g);
          break;
        case Undelegate:
          root.log_rmi("rmi_granule_undelegate", g, 0);
          root.smc_undelegate(0, g);
          break;
        case Share:
          root.log_rmi("rmi_rtt_map_unprotected", g, 0);
          root.smc_2gpt_ns_share(0, g);
          break;
        case Unshare:
          root.smc_2gpt_ns_unshare(0, g);
          break;
        case ExOn:
          root.smc_2gpt_ex_access(0, g, true);
          break;
        case ExOff:
          root.smc_2gpt_ex_access(0, g, false);
          break;
        default:
          break;
      }
    }
    StateKey key(granules);
    for (GranuleIdx g = 0; g < granules; g++) {
      auto p = machine.gpt_pair(g);
      uint8_t code = pair_code(p);
      if (code == 255) out.closure_ok = false;
      key[g] = code;
      out.pairs_reached.insert(pair_name(p));
    }
    return key;
  };

  std::set<StateKey> visited;
  std::queue<std::vector<std::pair<Op, GranuleIdx>>> frontier;
  auto initial = apply({});
  if (!initial) return out;
  visited.insert(*initial);
  frontier.push({});
  while (!frontier.empty()) {
    auto seq = frontier.front();
    frontier.pop();
    if (static_cast<int>(seq.size()) >= depth) continue;
    for (uint8_t op = 0; op < NumOps; op++) {
      for (GranuleIdx g = 0; g < granules; g++) {
        auto next = seq;
        next.emplace_back(static_cast<Op>(op), g);
        auto key = apply(next);
        if (key && visited.insert(*key).second) frontier.push(next);
      }
    }
  }
  out.states_visited = visited.size();
  return out;
}

// ---------------------------------------------------------------------------
// Scripted attack scenarios.
// ---------------------------------------------------------------------------

struct AttackOutcome {
  bool pass = false;
  std::string detail;
};

struct AttackScenario {
  std::string name;
  std::string expectation;
  std::function<AttackOutcome()> run;
};

namespace attack_detail {

inline Manifest serve_manifest(const std::string& kind, uint64_t shared_pages,
                               std::vector<DeviceKind> devices = {}) {
  Manifest m;
  m.memory_pages = 2;
  m.shared_pages = shared_pages;
  m.devices = std::move(devices);
  GuestAction serve = GuestAction::rpc_compute(kind);
  serve.rsi_call = "serve";
  m.entry_script = {serve};
  return m;
}

inline std::optional<GranuleIdx> find_pair(System& sys,
                                           std::pair<Pas, Pas> want) {
  for (GranuleIdx g = 0; g < sys.machine().granules(); g++)
    if (sys.machine().gpt_pair(g) == want) return g;
  return std::nullopt;
}

inline AttackOutcome fail(const std::string& why) { return {false, why}; }

inline AttackOutcome finish(System& sys, std::string detail) {
  InvariantChecker chk(sys);
  auto v = chk.all(true);
  if (!v.empty()) return {false, "invariant violated: " + v.front()};
  return {true, std::move(detail)};
}

}  // namespace attack_detail

inline std::vector<AttackScenario> attack_catalog() {
  using namespace attack_detail;
  std::vector<AttackScenario> list;

  list.push_back({"boomerang_deref",
                  "blocked: granule_protection_fault",
                  [] {
    System sys;
    sys.boot();
    Manifest m;
    m.memory_pages = 1;
    m.entry_script = {GuestAction::read(0x400000), GuestAction::halt()};
    auto res = sys.nw().hyp_create_sbs(0, m);
    if (!res.ok()) return fail("launch failed");
    auto victim = find_pair(sys, {Pas::Normal, Pas::NotAccessible});
    if (!victim) return fail("no normal granule");
    // Model the confused-deputy dereference: a stage-2 alias at the target
    // IPA pointing straight at Android memory. The GPT layer must still
    // stop the access.
    RealmDescriptor* r = sys.rmm().find_realm(res.realm);
    r->s2[0x400000 >> kPageShift] = S2Entry{*victim, kPermR | kPermW};
    r->ripas[0x400000 >> kPageShift] = Ripas::Ram;
    uint64_t gpfs_before = sys.trace().counters().gpfs;
    ExitInfo e = sys.nw().hyp_rec_enter(0, res.realm, 0);
    bool blocked = e.kind == ExitKind::Fault &&
                   sys.trace().counters().gpfs == gpfs_before + 1;
    r->s2.erase(0x400000 >> kPageShift);  // drop the injected alias
    r->ripas.erase(0x400000 >> kPageShift);
    if (!blocked) return fail("deref was not blocked by a GPF");
    return finish(sys, "guest deref of normal memory faulted");
  }});

  list.push_back({"secure_world_read",
                  "blocked: granule_protection_fault",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(0, serve_manifest("add", 1));
    if (!res.ok()) return fail("launch failed");
    SbsHandle* h = sys.nw().find_handle(res.realm);
    GranuleIdx shared_g = h->shared_granules[0];
    GranuleIdx data_g = h->delegated[0];
    auto normal_g = find_pair(sys, {Pas::Normal, Pas::NotAccessible});
    std::array<uint8_t, 8> buf{};
    if (sys.actor_read(1, World::Secure, data_g, buf).allowed)
      return fail("secure world read realm memory");
    if (sys.actor_read(1, World::Secure, shared_g, buf).allowed)
      return fail("secure world read shared memory");
    if (normal_g && sys.actor_read(1, World::Secure, *normal_g, buf).allowed)
      return fail("secure world read normal memory");
    return finish(sys, "secure accesses to realm, shared, and normal faulted");
  }});

  list.push_back({"split_view_race",
                  "serialized: coherent views post-flush",
                  [] {
    System sys;
    sys.boot();
    auto g = find_pair(sys, {Pas::Normal, Pas::NotAccessible});
    if (!g) return fail("no normal granule");
    std::array<uint8_t, 4> buf{};
    // Core 1 caches the pre-delegation view.
    if (!sys.actor_read(1, World::Normal, *g, buf).allowed)
      return fail("baseline read failed");
    // Core 0 delegates; the update must serialize and flush all GPC TLBs.
    if (sys.nw().rmi_granule_delegate(0, *g, 1) != RootStatus::Ok)
      return fail("delegate failed");
    for (CoreId c = 0; c < sys.machine().core_count(); c++) {
      if (sys.machine().core(c).sec_state != World::Normal) continue;
      if (sys.machine().gpc_probe(c, *g, Access::Read).allowed)
        return fail("core " + std::to_string(c) + " kept a stale view");
    }
    // The adjacent racing updates lose cleanly.
    if (sys.nw().rmi_granule_delegate(1, *g, 1) == RootStatus::Ok)
      return fail("double delegate succeeded");
    if (sys.root().smc_2gpt_ns_share(1, *g) == RootStatus::Ok)
      return fail("unauthorized share succeeded");
    if (!legal_gpt_pair(sys.machine().gpt_pair(*g)))
      return fail("illegal final pair");
    return finish(sys, "views coherent, racing updates denied");
  }});

  list.push_back({"toctou_exclusive",
                  "blocked: host write faults during exclusive window",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(0, serve_manifest("add", 1));
    if (!res.ok()) return fail("launch failed");
    SbsHandle* h = sys.nw().find_handle(res.realm);
    std::vector<uint8_t> frame(12 + 16, 0);
    frame[0] = 1;             // cmd add
    frame[4] = 16;            // len
    frame[12] = 7;            // a = 7
    frame[20] = 9;            // b = 9
    if (sys.nw().shared_write(0, VqSide::Host, *h, 0, frame) != VqStatus::Ok)
      return fail("frame write failed");
    ExitInfo e1 = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e1.kind != ExitKind::Rsi || e1.rsi_name != "ex_access")
      return fail("guest did not enable exclusive access");
    // TOCTOU attempt: rewrite the length field between check and use.
    std::array<uint8_t, 4> evil{0xff, 0xff, 0, 0};
    if (sys.nw().shared_write(0, VqSide::Host, *h, 4, evil) != VqStatus::Fault)
      return fail("host write during exclusive window was not blocked");
    ExitInfo e2 = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e2.kind != ExitKind::Rsi || e2.rsi_name != "ex_access")
      return fail("guest did not release exclusive access");
    std::array<uint8_t, 12> hdr{};
    sys.nw().shared_read(0, VqSide::Host, *h, 0, hdr);
    std::array<uint8_t, 8> reply{};
    sys.nw().shared_read(0, VqSide::Host, *h, 12, reply);
    if (hdr[8] != 1 || reply[0] != 16)
      return fail("reply does not reflect the validated values");
    return finish(sys, "host write faulted; reply computed from checked data");
  }});

  list.push_back({"code_injection_shared",
                  "blocked: execute fault on shared region",
                  [] {
    System sys;
    sys.boot();
    Manifest m;
    m.memory_pages = 1;
    m.shared_pages = 1;
    m.entry_script = {GuestAction::exec(kUnprotectedIpaBase), GuestAction::halt()};
    auto res = sys.nw().hyp_create_sbs(0, m);
    if (!res.ok()) return fail("launch failed");
    SbsHandle* h = sys.nw().find_handle(res.realm);
    std::vector<uint8_t> shellcode = {0xde, 0xad, 0xbe, 0xef};
    if (sys.nw().shared_write(0, VqSide::Host, *h, 0, shellcode) != VqStatus::Ok)
      return fail("host could not write shared page");
    ExitInfo e = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e.kind != ExitKind::Fault) return fail("execute did not fault");
    const auto& events = sys.trace().events();
    bool saw_exec_fault = false;
    for (auto it = events.rbegin(); it != events.rend(); ++it)
      if (it->kind == EventKind::S2Fault && it->name == "s2_perm") {
        saw_exec_fault = true;
        break;
      }
    if (!saw_exec_fault) return fail("no execute permission fault recorded");
    return finish(sys, "shared region is non-executable");
  }});

  list.push_back({"vq_pointer_escape",
                  "blocked: descriptor outside shared region rejected",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(0, serve_manifest("add", 2));
    if (!res.ok()) return fail("launch failed");
    SbsHandle* h = sys.nw().find_handle(res.realm);
    // Host-pushed descriptor pointing at guest-private RAM.
    VqDesc evil{0x1000, 64, 0};
    if (sys.nw().vq_push(0, VqSide::Host, *h, evil) != VqStatus::Rejected)
      return fail("escape descriptor accepted");
    // Length overflowing out of the region is an escape too.
    VqDesc evil2{h->shared_base + h->shared_pages * kGranuleSize - 8, 64, 0};
    if (sys.nw().vq_push(0, VqSide::Host, *h, evil2) != VqStatus::Rejected)
      return fail("overflowing descriptor accepted");
    // Honest round trip still works.
    VqDesc good{h->shared_base + 0x100, 32, 0};
    if (sys.nw().vq_push(1, VqSide::Guest, *h, good) != VqStatus::Ok)
      return fail("honest guest push failed");
    VqDesc popped;
    if (sys.nw().vq_pop(0, VqSide::Host, *h, popped) != VqStatus::Ok ||
        !(popped == good))
      return fail("honest pop mismatched");
    return finish(sys, "pointer escapes rejected, honest traffic intact");
  }});

  list.push_back({"forged_mmio",
                  "blocked: emulation refused for unmarked region",
                  [] {
    System sys;
    sys.boot();
    Manifest m;
    m.memory_pages = 1;
    m.entry_script = {GuestAction::mmio_read(0x0B000000), GuestAction::halt()};
    auto res = sys.nw().hyp_create_sbs(0, m);
    if (!res.ok()) return fail("launch failed");
    ExitInfo e = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e.kind != ExitKind::MmioAbort) return fail("no MMIO abort");
    MmioDecision d =
        sys.rmm().handle_mmio_exit(0, res.realm, 0x0B000000, Access::Read, 0x2A);
    if (d != MmioDecision::Refuse) return fail("unmarked emulation allowed");
    ExitInfo e2 = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e2.kind != ExitKind::Fault) return fail("guest did not receive a fault");
    RealmDescriptor* r = sys.rmm().find_realm(res.realm);
    if (!r->recs.empty() && r->recs[0].regs[0] == 0x2A)
      return fail("hypervisor data reached the REC");
    return finish(sys, "unmarked MMIO emulation refused");
  }});

  list.push_back({"disallowed_device_launch",
                  "detected_by: validate_boot",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(
        0, serve_manifest("add", 1, {DeviceKind::VirtioConsole}));
    if (res.ok()) return fail("launch with console device succeeded");
    if (res.boot_check != BootCheck::DisallowedDevice)
      return fail("wrong reject reason");
    RealmDescriptor* r = sys.rmm().find_realm(res.realm);
    if (!r || r->state != RealmState::Destroyed)
      return fail("rejected realm not destroyed");
    return finish(sys, "console device rejected at boot validation");
  }});

  list.push_back({"bad_measurement_launch",
                  "detected_by: validate_boot",
                  [] {
    SystemConfig cfg;
    cfg.allowlist.allow_any = false;
    cfg.allowlist.digests = {sha256_str("some-other-image")};
    System sys(std::move(cfg));
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(0, serve_manifest("add", 1));
    if (res.ok()) return fail("unlisted measurement booted");
    if (res.boot_check != BootCheck::BadMeasurement)
      return fail("wrong reject reason");
    RealmDescriptor* r = sys.rmm().find_realm(res.realm);
    if (!r || r->state != RealmState::Destroyed)
      return fail("rejected realm not destroyed");
    return finish(sys, "measurement outside allow-list rejected");
  }});

  list.push_back({"device_data_tamper",
                  "detected_by: channel integrity",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(
        0, serve_manifest("add", 1, {DeviceKind::VirtioNet}));
    if (!res.ok()) return fail("launch failed");
    std::vector<uint8_t> payload = {1, 2, 3, 4, 5};
    std::vector<uint8_t> plain;
    if (sys.nw().encrypted_channel_send(0, res.realm, DeviceKind::VirtioNet,
                                        payload, false,
                                        &plain) != ChannelStatus::Delivered ||
        plain != payload)
      return fail("honest relay failed");
    if (sys.nw().encrypted_channel_send(0, res.realm, DeviceKind::VirtioNet,
                                        payload, true,
                                        nullptr) != ChannelStatus::TamperDetected)
      return fail("tampering went undetected");
    return finish(sys, "ciphertext mutation detected by the endpoint");
  }});

  list.push_back({"interrupt_no_data",
                  "detected_by: failed decryption path",
                  [] {
    System sys;
    sys.boot();
    auto res = sys.nw().hyp_create_sbs(
        0, serve_manifest("add", 1, {DeviceKind::VirtioNet}));
    if (!res.ok()) return fail("launch failed");
    if (sys.rmm().inject_interrupt(0, res.realm,
                                   IrqSource::device(DeviceKind::VirtioGpu)) !=
        IrqOutcome::Filtered)
      return fail("unattached device interrupt delivered");
    if (sys.rmm().inject_interrupt(0, res.realm, IrqSource::arbitrary()) !=
        IrqOutcome::Filtered)
      return fail("arbitrary interrupt delivered");
    if (sys.rmm().inject_interrupt(0, res.realm,
                                   IrqSource::device(DeviceKind::VirtioNet)) !=
        IrqOutcome::Delivered)
      return fail("attached device interrupt filtered");
    ExitInfo e = sys.nw().hyp_rec_enter(0, res.realm, 0);
    if (e.kind != ExitKind::Interrupt) return fail("no interrupt exit");
    const auto& events = sys.trace().events();
    for (auto it = events.rbegin(); it != events.rend(); ++it)
      if (it->kind == EventKind::Transport && it->name == "channel_rx") {
        if (it->outcome == "tamper_detected")
          return finish(sys, "dataless device interrupt failed integrity checks");
        break;
      }
    return fail("guest accepted a dataless device interrupt");
  }});

  return list;
}

// ---------------------------------------------------------------------------
// Randomized fuzzing over the full interface surface.
// ---------------------------------------------------------------------------

struct FuzzConfig {
  uint64_t seed = 1;
  uint64_t steps = 1000;
  uint32_t cores = 2;
  MachineLayout layout = MachineLayout::standard(64);
  Hooks hooks;
  std::vector<std::string> enabled_calls;  // empty = everything
};

struct FuzzReport {
  std::vector<Violation> violations;
  std::map<std::string, uint64_t> coverage;
  std::set<std::string> pairs_reached;
  uint64_t steps = 0;
  std::string trace_text;  // full event trace of the run

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& v : violations)
      os << "violation\t" << v.step << '\t' << v.call << '\t' << v.invariant
         << '\n';
    for (const auto& [call, n] : coverage)
      os << "coverage\t" << call << '\t' << n << '\n';
    os << "pairs\t";
    bool first = true;
    for (const auto& p : pairs_reached) {
      if (!first) os << ',';
      os << p;
      first = false;
    }
    os << '\n';
    os << "steps\t" << steps << '\n';
    os << "violations\t" << violations.size() << '\n';
    return os.str();
  }
};

namespace fuzz_detail {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  uint64_t below(uint64_t n) { return n ? eng_() % n : 0; }
  bool chance(uint32_t percent) { return below(100) < percent; }
  uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

inline Manifest random_manifest(Rng& rng, GranuleIdx machine_granules) {
  Manifest m;
  m.memory_pages = 1 + rng.below(2);
  m.shared_pages = rng.below(3);
  if (rng.chance(40)) m.devices.push_back(DeviceKind::VirtioBlock);
  if (rng.chance(40)) m.devices.push_back(DeviceKind::VirtioNet);
  (void)machine_granules;
  uint64_t script_len = rng.below(5);
  for (uint64_t i = 0; i < script_len; i++) {
    switch (rng.below(6)) {
      case 0:
        m.entry_script.push_back(
            GuestAction::read(rng.below(m.memory_pages * kGranuleSize + 4096)));
        break;
      case 1: {
        std::vector<uint8_t> b(1 + rng.below(16));
        for (auto& x : b) x = static_cast<uint8_t>(rng.raw());
        m.entry_script.push_back(
            GuestAction::write(rng.below(m.memory_pages * kGranuleSize), b));
        break;
      }
      case 2:
        m.entry_script.push_back(
            GuestAction::rsi("mmio", {0x0B000000 + rng.below(4) * kGranuleSize}));
        break;
      case 3:
        m.entry_script.push_back(
            GuestAction::mmio_read(0x0B000000 + rng.below(4) * kGranuleSize));
        break;
      case 4:
        if (m.shared_pages > 0)
          m.entry_script.push_back(GuestAction::rsi(
              "ex_access", {rng.below(2), m.shared_base_ipa +
                                              rng.below(m.shared_pages) *
                                                  kGranuleSize}));
        break;
      case 5:
        m.entry_script.push_back(GuestAction::read(
            kUnprotectedIpaBase + rng.below(m.shared_pages + 1) * kGranuleSize));
        break;
    }
  }
  if (rng.chance(50)) {
    GuestAction serve = GuestAction::rpc_compute(rng.chance(50) ? "add" : "otp");
    serve.rsi_call = "serve";
    m.entry_script.push_back(serve);
  } else {
    m.entry_script.push_back(GuestAction::halt());
  }
  return m;
}

}  // namespace fuzz_detail

inline FuzzReport fuzz(const FuzzConfig& cfg) {
  using fuzz_detail::Rng;
  FuzzReport report;
  SystemConfig scfg;
  scfg.layout = cfg.layout;
  scfg.cores = cfg.cores;
  scfg.seed = cfg.seed;
  scfg.hooks = cfg.hooks;
  System sys(std::move(scfg));
  if (!sys.boot()) return report;

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  InvariantChecker chk(sys);
  std::vector<RealmId> live;

  GranuleIdx span = sys.machine().granules() + 8;  // probes out-of-range too
  auto rand_granule = [&] { return static_cast<GranuleIdx>(rng.below(span)); };
  auto rand_core = [&] { return static_cast<CoreId>(rng.below(cfg.cores)); };
  auto rand_live = [&]() -> RealmId {
    if (live.empty() || rng.chance(10)) return static_cast<RealmId>(rng.below(8));
    return live[rng.below(live.size())];
  };

  struct OpEntry {
    const char* name;
    std::function<void()> fn;
  };
  std::vector<OpEntry> ops;

  ops.push_back({"create_sbs", [&] {
    if (live.size() >= 3) return;
    Manifest m = fuzz_detail::random_manifest(rng, sys.machine().granules());
    auto res = sys.nw().hyp_create_sbs(rand_core(), m);
    if (res.ok()) live.push_back(res.realm);
  }});
  ops.push_back({"destroy", [&] {
    if (live.empty()) return;
    size_t i = rng.below(live.size());
    sys.nw().hyp_destroy_sbs(rand_core(), live[i]);
    live.erase(live.begin() + i);
  }});
  ops.push_back({"rec_enter", [&] {
    sys.nw().hyp_rec_enter(rand_core(), rand_live(), 0);
  }});
  ops.push_back({"delegate", [&] {
    sys.nw().rmi_granule_delegate(rand_core(), rand_granule(), rand_live());
  }});
  ops.push_back({"undelegate", [&] {
    sys.nw().rmi_granule_undelegate(rand_core(), rand_granule(), rand_live());
  }});
  ops.push_back({"map_unprotected", [&] {
    CoreId c = rand_core();
    GranuleIdx g = rand_granule();
    RealmId r = rand_live();
    sys.root().log_rmi("rmi_rtt_map_unprotected", g, r);
    WorldGuard guard(sys.machine(), c, World::Realm);
    sys.rmm().rmi_rtt_map_unprotected(c, r, g,
                                      kUnprotectedIpaBase +
                                          rng.below(8) * kGranuleSize);
  }});
  ops.push_back({"data_create", [&] {
    // Overlap probe: a fresh realm claiming a random (often owned)
    // granule. Normally rejected; with the overlap check disabled this is
    // what the ownership sweep must catch.
    CoreId c = rand_core();
    GranuleIdx g = 0;
    if (!sys.rmm().owners().empty() && rng.chance(70)) {
      auto it = sys.rmm().owners().begin();
      std::advance(it, rng.below(sys.rmm().owners().size()));
      g = it->first;
    } else {
      g = rand_granule();
    }
    WorldGuard guard(sys.machine(), c, World::Realm);
    Manifest m;
    RealmId nr = sys.rmm().rmi_realm_create(c, m);
    std::vector<uint8_t> content = {1, 2, 3};
    sys.rmm().rmi_data_create(c, nr, g, rng.below(4) * kGranuleSize, content);
  }});
  ops.push_back({"mmio_complete", [&] {
    RealmId r = rand_live();
    RealmDescriptor* rd = sys.rmm().find_realm(r);
    Ipa ipa = 0x0B000000 + rng.below(5) * kGranuleSize;
    Access acc = rng.chance(50) ? Access::Read : Access::Write;
    if (rd && rd->pending_mmio && rng.chance(80)) {
      ipa = rd->pending_mmio->ipa;
      acc = rd->pending_mmio->access;
    }
    sys.rmm().handle_mmio_exit(rand_core(), r, ipa, acc, rng.raw());
  }});
  ops.push_back({"interrupt", [&] {
    IrqSource src = IrqSource::timer();
    switch (rng.below(3)) {
      case 0: src = IrqSource::timer(); break;
      case 1:
        src = IrqSource::device(static_cast<DeviceKind>(rng.below(4)));
        break;
      case 2: src = IrqSource::arbitrary(); break;
    }
    sys.rmm().inject_interrupt(rand_core(), rand_live(), src);
  }});
  ops.push_back({"vq_push", [&] {
    SbsHandle* h = sys.nw().find_handle(rand_live());
    if (!h || !h->active || h->vq_capacity == 0) return;
    VqDesc d;
    d.addr = rng.chance(70)
                 ? h->shared_base + rng.below(h->shared_pages * kGranuleSize)
                 : rng.below(kUnprotectedIpaEnd);
    d.len = static_cast<uint32_t>(rng.below(256));
    sys.nw().vq_push(rand_core(),
                     rng.chance(50) ? VqSide::Host : VqSide::Guest, *h, d);
  }});
  ops.push_back({"vq_pop", [&] {
    SbsHandle* h = sys.nw().find_handle(rand_live());
    if (!h || !h->active || h->vq_capacity == 0) return;
    VqDesc d;
    sys.nw().vq_pop(rand_core(), rng.chance(50) ? VqSide::Host : VqSide::Guest,
                    *h, d);
  }});
  ops.push_back({"rpc", [&] {
    std::vector<uint8_t> payload(rng.below(24), 0);
    for (auto& b : payload) b = static_cast<uint8_t>(rng.raw());
    sys.nw().rpc_call(rand_core(), rand_live(),
                      static_cast<uint32_t>(rng.below(5)), payload);
  }});
  ops.push_back({"mem_rw", [&] {
    World w = rng.chance(70) ? World::Normal : World::Secure;
    std::array<uint8_t, 8> buf{};
    for (auto& b : buf) b = static_cast<uint8_t>(rng.raw());
    if (rng.chance(50))
      sys.actor_read(rand_core(), w, rand_granule(), buf);
    else
      sys.actor_write(rand_core(), w, rand_granule(), buf);
  }});
  ops.push_back({"smc_rogue", [&] {
    CoreId c = rand_core();
    GranuleIdx g = rand_granule();
    switch (rng.below(5)) {
      case 0: sys.root().smc_delegate(c, g); break;
      case 1: sys.root().smc_undelegate(c, g); break;
      case 2: sys.root().smc_2gpt_ns_share(c, g); break;
      case 3: sys.root().smc_2gpt_ns_unshare(c, g); break;
      case 4: sys.root().smc_2gpt_ex_access(c, g, rng.chance(50)); break;
    }
  }});
  ops.push_back({"rsi_ex", [&] {
    RealmId r = rand_live();
    RealmDescriptor* rd = sys.rmm().find_realm(r);
    if (!rd) return;
    std::vector<uint64_t> pages;
    for (uint64_t i = 0; i < 1 + rng.below(2); i++)
      pages.push_back(kUnprotectedIpaBase + rng.below(4) * kGranuleSize);
    CoreId c = rand_core();
    WorldGuard guard(sys.machine(), c, World::Realm);
    sys.rmm().rsi_ex_access(c, r, pages, rng.chance(50));
  }});
  ops.push_back({"ctx_switch", [&] {
    sys.machine().context_switch(rand_core(),
                                 rng.chance(70) ? World::Normal : World::Secure);
  }});
  ops.push_back({"flush", [&] { sys.machine().flush_all_gpc_tlbs(); }});

  // Filter by the enabled set, if given.
  std::vector<OpEntry*> enabled;
  for (auto& op : ops) {
    if (cfg.enabled_calls.empty() ||
        std::find(cfg.enabled_calls.begin(), cfg.enabled_calls.end(),
                  op.name) != cfg.enabled_calls.end())
      enabled.push_back(&op);
  }
  if (enabled.empty()) return report;

  auto record_pairs = [&] {
    for (GranuleIdx g = 0; g < sys.machine().granules(); g++)
      report.pairs_reached.insert(pair_name(sys.machine().gpt_pair(g)));
  };
  auto sweep = [&](const char* call, uint64_t root_epoch, uint64_t s2_epoch,
                   uint64_t meas_epoch) {
    auto add = [&](std::vector<std::string> names) {
      for (auto& n : names)
        report.violations.push_back({sys.trace().next_step(), call, n});
    };
    add(chk.closure());
    add(chk.authorization_audit());
    if (sys.root().mutation_epoch() != root_epoch) add(chk.isolation_matrix());
    if (sys.rmm().s2_epoch() != s2_epoch ||
        sys.root().mutation_epoch() != root_epoch)
      add(chk.ownership());
    add(chk.interface_hardening());  // cheap; also tracks MMIO gate counts
    if (sys.rmm().measurement_epoch() != meas_epoch)
      add(chk.measurement_chain());
  };

  record_pairs();
  sweep("boot", ~0ull, ~0ull, ~0ull);

  for (uint64_t step = 0; step < cfg.steps; step++) {
    OpEntry* op = enabled[rng.below(enabled.size())];
    uint64_t root_epoch = sys.root().mutation_epoch();
    uint64_t s2_epoch = sys.rmm().s2_epoch();
    uint64_t meas_epoch = sys.rmm().measurement_epoch();
    op->fn();
    report.coverage[op->name]++;
    record_pairs();
    sweep(op->name, root_epoch, s2_epoch, meas_epoch);
  }
  report.steps = cfg.steps;
  report.trace_text = sys.trace().to_text();
  return report;
}

}  // namespace sbsim
