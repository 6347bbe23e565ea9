// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>

#include "sbsim/memory_model.hpp"
#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

enum class RootStatus : uint8_t { Ok, Denied, ScrubViolation };

constexpr std::string_view to_string(RootStatus s) {
  switch (s) {
    case RootStatus::Ok: return "ok";
    case RootStatus::Denied: return "denied";
    case RootStatus::ScrubViolation: return "scrub_violation";
  }
  return "?";
}

/// Trusted-firmware model in the Root world. Owns both GPTs: it populates
/// them at boot and is the only mutator afterwards. Every RMM-initiated
/// change is validated against the log of hypervisor RMI requests, applied
/// under the GPT lock, and followed by a global GPC TLB flush.
class RootMonitor {
 public:
  using PendingKey = std::tuple<std::string, GranuleIdx, RealmId>;

  RootMonitor(Machine* machine, Trace* trace, const Hooks* hooks)
      : machine_(machine), trace_(trace), hooks_(hooks) {}

  /// Populates GPT_n from the layout and derives GPT_rs by hiding every
  /// normal-world granule. Must run before any actor.
  bool boot_create_gpts() {
    const MachineLayout& layout = machine_->layout();
    if (!layout.valid()) {
      trace_->emit(0, EventKind::Boot, "boot_create_gpts", layout.describe(),
                   "layout_invalid");
      return false;
    }
    static_granules_.assign(layout.granules, false);
    for (const auto& r : layout.regions) {
      Pas pas = pas_for_region(r.kind);
      for (GranuleIdx g = r.start; g < r.start + r.count; g++) {
        machine_->set_gpt_entry(GptId::GptN, g, pas);
        machine_->set_gpt_entry(GptId::GptRs, g,
                                pas == Pas::Normal ? Pas::NotAccessible : pas);
        // The boot carve-out for root, RMM, and secure memory is immutable;
        // only normal-world granules enter the delegation pool.
        if (pas != Pas::Normal) static_granules_[g] = true;
      }
    }
    machine_->flush_all_gpc_tlbs();
    trace_->emit(0, EventKind::Boot, "boot_create_gpts", layout.describe(), "ok");
    return true;
  }

  /// Records an RMI that carries granule parameters while it is routed to
  /// the RMM. Duplicates accumulate and are consumed FIFO.
  void log_rmi(const std::string& rmi_name, GranuleIdx granule, RealmId realm) {
    pending_[PendingKey{rmi_name, granule, realm}]++;
  }

  RootStatus smc_delegate(CoreId core, GranuleIdx granule) {
    ScopedLock lock(this, core);
    bool auth = consume(kDelegateRmis, granule);
    RootStatus st = RootStatus::Ok;
    if (!auth && !hooks_->skip_log_check) {
      st = RootStatus::Denied;
    } else if (!mutable_granule(granule) ||
               machine_->gpt_pair(granule) !=
                   std::pair{Pas::Normal, Pas::NotAccessible}) {
      st = RootStatus::Denied;
    } else {
      set_pair(granule, Pas::Realm, Pas::Realm);
    }
    emit("smc_granule_delegate", core, granule, auth ? "log" : "none", st);
    return st;
  }

  RootStatus smc_undelegate(CoreId core, GranuleIdx granule) {
    ScopedLock lock(this, core);
    bool auth = consume(kUndelegateRmis, granule);
    RootStatus st = RootStatus::Ok;
    if (!auth && !hooks_->skip_log_check) {
      st = RootStatus::Denied;
    } else if (!mutable_granule(granule) ||
               machine_->gpt_pair(granule) != std::pair{Pas::Realm, Pas::Realm}) {
      st = RootStatus::Denied;
    } else if (!machine_->granule_is_zero(granule)) {
      // The RMM is required to scrub before undelegation; nonzero content
      // here is a conformance bug, not a policy rejection.
      st = RootStatus::ScrubViolation;
    } else {
      set_pair(granule, Pas::Normal, Pas::NotAccessible);
    }
    emit("smc_granule_undelegate", core, granule, auth ? "log" : "none", st);
    return st;
  }

  RootStatus smc_2gpt_ns_share(CoreId core, GranuleIdx granule) {
    ScopedLock lock(this, core);
    bool auth = consume(kShareRmis, granule);
    RootStatus st = RootStatus::Ok;
    if (!auth && !hooks_->skip_log_check) {
      st = RootStatus::Denied;
    } else if (!mutable_granule(granule) ||
               machine_->gpt_pair(granule) != std::pair{Pas::Realm, Pas::Realm}) {
      st = RootStatus::Denied;
    } else {
      set_pair(granule, Pas::Normal, Pas::Realm);
    }
    emit("smc_2gpt_ns_share", core, granule, auth ? "log" : "none", st);
    return st;
  }

  /// Reverses a share during teardown. No request-log entry exists for this
  /// direction; like exclusive access it is gated on the shared state the
  /// hypervisor already acknowledged.
  RootStatus smc_2gpt_ns_unshare(CoreId core, GranuleIdx granule) {
    ScopedLock lock(this, core);
    RootStatus st = RootStatus::Ok;
    if (!mutable_granule(granule) ||
        machine_->gpt_pair(granule) != std::pair{Pas::Normal, Pas::Realm}) {
      st = RootStatus::Denied;
    } else {
      set_pair(granule, Pas::Realm, Pas::Realm);
    }
    emit("smc_2gpt_ns_unshare", core, granule, "state", st);
    return st;
  }

  RootStatus smc_2gpt_ex_access(CoreId core, GranuleIdx granule, bool enable) {
    ScopedLock lock(this, core);
    RootStatus st = RootStatus::Ok;
    auto want = enable ? std::pair{Pas::Normal, Pas::Realm}
                       : std::pair{Pas::NotAccessible, Pas::Realm};
    if (!mutable_granule(granule) || machine_->gpt_pair(granule) != want) {
      st = RootStatus::Denied;
    } else {
      set_pair(granule, enable ? Pas::NotAccessible : Pas::Normal, Pas::Realm);
    }
    std::ostringstream extra;
    extra << " enable=" << (enable ? 1 : 0);
    emit("smc_2gpt_ex_access", core, granule, "state", st, extra.str());
    return st;
  }

  uint32_t pending_count(const std::string& rmi, GranuleIdx g, RealmId r) const {
    auto it = pending_.find(PendingKey{rmi, g, r});
    return it == pending_.end() ? 0 : it->second;
  }
  size_t pending_total() const {
    size_t n = 0;
    for (const auto& [k, v] : pending_) n += v;
    return n;
  }
  const std::map<PendingKey, uint32_t>& pending() const { return pending_; }
  void restore_pending(std::map<PendingKey, uint32_t> p) {
    pending_ = std::move(p);
  }

  /// Monotonic count of GPT mutations; invariant sweeps use it to detect
  /// flush barriers.
  uint64_t mutation_epoch() const { return mutation_epoch_; }

  std::optional<CoreId> lock_holder() const { return lock_holder_; }

  bool is_static_granule(GranuleIdx g) const {
    return g < static_granules_.size() && static_granules_[g];
  }

  /// Recomputes the immutable carve-out from the layout (snapshot restore).
  void rebuild_static_set() {
    const MachineLayout& layout = machine_->layout();
    static_granules_.assign(layout.granules, false);
    for (const auto& r : layout.regions)
      if (pas_for_region(r.kind) != Pas::Normal)
        for (GranuleIdx g = r.start; g < r.start + r.count; g++)
          static_granules_[g] = true;
  }

 private:
  // RMI kinds whose logged parameters authorize each SMC. Sharing can
  // originate from any of the creation-path RMIs that expose memory.
  static constexpr const char* kDelegateRmis[] = {"rmi_granule_delegate",
                                                  nullptr};
  static constexpr const char* kUndelegateRmis[] = {"rmi_granule_undelegate",
                                                    nullptr};
  static constexpr const char* kShareRmis[] = {
      "rmi_rtt_map_unprotected", "rmi_data_create", "rmi_realm_create",
      "rmi_rec_create", nullptr};

  struct ScopedLock {
    ScopedLock(RootMonitor* rm, CoreId core) : rm_(rm) {
      // Single holder at a time; the deterministic scheduler never
      // interleaves inside a critical section, so acquisition always wins.
      rm_->lock_holder_ = core;
    }
    ~ScopedLock() { rm_->lock_holder_.reset(); }
    RootMonitor* rm_;
  };

  bool in_range(GranuleIdx g) const { return g < machine_->granules(); }
  bool mutable_granule(GranuleIdx g) const {
    return in_range(g) && !static_granules_[g];
  }

  bool consume(const char* const* rmi_kinds, GranuleIdx granule) {
    for (const char* const* k = rmi_kinds; *k; k++) {
      auto it = pending_.lower_bound(PendingKey{*k, granule, 0});
      if (it != pending_.end() && std::get<0>(it->first) == *k &&
          std::get<1>(it->first) == granule && it->second > 0) {
        if (--it->second == 0) pending_.erase(it);
        return true;
      }
    }
    return false;
  }

  void set_pair(GranuleIdx g, Pas n, Pas rs) {
    machine_->set_gpt_entry(GptId::GptN, g, n);
    machine_->set_gpt_entry(GptId::GptRs, g, rs);
    mutation_epoch_++;
    if (!hooks_->skip_flush) machine_->flush_all_gpc_tlbs();
  }

  void emit(const char* name, CoreId core, GranuleIdx g, const char* auth,
            RootStatus st, const std::string& extra = {}) {
    std::ostringstream args;
    args << "g=" << g << " auth=" << auth << extra;
    auto [n, rs] = in_range(g) ? machine_->gpt_pair(g)
                               : std::pair{Pas::NotAccessible, Pas::NotAccessible};
    args << " gptn=" << to_string(n) << " gptrs=" << to_string(rs);
    trace_->emit(core, EventKind::Smc, name, args.str(),
                 std::string(to_string(st)));
  }

  Machine* machine_;
  Trace* trace_;
  const Hooks* hooks_;
  std::map<PendingKey, uint32_t> pending_;
  std::vector<bool> static_granules_;
  std::optional<CoreId> lock_holder_;
  uint64_t mutation_epoch_ = 0;
};

}  // namespace sbsim
