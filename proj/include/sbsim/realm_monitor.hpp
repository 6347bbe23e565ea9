// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/aead.hpp"
#include "sbsim/guest.hpp"
#include "sbsim/hash.hpp"
#include "sbsim/manifest.hpp"
#include "sbsim/memory_model.hpp"
#include "sbsim/root_monitor.hpp"
#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

enum class RmmStatus : uint8_t {
  Ok,
  WrongState,
  RangeInvalid,
  OverlapViolation,
  NotContiguous,
  SharingSealed,
  NotShared,
  Denied,
};

constexpr std::string_view to_string(RmmStatus s) {
  switch (s) {
    case RmmStatus::Ok: return "ok";
    case RmmStatus::WrongState: return "wrong_state";
    case RmmStatus::RangeInvalid: return "range_invalid";
    case RmmStatus::OverlapViolation: return "overlap_violation";
    case RmmStatus::NotContiguous: return "not_contiguous";
    case RmmStatus::SharingSealed: return "sharing_sealed";
    case RmmStatus::NotShared: return "not_shared";
    case RmmStatus::Denied: return "denied";
  }
  return "?";
}

enum class Ripas : uint8_t { Empty, Ram, Unprotected };
enum class RealmState : uint8_t { New, Active, Destroyed };

constexpr std::string_view to_string(RealmState s) {
  switch (s) {
    case RealmState::New: return "new";
    case RealmState::Active: return "active";
    case RealmState::Destroyed: return "destroyed";
  }
  return "?";
}

inline constexpr uint8_t kPermR = 1;
inline constexpr uint8_t kPermW = 2;
inline constexpr uint8_t kPermX = 4;

struct S2Entry {
  GranuleIdx granule = 0;
  uint8_t perms = 0;
  bool operator==(const S2Entry&) const = default;
};

struct MeasurementEntry {
  std::string kind;
  Ipa ipa = 0;
  Digest256 digest{};
};

/// Hash chain over boot-time events. `value` must always equal the fold of
/// `log` under extend_digest, which the harness recomputes independently.
struct Measurement {
  Digest256 value{};
  std::vector<MeasurementEntry> log;

  static Digest256 entry_digest(const MeasurementEntry& e) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), e.kind.begin(), e.kind.end());
    for (int i = 0; i < 8; i++) buf.push_back(static_cast<uint8_t>(e.ipa >> (8 * i)));
    buf.insert(buf.end(), e.digest.begin(), e.digest.end());
    return sha256(buf);
  }

  void extend(std::string kind, Ipa ipa, const Digest256& digest) {
    MeasurementEntry e{std::move(kind), ipa, digest};
    value = extend_digest(value, entry_digest(e));
    log.push_back(std::move(e));
  }
};

struct Rec {
  RecId id = 0;
  std::array<uint64_t, 8> regs{};
  size_t ip = 0;
  GuestScript script;
  bool halted = false;
  bool pending_fault = false;  // injected after a refused MMIO emulation
};

enum class ExitKind : uint8_t { Halt, Rsi, MmioAbort, Fault, Interrupt };

constexpr std::string_view to_string(ExitKind k) {
  switch (k) {
    case ExitKind::Halt: return "halt";
    case ExitKind::Rsi: return "rsi";
    case ExitKind::MmioAbort: return "mmio";
    case ExitKind::Fault: return "fault";
    case ExitKind::Interrupt: return "interrupt";
  }
  return "?";
}

struct ExitInfo {
  RmmStatus status = RmmStatus::Ok;  // WrongState when the entry was refused
  ExitKind kind = ExitKind::Halt;
  std::string rsi_name;
  RmmStatus rsi_status = RmmStatus::Ok;
  Ipa fault_ipa = 0;
  Access mmio_access = Access::Read;
  uint64_t mmio_wval = 0;
};

struct PendingMmio {
  RecId rec = 0;
  Ipa ipa = 0;
  Access access = Access::Read;
  uint64_t wval = 0;
};

struct IrqSource {
  enum class Kind : uint8_t { Timer, Device, HypervisorArbitrary } kind = Kind::Timer;
  DeviceKind dev = DeviceKind::VirtioBlock;

  static IrqSource timer() { return {Kind::Timer, DeviceKind::VirtioBlock}; }
  static IrqSource device(DeviceKind d) { return {Kind::Device, d}; }
  static IrqSource arbitrary() {
    return {Kind::HypervisorArbitrary, DeviceKind::VirtioBlock};
  }
};

enum class IrqOutcome : uint8_t { Delivered, Filtered, WrongState };

enum class MmioDecision : uint8_t { Emulate, Refuse };

enum class BootCheck : uint8_t { Pass, BadMeasurement, DisallowedDevice };

constexpr std::string_view to_string(BootCheck b) {
  switch (b) {
    case BootCheck::Pass: return "pass";
    case BootCheck::BadMeasurement: return "bad_measurement";
    case BootCheck::DisallowedDevice: return "disallowed_device";
  }
  return "?";
}

struct AttestationReport {
  Digest256 tf_digest{};
  Digest256 rmm_digest{};
  Digest256 bootloader_digest{};
  Digest256 realm_measurement{};
  RealmId realm_id = 0;
  uint64_t data_pages = 0;
  std::vector<DeviceKind> devices;
};

/// One sandboxed service: lifecycle state, stage-2 view, RIPAS, the fixed
/// shared window, MMIO marks, the measurement chain, and vCPU contexts.
struct RealmDescriptor {
  RealmId id = 0;
  RealmState state = RealmState::New;
  std::map<uint64_t, S2Entry> s2;      // IPA page index -> granule/perms
  std::map<uint64_t, Ripas> ripas;     // IPA page index -> state
  std::optional<std::pair<Ipa, uint64_t>> shared_region;  // base IPA, pages
  std::set<uint64_t> mmio_regions;     // IPA page indexes marked by the guest
  std::set<uint64_t> rtt_pages;        // page indexes covered by created tables
  Measurement measurement;
  std::vector<Rec> recs;
  std::vector<DeviceKind> devices;
  std::optional<PendingMmio> pending_mmio;
  std::optional<IrqSource> irq_pending;
  std::optional<uint64_t> shared_pages_at_activate;
  bool boot_validated = false;

  // Guest-side service state.
  Digest256 channel_key{};
  uint64_t channel_send_ctr = 0;
  std::deque<std::vector<uint8_t>> inbox;  // sealed device payloads
  std::vector<uint8_t> last_rx;
  std::vector<uint8_t> otp_secret;
  uint64_t otp_counter = 0;
  std::optional<std::pair<Ipa, uint64_t>> mmio_last_write;

  bool in_shared_region(Ipa ipa) const {
    if (!shared_region) return false;
    return ipa >= shared_region->first &&
           ipa < shared_region->first + shared_region->second * kGranuleSize;
  }
};

/// The RMM model in Realm EL2. Owns per-realm stage-2 state, enforces the
/// no-overlap sandboxing rule through the global owner index, builds the
/// single contiguous shared region, gates MMIO emulation, filters interrupts,
/// and maintains measurement chains. All GPT effects go through the root
/// monitor.
class RealmMonitor {
 public:
  RealmMonitor(Machine* machine, RootMonitor* root, Trace* trace,
               const Hooks* hooks, uint64_t session_seed)
      : machine_(machine), root_(root), trace_(trace), hooks_(hooks),
        session_seed_(session_seed) {
    tf_digest_ = sha256_str("tf-image-v1");
    rmm_digest_ = sha256_str("rmm-image-v1");
    set_bootloader_image("bootloader-image-v1");
  }

  void set_bootloader_image(std::string_view image) {
    bootloader_digest_ = sha256_str(image);
  }
  void set_allowlist(AllowList al) { allowlist_ = std::move(al); }
  const AllowList& allowlist() const { return allowlist_; }

  const std::map<RealmId, RealmDescriptor>& realms() const { return realms_; }
  RealmDescriptor* find_realm(RealmId id) {
    auto it = realms_.find(id);
    return it == realms_.end() ? nullptr : &it->second;
  }
  const std::map<GranuleIdx, RealmId>& owners() const { return owner_; }
  std::optional<RealmId> owner_of(GranuleIdx g) const {
    auto it = owner_.find(g);
    if (it == owner_.end()) return std::nullopt;
    return it->second;
  }

  uint64_t s2_epoch() const { return s2_epoch_; }
  uint64_t measurement_epoch() const { return measurement_epoch_; }
  uint64_t mmio_emulations() const { return mmio_emulations_; }

  RealmId rmi_realm_create(CoreId core, const Manifest& m) {
    RealmId id = next_realm_++;
    RealmDescriptor r;
    r.id = id;
    r.devices = m.devices;
    r.channel_key = derive_channel_key(id);
    r.measurement.extend("bootloader", 0, bootloader_digest_);
    realms_.emplace(id, std::move(r));
    measurement_epoch_++;
    std::ostringstream args;
    args << "realm=" << id << " pages=" << m.memory_pages
         << " shared=" << m.shared_pages;
    trace_->emit(core, EventKind::Rmi, "rmi_realm_create", args.str(), "ok");
    return id;
  }

  RmmStatus rmi_rec_create(CoreId core, RealmId id, GuestScript script) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state != RealmState::New) {
      st = RmmStatus::WrongState;
    } else {
      Rec rec;
      rec.id = static_cast<RecId>(r->recs.size());
      rec.script = std::move(script);
      r->recs.push_back(std::move(rec));
    }
    trace_->emit(core, EventKind::Rmi, "rmi_rec_create", realm_arg(id),
                 std::string(to_string(st)));
    return st;
  }

  RmmStatus rmi_realm_activate(CoreId core, RealmId id) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state != RealmState::New) {
      st = RmmStatus::WrongState;
    } else {
      r->state = RealmState::Active;  // seals the shared region
      r->shared_pages_at_activate =
          r->shared_region ? r->shared_region->second : 0;
    }
    trace_->emit(core, EventKind::Rmi, "rmi_realm_activate", realm_arg(id),
                 std::string(to_string(st)));
    return st;
  }

  RmmStatus rmi_rtt_create(CoreId core, RealmId id, Ipa base, uint64_t pages) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else if (pages == 0 || (base & (kGranuleSize - 1)) != 0) {
      st = RmmStatus::RangeInvalid;
    } else {
      uint64_t first = base >> kPageShift;
      for (uint64_t p = first; p < first + pages; p++) r->rtt_pages.insert(p);
    }
    std::ostringstream args;
    args << "realm=" << id << " base=0x" << std::hex << base << std::dec
         << " pages=" << pages;
    trace_->emit(core, EventKind::Rmi, "rmi_rtt_create", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  /// RIPAS changes are guest-initiated (RSI pass-through); the hypervisor
  /// has no direct path to this state.
  RmmStatus set_ripas(CoreId core, RealmId id, Ipa base, uint64_t pages,
                      Ripas state) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else if (pages == 0 || (base & (kGranuleSize - 1)) != 0) {
      st = RmmStatus::RangeInvalid;
    } else {
      uint64_t first = base >> kPageShift;
      for (uint64_t p = first; p < first + pages; p++) r->ripas[p] = state;
    }
    std::ostringstream args;
    args << "realm=" << id << " base=0x" << std::hex << base << std::dec
         << " pages=" << pages << " state=" << static_cast<int>(state);
    trace_->emit(core, EventKind::Rmi, "rmi_rtt_set_ripas", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  RmmStatus rmi_data_create(CoreId core, RealmId id, GranuleIdx g, Ipa ipa,
                            std::span<const uint8_t> content) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state != RealmState::New) {
      st = RmmStatus::WrongState;
    } else if (ipa >= kUnprotectedIpaBase || (ipa & (kGranuleSize - 1)) != 0 ||
               content.size() > kGranuleSize) {
      st = RmmStatus::RangeInvalid;
    } else if (g >= machine_->granules() || root_->is_static_granule(g) ||
               machine_->gpt_pair(g) != std::pair{Pas::Realm, Pas::Realm}) {
      st = RmmStatus::Denied;  // not delegated
    } else if (owner_.count(g) && !hooks_->skip_overlap_check) {
      st = RmmStatus::OverlapViolation;  // the sandboxing check
    } else {
      owner_[g] = id;
      r->s2[ipa >> kPageShift] = S2Entry{g, kPermR | kPermW | kPermX};
      r->ripas[ipa >> kPageShift] = Ripas::Ram;
      std::vector<uint8_t> page(kGranuleSize, 0);
      std::copy(content.begin(), content.end(), page.begin());
      machine_->write_bytes(core, static_cast<uint64_t>(g) * kGranuleSize, page);
      r->measurement.extend("data", ipa, sha256(page));
      s2_epoch_++;
      measurement_epoch_++;
    }
    std::ostringstream args;
    args << "realm=" << id << " g=" << g << " ipa=0x" << std::hex << ipa;
    trace_->emit(core, EventKind::Rmi, "rmi_data_create", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  RmmStatus rmi_rtt_map_unprotected(CoreId core, RealmId id, GranuleIdx g,
                                    Ipa ipa) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else if (r->state != RealmState::New) {
      st = RmmStatus::SharingSealed;  // fixed region: no sharing after boot
    } else if (ipa < kUnprotectedIpaBase || ipa >= kUnprotectedIpaEnd ||
               (ipa & (kGranuleSize - 1)) != 0) {
      st = RmmStatus::RangeInvalid;
    } else if (r->shared_region &&
               ipa != r->shared_region->first +
                          r->shared_region->second * kGranuleSize) {
      st = RmmStatus::NotContiguous;
    } else if (g < machine_->granules() &&
               (owner_.count(g) || root_->is_static_granule(g))) {
      st = RmmStatus::OverlapViolation;
    } else {
      RootStatus rs = root_->smc_2gpt_ns_share(core, g);
      if (rs != RootStatus::Ok) {
        st = RmmStatus::Denied;
      } else {
        owner_[g] = id;
        uint8_t perms = kPermR | kPermW;
        if (hooks_->skip_nx) perms |= kPermX;
        r->s2[ipa >> kPageShift] = S2Entry{g, perms};
        r->ripas[ipa >> kPageShift] = Ripas::Unprotected;
        if (!r->shared_region)
          r->shared_region = {ipa, 1};
        else
          r->shared_region->second++;
        s2_epoch_++;
      }
    }
    std::ostringstream args;
    args << "realm=" << id << " g=" << g << " ipa=0x" << std::hex << ipa;
    trace_->emit(core, EventKind::Rmi, "rmi_rtt_map_unprotected", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  /// Toggles exclusive access on shared pages. All-or-nothing: a mid-list
  /// failure rolls back the toggles already applied in this call.
  RmmStatus rsi_ex_access(CoreId core, RealmId id,
                          std::span<const uint64_t> page_ipas, bool enable) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    std::vector<GranuleIdx> done;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else {
      for (uint64_t ipa : page_ipas) {
        if (!r->in_shared_region(ipa)) {
          st = RmmStatus::NotShared;
          break;
        }
        auto it = r->s2.find(ipa >> kPageShift);
        if (it == r->s2.end()) {
          st = RmmStatus::NotShared;
          break;
        }
        RootStatus rs = root_->smc_2gpt_ex_access(core, it->second.granule, enable);
        if (rs != RootStatus::Ok) {
          st = RmmStatus::Denied;
          break;
        }
        done.push_back(it->second.granule);
      }
      if (st != RmmStatus::Ok)
        for (auto rit = done.rbegin(); rit != done.rend(); ++rit)
          root_->smc_2gpt_ex_access(core, *rit, !enable);
    }
    std::ostringstream args;
    args << "realm=" << id << " pages=" << page_ipas.size()
         << " enable=" << (enable ? 1 : 0);
    trace_->emit(core, EventKind::Rsi, "rsi_ex_access", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  RmmStatus rsi_mmio(CoreId core, RealmId id,
                     std::span<const uint64_t> page_ipas) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else {
      for (uint64_t ipa : page_ipas) r->mmio_regions.insert(ipa >> kPageShift);
    }
    std::ostringstream args;
    args << "realm=" << id << " pages=" << page_ipas.size();
    trace_->emit(core, EventKind::Rsi, "rsi_mmio", args.str(),
                 std::string(to_string(st)));
    return st;
  }

  /// Completes a trapped MMIO access. Emulation requires a real pending
  /// data abort from this realm *and* that the guest marked the page via
  /// rsi_mmio; anything else is refused and the guest receives a fault.
  MmioDecision handle_mmio_exit(CoreId core, RealmId id, Ipa fault_ipa,
                                Access access, uint64_t value) {
    RealmDescriptor* r = find_realm(id);
    MmioDecision d = MmioDecision::Emulate;
    if (!r || !r->pending_mmio ||
        (r->pending_mmio->ipa >> kPageShift) != (fault_ipa >> kPageShift) ||
        r->pending_mmio->access != access) {
      d = MmioDecision::Refuse;  // no matching data abort
    } else if (!r->mmio_regions.count(fault_ipa >> kPageShift) &&
               !hooks_->skip_mmio_gate) {
      d = MmioDecision::Refuse;  // unmarked region
      r->recs[r->pending_mmio->rec].pending_fault = true;
      r->pending_mmio.reset();
    } else {
      PendingMmio pm = *r->pending_mmio;
      r->pending_mmio.reset();
      if (access == Access::Read)
        r->recs[pm.rec].regs[0] = value;
      else
        r->mmio_last_write = {pm.ipa, pm.wval};
      mmio_emulations_++;
      if (!r->mmio_regions.count(fault_ipa >> kPageShift))
        mmio_unmarked_emulations_++;
    }
    std::ostringstream args;
    args << "realm=" << id << " ipa=0x" << std::hex << fault_ipa << std::dec
         << " access=" << to_string(access);
    trace_->emit(core, EventKind::Rmi, "handle_mmio_exit", args.str(),
                 d == MmioDecision::Emulate ? "emulate" : "refuse");
    if (d == MmioDecision::Refuse)
      trace_->emit(core, EventKind::AttackBlocked, "forged_mmio", args.str(),
                   "refused");
    return d;
  }

  uint64_t mmio_unmarked_emulations() const { return mmio_unmarked_emulations_; }

  IrqOutcome inject_interrupt(CoreId core, RealmId id, IrqSource src) {
    RealmDescriptor* r = find_realm(id);
    std::ostringstream args;
    args << "realm=" << id << " src="
         << (src.kind == IrqSource::Kind::Timer
                 ? "timer"
                 : src.kind == IrqSource::Kind::Device ? "device" : "arbitrary");
    if (src.kind == IrqSource::Kind::Device) args << " dev=" << to_string(src.dev);

    if (!r || r->state != RealmState::Active) {
      trace_->emit(core, EventKind::Transport, "inject_interrupt", args.str(),
                   "wrong_state");
      return IrqOutcome::WrongState;
    }
    bool deliver = false;
    switch (src.kind) {
      case IrqSource::Kind::Timer:
        deliver = true;
        break;
      case IrqSource::Kind::Device:
        deliver = std::find(r->devices.begin(), r->devices.end(), src.dev) !=
                  r->devices.end();
        break;
      case IrqSource::Kind::HypervisorArbitrary:
        deliver = false;  // exceptions cannot be faked from the outside
        break;
    }
    if (deliver) {
      r->irq_pending = src;
      trace_->emit(core, EventKind::Transport, "inject_interrupt", args.str(),
                   "delivered");
      return IrqOutcome::Delivered;
    }
    trace_->emit(core, EventKind::InterruptFiltered, "inject_interrupt",
                 args.str(), "filtered");
    return IrqOutcome::Filtered;
  }

  RmmStatus extend_measurement(CoreId core, RealmId id, const std::string& kind,
                               Ipa ipa, const Digest256& digest) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state != RealmState::New) {
      st = RmmStatus::WrongState;
    } else {
      r->measurement.extend(kind, ipa, digest);
      measurement_epoch_++;
    }
    trace_->emit(core, EventKind::Rmi, "rmi_extend_measurement", realm_arg(id),
                 std::string(to_string(st)));
    return st;
  }

  std::optional<AttestationReport> get_attestation_report(CoreId core,
                                                          RealmId id) {
    RealmDescriptor* r = find_realm(id);
    if (!r || r->state != RealmState::Active) {
      trace_->emit(core, EventKind::Transport, "attestation_report",
                   realm_arg(id), "wrong_state");
      return std::nullopt;
    }
    AttestationReport rep;
    rep.tf_digest = tf_digest_;
    rep.rmm_digest = rmm_digest_;
    rep.bootloader_digest = bootloader_digest_;
    rep.realm_measurement = r->measurement.value;
    rep.realm_id = id;
    rep.data_pages = r->s2.size();
    rep.devices = r->devices;
    trace_->emit(core, EventKind::Transport, "attestation_report", realm_arg(id),
                 "ok");
    return rep;
  }

  /// Trusted-bootloader validation run before the guest payload: the
  /// measurement must match the configured policy and only block/network
  /// virtio devices may be attached. The caller destroys the realm on reject.
  BootCheck validate_boot(CoreId core, RealmId id) {
    RealmDescriptor* r = find_realm(id);
    BootCheck b = BootCheck::Pass;
    if (!r) {
      b = BootCheck::BadMeasurement;
    } else if (!allowlist_.permits(r->measurement.value)) {
      b = BootCheck::BadMeasurement;
    } else {
      for (DeviceKind d : r->devices) {
        if (d != DeviceKind::VirtioBlock && d != DeviceKind::VirtioNet) {
          b = BootCheck::DisallowedDevice;
          break;
        }
      }
    }
    if (r && b == BootCheck::Pass) r->boot_validated = true;
    trace_->emit(core, EventKind::Boot, "validate_boot", realm_arg(id),
                 std::string(to_string(b)));
    return b;
  }

  /// Runs to completion within one dispatch: recs stop, S2 state is cleared,
  /// every owned granule is scrubbed, unshared if needed, and undelegated.
  RmmStatus rmi_destroy_realm(CoreId core, RealmId id) {
    RealmDescriptor* r = find_realm(id);
    RmmStatus st = RmmStatus::Ok;
    if (!r || r->state == RealmState::Destroyed) {
      st = RmmStatus::WrongState;
    } else {
      for (auto& rec : r->recs) rec.halted = true;
      std::vector<GranuleIdx> owned;
      for (const auto& [g, owner] : owner_)
        if (owner == id) owned.push_back(g);
      for (GranuleIdx g : owned) {
        auto pair = machine_->gpt_pair(g);
        if (pair == std::pair{Pas::NotAccessible, Pas::Realm})
          root_->smc_2gpt_ex_access(core, g, false);
        if (machine_->gpt_pair(g) == std::pair{Pas::Normal, Pas::Realm})
          root_->smc_2gpt_ns_unshare(core, g);
        std::vector<uint8_t> zeros(kGranuleSize, 0);
        machine_->write_bytes(core, static_cast<uint64_t>(g) * kGranuleSize,
                              zeros);
        root_->smc_undelegate(core, g);
        owner_.erase(g);
      }
      r->s2.clear();
      r->ripas.clear();
      r->shared_region.reset();
      r->mmio_regions.clear();
      r->pending_mmio.reset();
      r->irq_pending.reset();
      r->state = RealmState::Destroyed;
      s2_epoch_++;
    }
    trace_->emit(core, EventKind::Rmi, "rmi_destroy_realm", realm_arg(id),
                 std::string(to_string(st)));
    return st;
  }

  /// Runs the guest program until a trapped event and reports the exit
  /// reason. The core is already in the realm world.
  ExitInfo rmi_rec_enter(CoreId core, RealmId id, RecId rec_id) {
    RealmDescriptor* r = find_realm(id);
    ExitInfo exit;
    if (!r || r->state != RealmState::Active || rec_id >= r->recs.size()) {
      exit.status = RmmStatus::WrongState;
      trace_->emit(core, EventKind::Rmi, "rmi_rec_enter", realm_arg(id),
                   "wrong_state");
      return exit;
    }
    Rec& rec = r->recs[rec_id];
    if (rec.pending_fault) {
      rec.pending_fault = false;
      trace_->emit(core, EventKind::S2Fault, "mmio_refused", realm_arg(id),
                   "fault");
      exit.kind = ExitKind::Fault;
      emit_enter(core, id, rec_id, exit);
      return exit;
    }
    if (r->irq_pending) {
      exit.kind = ExitKind::Interrupt;
      handle_guest_irq(core, *r, *r->irq_pending);
      r->irq_pending.reset();
      emit_enter(core, id, rec_id, exit);
      return exit;
    }

    size_t budget = 100000;  // guards against jump-only livelock
    while (budget--) {
      if (rec.halted || rec.ip >= rec.script.size()) {
        rec.halted = true;
        exit.kind = ExitKind::Halt;
        break;
      }
      const GuestAction& a = rec.script[rec.ip];
      bool trapped = false;
      switch (a.op) {
        case GuestOp::Halt:
          rec.halted = true;
          exit.kind = ExitKind::Halt;
          trapped = true;
          rec.ip++;
          break;
        case GuestOp::Jump: {
          int64_t target = static_cast<int64_t>(rec.ip) + a.rel;
          rec.ip = (target < 0 || target > static_cast<int64_t>(rec.script.size()))
                       ? rec.script.size()
                       : static_cast<size_t>(target);
          break;
        }
        case GuestOp::WriteMem:
          if (!guest_write(core, *r, a.ipa, a.bytes)) {
            exit.kind = ExitKind::Fault;
            exit.fault_ipa = a.ipa;
            trapped = true;
          }
          rec.ip++;
          break;
        case GuestOp::ReadMem: {
          std::vector<uint8_t> buf(std::min<uint64_t>(a.value, 4096), 0);
          if (!guest_read(core, *r, a.ipa, buf)) {
            exit.kind = ExitKind::Fault;
            exit.fault_ipa = a.ipa;
            trapped = true;
          } else {
            uint64_t v = 0;
            for (size_t i = 0; i < std::min<size_t>(8, buf.size()); i++)
              v |= static_cast<uint64_t>(buf[i]) << (8 * i);
            rec.regs[0] = v;
          }
          rec.ip++;
          break;
        }
        case GuestOp::Exec:
          if (!guest_exec(core, *r, a.ipa)) {
            exit.kind = ExitKind::Fault;
            exit.fault_ipa = a.ipa;
            trapped = true;
          }
          rec.ip++;
          break;
        case GuestOp::Rsi:
          exit.kind = ExitKind::Rsi;
          exit.rsi_name = a.rsi_call;
          exit.rsi_status = dispatch_rsi(core, *r, a);
          trapped = true;
          rec.ip++;
          break;
        case GuestOp::MmioRead:
        case GuestOp::MmioWrite: {
          Access acc = a.op == GuestOp::MmioRead ? Access::Read : Access::Write;
          auto it = r->s2.find(a.ipa >> kPageShift);
          if (it != r->s2.end()) {
            // Mapped as ordinary memory: no trap, plain access semantics.
            if (acc == Access::Read) {
              std::vector<uint8_t> buf(8, 0);
              if (guest_read(core, *r, a.ipa, buf)) {
                uint64_t v = 0;
                for (int i = 0; i < 8; i++)
                  v |= static_cast<uint64_t>(buf[i]) << (8 * i);
                rec.regs[0] = v;
              }
            } else {
              std::vector<uint8_t> buf(8, 0);
              for (int i = 0; i < 8; i++)
                buf[i] = static_cast<uint8_t>(a.value >> (8 * i));
              guest_write(core, *r, a.ipa, buf);
            }
          } else {
            r->pending_mmio = PendingMmio{rec_id, a.ipa, acc, a.value};
            exit.kind = ExitKind::MmioAbort;
            exit.fault_ipa = a.ipa;
            exit.mmio_access = acc;
            exit.mmio_wval = a.value;
            trapped = true;
          }
          rec.ip++;
          break;
        }
        case GuestOp::RpcCompute:
          rpc_compute(core, *r, a.rpc_kind);
          rec.ip++;
          break;
      }
      if (trapped) break;
    }
    emit_enter(core, id, rec_id, exit);
    return exit;
  }

  /// Transport-side guest accesses (virtqueue ring, shared frames) resolve
  /// through the realm's own stage-2 view on a realm-world core.
  bool guest_mem_read(CoreId core, RealmDescriptor& r, Ipa ipa,
                      std::span<uint8_t> out) {
    return guest_read(core, r, ipa, out);
  }
  bool guest_mem_write(CoreId core, RealmDescriptor& r, Ipa ipa,
                       std::span<const uint8_t> in) {
    return guest_write(core, r, ipa, in);
  }

  // --- Guest-side channel helpers (key lives with the realm) -------------

  std::vector<uint8_t> channel_seal(RealmDescriptor& r,
                                    std::span<const uint8_t> payload) {
    return aead_seal(r.channel_key, r.channel_send_ctr++, payload);
  }
  bool channel_open(RealmDescriptor& r, std::span<const uint8_t> blob,
                    std::vector<uint8_t>& out) {
    return aead_open(r.channel_key, blob, out);
  }

  const Digest256& tf_digest() const { return tf_digest_; }
  const Digest256& rmm_digest() const { return rmm_digest_; }
  const Digest256& bootloader_digest() const { return bootloader_digest_; }

  // Snapshot support.
  RealmId next_realm_id() const { return next_realm_; }
  void restore(std::map<RealmId, RealmDescriptor> realms,
               std::map<GranuleIdx, RealmId> owners, RealmId next) {
    realms_ = std::move(realms);
    owner_ = std::move(owners);
    next_realm_ = next;
  }

 private:
  static std::string realm_arg(RealmId id) {
    return "realm=" + std::to_string(id);
  }

  Digest256 derive_channel_key(RealmId id) const {
    std::vector<uint8_t> buf;
    const char* tag = "chan";
    buf.insert(buf.end(), tag, tag + 4);
    for (int i = 0; i < 8; i++)
      buf.push_back(static_cast<uint8_t>(session_seed_ >> (8 * i)));
    for (int i = 0; i < 4; i++) buf.push_back(static_cast<uint8_t>(id >> (8 * i)));
    return sha256(buf);
  }

  void emit_enter(CoreId core, RealmId id, RecId rec, const ExitInfo& exit) {
    std::ostringstream args;
    args << "realm=" << id << " rec=" << rec;
    std::string outcome(to_string(exit.kind));
    if (exit.kind == ExitKind::Rsi) outcome += ":" + exit.rsi_name;
    trace_->emit(core, EventKind::Rmi, "rmi_rec_enter", args.str(), outcome);
  }

  bool s2_translate(RealmDescriptor& r, Ipa ipa, Access acc, CoreId core,
                    uint64_t& pa_out) {
    uint64_t page = ipa >> kPageShift;
    auto it = r.s2.find(page);
    std::ostringstream args;
    args << "realm=" << r.id << " ipa=0x" << std::hex << ipa << std::dec
         << " access=" << to_string(acc);
    if (it == r.s2.end()) {
      trace_->emit(core, EventKind::S2Fault, "s2_unmapped", args.str(), "fault");
      return false;
    }
    uint8_t need = acc == Access::Read    ? kPermR
                   : acc == Access::Write ? kPermW
                                          : kPermX;
    if (!(it->second.perms & need)) {
      trace_->emit(core, EventKind::S2Fault, "s2_perm", args.str(), "fault");
      return false;
    }
    auto rip = r.ripas.find(page);
    Ripas want = ipa >= kUnprotectedIpaBase ? Ripas::Unprotected : Ripas::Ram;
    if (rip == r.ripas.end() || rip->second != want) {
      trace_->emit(core, EventKind::S2Fault, "s2_ripas", args.str(), "fault");
      return false;
    }
    pa_out = static_cast<uint64_t>(it->second.granule) * kGranuleSize +
             (ipa & (kGranuleSize - 1));
    return true;
  }

  bool guest_read(CoreId core, RealmDescriptor& r, Ipa ipa,
                  std::span<uint8_t> out) {
    size_t done = 0;
    while (done < out.size()) {
      uint64_t pa = 0;
      size_t chunk = std::min<uint64_t>(out.size() - done,
                                        kGranuleSize - ((ipa + done) & (kGranuleSize - 1)));
      if (!s2_translate(r, ipa + done, Access::Read, core, pa)) return false;
      if (!machine_->read_bytes(core, pa, out.subspan(done, chunk)).allowed)
        return false;
      done += chunk;
    }
    return true;
  }

  bool guest_write(CoreId core, RealmDescriptor& r, Ipa ipa,
                   std::span<const uint8_t> in) {
    size_t done = 0;
    while (done < in.size()) {
      uint64_t pa = 0;
      size_t chunk = std::min<uint64_t>(in.size() - done,
                                        kGranuleSize - ((ipa + done) & (kGranuleSize - 1)));
      if (!s2_translate(r, ipa + done, Access::Write, core, pa)) return false;
      if (!machine_->write_bytes(core, pa, in.subspan(done, chunk)).allowed)
        return false;
      done += chunk;
    }
    return true;
  }

  bool guest_exec(CoreId core, RealmDescriptor& r, Ipa ipa) {
    uint64_t pa = 0;
    if (!s2_translate(r, ipa, Access::Execute, core, pa)) return false;
    return machine_->exec_check(core, pa).allowed;
  }

  RmmStatus dispatch_rsi(CoreId core, RealmDescriptor& r, const GuestAction& a) {
    if (a.rsi_call == "ex_access") {
      if (a.rsi_args.empty()) return RmmStatus::RangeInvalid;
      bool enable = a.rsi_args[0] != 0;
      std::vector<uint64_t> pages(a.rsi_args.begin() + 1, a.rsi_args.end());
      return rsi_ex_access(core, r.id, pages, enable);
    }
    if (a.rsi_call == "mmio") return rsi_mmio(core, r.id, a.rsi_args);
    if (a.rsi_call == "set_ripas") {
      if (a.rsi_args.size() != 3) return RmmStatus::RangeInvalid;
      Ripas st = a.rsi_args[2] == 0   ? Ripas::Empty
                 : a.rsi_args[2] == 1 ? Ripas::Ram
                                      : Ripas::Unprotected;
      return set_ripas(core, r.id, a.rsi_args[0], a.rsi_args[1], st);
    }
    if (a.rsi_call == "attest") {
      auto rep = get_attestation_report(core, r.id);
      if (!rep) return RmmStatus::WrongState;
      // Surface the first measurement word to the guest.
      uint64_t v = 0;
      for (int i = 0; i < 8; i++)
        v |= static_cast<uint64_t>(rep->realm_measurement[i]) << (8 * i);
      if (!r.recs.empty()) r.recs[0].regs[1] = v;
      return RmmStatus::Ok;
    }
    return RmmStatus::RangeInvalid;
  }

  void handle_guest_irq(CoreId core, RealmDescriptor& r, const IrqSource& src) {
    if (src.kind != IrqSource::Kind::Device) return;
    // Device interrupt: the guest driver pulls the sealed payload relayed by
    // the hypervisor. A missing or tampered payload fails authentication.
    std::ostringstream args;
    args << "realm=" << r.id << " dev=" << to_string(src.dev);
    if (r.inbox.empty()) {
      trace_->emit(core, EventKind::Transport, "channel_rx", args.str(),
                   "tamper_detected");
      return;
    }
    std::vector<uint8_t> blob = std::move(r.inbox.front());
    r.inbox.pop_front();
    std::vector<uint8_t> plain;
    if (channel_open(r, blob, plain)) {
      r.last_rx = std::move(plain);
      trace_->emit(core, EventKind::Transport, "channel_rx", args.str(),
                   "delivered");
    } else {
      trace_->emit(core, EventKind::Transport, "channel_rx", args.str(),
                   "tamper_detected");
    }
  }

  /// Guest RPC responder: runs between the exclusive-access brackets that
  /// the expanded script placed around it. Validation happens first; a bad
  /// frame is answered with a status code before any compute.
  void rpc_compute(CoreId core, RealmDescriptor& r, const std::string& kind) {
    if (!r.shared_region) return;
    Ipa base = r.shared_region->first;
    uint64_t region_bytes = r.shared_region->second * kGranuleSize;
    std::array<uint8_t, 12> hdr{};
    if (!guest_read(core, r, base, hdr)) return;
    auto rd32 = [](const uint8_t* p) {
      return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
             (static_cast<uint32_t>(p[2]) << 16) |
             (static_cast<uint32_t>(p[3]) << 24);
    };
    uint32_t cmd = rd32(hdr.data());
    uint32_t len = rd32(hdr.data() + 4);
    uint32_t status = rd32(hdr.data() + 8);
    if (status != 0) return;  // no pending request

    auto wr32 = [&](Ipa at, uint32_t v) {
      std::array<uint8_t, 4> b{static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                               static_cast<uint8_t>(v >> 16),
                               static_cast<uint8_t>(v >> 24)};
      guest_write(core, r, at, b);
    };
    // Bounds check under exclusive access; this is the TOCTOU-guarded check.
    if (len > region_bytes - 12 || cmd < 1 || cmd > 3) {
      wr32(base + 8, 2);  // frame invalid
      trace_->emit(core, EventKind::Transport, "rpc_serve",
                   "realm=" + std::to_string(r.id), "frame_invalid");
      return;
    }
    std::vector<uint8_t> payload(len, 0);
    if (len && !guest_read(core, r, base + 12, payload)) return;

    std::string outcome = "ok";
    if (cmd == 1 && kind == "add") {
      if (len != 16) {
        wr32(base + 8, 2);
        outcome = "frame_invalid";
      } else {
        uint64_t x = 0, y = 0;
        for (int i = 0; i < 8; i++) {
          x |= static_cast<uint64_t>(payload[i]) << (8 * i);
          y |= static_cast<uint64_t>(payload[8 + i]) << (8 * i);
        }
        uint64_t sum = x + y;
        std::array<uint8_t, 8> out{};
        for (int i = 0; i < 8; i++) out[i] = static_cast<uint8_t>(sum >> (8 * i));
        guest_write(core, r, base + 12, out);
        wr32(base + 4, 8);
        wr32(base + 8, 1);
      }
    } else if (cmd == 2 && kind == "otp") {
      r.otp_secret = payload;
      r.otp_counter = 0;
      wr32(base + 4, 0);
      wr32(base + 8, 1);
    } else if (cmd == 3 && kind == "otp") {
      if (r.otp_secret.empty()) {
        wr32(base + 8, 2);
        outcome = "frame_invalid";
      } else {
        uint32_t code = hotp_sha256(r.otp_secret, r.otp_counter++);
        std::array<uint8_t, 4> out{
            static_cast<uint8_t>(code), static_cast<uint8_t>(code >> 8),
            static_cast<uint8_t>(code >> 16), static_cast<uint8_t>(code >> 24)};
        guest_write(core, r, base + 12, out);
        wr32(base + 4, 4);
        wr32(base + 8, 1);
      }
    } else {
      wr32(base + 8, 2);
      outcome = "frame_invalid";
    }
    trace_->emit(core, EventKind::Transport, "rpc_serve",
                 "realm=" + std::to_string(r.id) + " cmd=" + std::to_string(cmd),
                 outcome);
  }

  Machine* machine_;
  RootMonitor* root_;
  Trace* trace_;
  const Hooks* hooks_;
  uint64_t session_seed_;
  std::map<RealmId, RealmDescriptor> realms_;
  std::map<GranuleIdx, RealmId> owner_;  // the global no-overlap index
  RealmId next_realm_ = 1;
  Digest256 tf_digest_{}, rmm_digest_{}, bootloader_digest_{};
  AllowList allowlist_;
  uint64_t s2_epoch_ = 0;
  uint64_t measurement_epoch_ = 0;
  uint64_t mmio_emulations_ = 0;
  uint64_t mmio_unmarked_emulations_ = 0;
};

}  // namespace sbsim
