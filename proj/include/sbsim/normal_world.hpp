// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/manifest.hpp"
#include "sbsim/realm_monitor.hpp"
#include "sbsim/root_monitor.hpp"
#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

/// Hypervisor bookkeeping for one launched service. The normal world tracks
/// which granules it handed over so it can tear them down again; it never
/// sees realm-private state.
struct SbsHandle {
  RealmId realm = 0;
  std::vector<GranuleIdx> delegated;       // everything handed to the realm
  std::vector<GranuleIdx> shared_granules; // subset backing the shared region
  Ipa shared_base = 0;
  uint64_t shared_pages = 0;
  uint64_t vq_offset = 0;
  uint64_t vq_capacity = 0;
  Manifest manifest;
  bool active = false;
};

enum class LaunchError : uint8_t {
  None,
  PayloadDigestMismatch,
  OutOfMemory,
  Denied,
  OverlapViolation,
  BootRejected,
};

constexpr std::string_view to_string(LaunchError e) {
  switch (e) {
    case LaunchError::None: return "ok";
    case LaunchError::PayloadDigestMismatch: return "payload_digest_mismatch";
    case LaunchError::OutOfMemory: return "out_of_memory";
    case LaunchError::Denied: return "denied";
    case LaunchError::OverlapViolation: return "overlap_violation";
    case LaunchError::BootRejected: return "boot_rejected";
  }
  return "?";
}

struct LaunchResult {
  LaunchError error = LaunchError::None;
  RealmId realm = 0;
  BootCheck boot_check = BootCheck::Pass;
  bool ok() const { return error == LaunchError::None; }
};

struct VqDesc {
  Ipa addr = 0;
  uint32_t len = 0;
  uint32_t flags = 0;
  bool operator==(const VqDesc&) const = default;
};

enum class VqStatus : uint8_t { Ok, Rejected, Fault, Empty, Full };

enum class VqSide : uint8_t { Host, Guest };

enum class ChannelStatus : uint8_t { Delivered, TamperDetected, NotAttached };

struct RpcResult {
  bool frame_invalid = false;
  bool transport_error = false;
  std::vector<uint8_t> reply;
};

inline constexpr uint32_t kRpcCmdAdd = 1;
inline constexpr uint32_t kRpcCmdOtpRegister = 2;
inline constexpr uint32_t kRpcCmdOtpRequest = 3;

/// Untrusted-side actors: the hypervisor/VMM that orchestrates SBS creation
/// and teardown, the app talking RPC over the shared region, and the shared
/// transports (virtqueue rings and RPC frames). All raw memory traffic goes
/// through the machine's protection checks.
class NormalWorld {
 public:
  NormalWorld(Machine* machine, RootMonitor* root, RealmMonitor* rmm,
              Trace* trace)
      : machine_(machine), root_(root), rmm_(rmm), trace_(trace) {}

  const std::map<RealmId, SbsHandle>& handles() const { return handles_; }
  SbsHandle* find_handle(RealmId id) {
    auto it = handles_.find(id);
    return it == handles_.end() ? nullptr : &it->second;
  }
  GranuleIdx next_alloc_hint() const { return next_alloc_; }
  void restore(std::map<RealmId, SbsHandle> handles, GranuleIdx next_alloc) {
    handles_ = std::move(handles);
    next_alloc_ = next_alloc;
  }

  /// Expands rpc_serve pseudo-actions into the exclusive-access bracket the
  /// service wraps around every request.
  static GuestScript expand_script(const Manifest& m) {
    GuestScript out;
    std::vector<uint64_t> shared_pages;
    for (uint64_t i = 0; i < m.shared_pages; i++)
      shared_pages.push_back(m.shared_base_ipa + i * kGranuleSize);
    for (const auto& a : m.entry_script) {
      if (a.op == GuestOp::RpcCompute && a.rsi_call == "serve") {
        std::vector<uint64_t> on{1}, off{0};
        on.insert(on.end(), shared_pages.begin(), shared_pages.end());
        off.insert(off.end(), shared_pages.begin(), shared_pages.end());
        out.push_back(GuestAction::rsi("ex_access", on));
        out.push_back(GuestAction::rpc_compute(a.rpc_kind));
        out.push_back(GuestAction::rsi("ex_access", off));
        out.push_back(GuestAction::jump(-3));
      } else {
        out.push_back(a);
      }
    }
    return out;
  }

  /// Hypervisor-issued RMI that delegates one granule, routed through the
  /// TF where the request is logged before the RMM consumes it.
  RootStatus rmi_granule_delegate(CoreId core, GranuleIdx g, RealmId realm) {
    root_->log_rmi("rmi_granule_delegate", g, realm);
    trace_->emit(core, EventKind::Rmi, "rmi_granule_delegate",
                 "g=" + std::to_string(g) + " realm=" + std::to_string(realm));
    WorldGuard in_realm(*machine_, core, World::Realm);
    return root_->smc_delegate(core, g);
  }

  RootStatus rmi_granule_undelegate(CoreId core, GranuleIdx g, RealmId realm) {
    root_->log_rmi("rmi_granule_undelegate", g, realm);
    trace_->emit(core, EventKind::Rmi, "rmi_granule_undelegate",
                 "g=" + std::to_string(g) + " realm=" + std::to_string(realm));
    WorldGuard in_realm(*machine_, core, World::Realm);
    RootStatus st = RootStatus::Denied;
    if (!rmm_->owner_of(g)) {
      // The RMM scrubs realm memory before giving it back.
      if (g < machine_->granules() && !root_->is_static_granule(g) &&
          machine_->gpt_pair(g) == std::pair{Pas::Realm, Pas::Realm}) {
        std::vector<uint8_t> zeros(kGranuleSize, 0);
        machine_->write_bytes(core, static_cast<uint64_t>(g) * kGranuleSize,
                              zeros);
      }
      st = root_->smc_undelegate(core, g);
    }
    return st;
  }

  /// Full creation sequence: delegate, rtt, data pages, REC, shared window,
  /// activate, then the trusted bootloader's validation. Any failure tears
  /// down partial state.
  LaunchResult hyp_create_sbs(CoreId core, const Manifest& m) {
    LaunchResult res;
    GuestScript script = expand_script(m);
    std::vector<uint8_t> payload = serialize_script(script);
    if (!m.payload_digest.empty() &&
        m.payload_digest != to_hex(sha256(payload))) {
      res.error = LaunchError::PayloadDigestMismatch;
      trace_->emit(core, EventKind::Transport, "hyp_create_sbs", "",
                   std::string(to_string(res.error)));
      return res;
    }

    RealmId realm = rmi_wrapped<RealmId>(core, [&] {
      return rmm_->rmi_realm_create(core, m);
    });
    res.realm = realm;
    SbsHandle h;
    h.realm = realm;
    h.manifest = m;
    h.shared_base = m.shared_base_ipa;
    h.vq_offset = m.vq_offset;

    rmi_wrapped<RmmStatus>(core, [&] {
      return rmm_->rmi_rtt_create(core, realm, 0, std::max<uint64_t>(m.memory_pages, 1));
    });
    if (m.shared_pages > 0)
      rmi_wrapped<RmmStatus>(core, [&] {
        return rmm_->rmi_rtt_create(core, realm, m.shared_base_ipa, m.shared_pages);
      });

    auto fail = [&](LaunchError e) {
      teardown(core, h);
      res.error = e;
      trace_->emit(core, EventKind::Transport, "hyp_create_sbs",
                   "realm=" + std::to_string(realm),
                   std::string(to_string(e)));
      return res;
    };

    // Protected data pages carrying the payload (zero pages beyond it).
    for (uint64_t i = 0; i < m.memory_pages; i++) {
      auto g = alloc_granule();
      if (!g) return fail(LaunchError::OutOfMemory);
      if (rmi_granule_delegate(core, *g, realm) != RootStatus::Ok)
        return fail(LaunchError::Denied);
      h.delegated.push_back(*g);
      size_t off = i * kGranuleSize;
      std::span<const uint8_t> chunk;
      if (off < payload.size())
        chunk = std::span<const uint8_t>(payload).subspan(
            off, std::min<size_t>(kGranuleSize, payload.size() - off));
      root_->log_rmi("rmi_data_create", *g, realm);
      RmmStatus st = rmi_wrapped<RmmStatus>(core, [&] {
        return rmm_->rmi_data_create(core, realm, *g, i * kGranuleSize, chunk);
      });
      if (st == RmmStatus::OverlapViolation)
        return fail(LaunchError::OverlapViolation);
      if (st != RmmStatus::Ok) return fail(LaunchError::Denied);
    }

    rmi_wrapped<RmmStatus>(core, [&] {
      return rmm_->rmi_rec_create(core, realm, script);
    });

    // The fixed contiguous shared window.
    for (uint64_t i = 0; i < m.shared_pages; i++) {
      auto g = alloc_granule();
      if (!g) return fail(LaunchError::OutOfMemory);
      if (rmi_granule_delegate(core, *g, realm) != RootStatus::Ok)
        return fail(LaunchError::Denied);
      h.delegated.push_back(*g);
      root_->log_rmi("rmi_rtt_map_unprotected", *g, realm);
      RmmStatus st = rmi_wrapped<RmmStatus>(core, [&] {
        return rmm_->rmi_rtt_map_unprotected(core, realm, *g,
                                             m.shared_base_ipa + i * kGranuleSize);
      });
      if (st != RmmStatus::Ok) return fail(LaunchError::Denied);
      h.shared_granules.push_back(*g);
      h.shared_pages++;
    }

    rmi_wrapped<RmmStatus>(core, [&] {
      return rmm_->rmi_realm_activate(core, realm);
    });

    // First entry runs the trusted bootloader's validation.
    BootCheck bc = rmi_wrapped<BootCheck>(core, [&] {
      return rmm_->validate_boot(core, realm);
    });
    res.boot_check = bc;
    if (bc != BootCheck::Pass) {
      LaunchResult r2 = fail(LaunchError::BootRejected);
      r2.boot_check = bc;
      return r2;
    }

    if (h.shared_pages > 0 &&
        h.vq_offset + 12 + 8 * 16 <= h.shared_pages * kGranuleSize) {
      h.vq_capacity = 8;
      vq_init(core, h);
    }
    h.active = true;
    handles_[realm] = h;
    trace_->emit(core, EventKind::Transport, "hyp_create_sbs",
                 "realm=" + std::to_string(realm), "ok");
    return res;
  }

  /// Destroys the realm and reclaims every granule the hypervisor handed it.
  RmmStatus hyp_destroy_sbs(CoreId core, RealmId realm) {
    SbsHandle* h = find_handle(realm);
    std::vector<GranuleIdx> delegated = h ? h->delegated : std::vector<GranuleIdx>{};
    for (GranuleIdx g : delegated)
      root_->log_rmi("rmi_granule_undelegate", g, realm);
    trace_->emit(core, EventKind::Rmi, "rmi_destroy_realm_req",
                 "realm=" + std::to_string(realm));
    RmmStatus st = rmi_wrapped<RmmStatus>(core, [&] {
      return rmm_->rmi_destroy_realm(core, realm);
    });
    // Anything delegated but never owned by the realm comes back directly.
    for (GranuleIdx g : delegated) {
      if (g < machine_->granules() &&
          machine_->gpt_pair(g) == std::pair{Pas::Realm, Pas::Realm} &&
          !rmm_->owner_of(g)) {
        WorldGuard in_realm(*machine_, core, World::Realm);
        std::vector<uint8_t> zeros(kGranuleSize, 0);
        machine_->write_bytes(core, static_cast<uint64_t>(g) * kGranuleSize,
                              zeros);
        root_->smc_undelegate(core, g);
      }
    }
    if (h) h->active = false;
    return st;
  }

  ExitInfo hyp_rec_enter(CoreId core, RealmId realm, RecId rec) {
    WorldGuard in_realm(*machine_, core, World::Realm);
    return rmm_->rmi_rec_enter(core, realm, rec);
  }

  // --- Virtqueue transport ------------------------------------------------

  void vq_init(CoreId core, const SbsHandle& h) {
    std::array<uint8_t, 12> hdr{};
    put_u32(hdr.data(), static_cast<uint32_t>(h.vq_capacity));
    shared_write(core, VqSide::Host, h, h.vq_offset, hdr);
    trace_->emit(core, EventKind::Transport, "vq_init",
                 "realm=" + std::to_string(h.realm) + " cap=" +
                     std::to_string(h.vq_capacity));
  }

  VqStatus vq_push(CoreId core, VqSide side, const SbsHandle& h,
                   const VqDesc& desc) {
    VqStatus st = vq_push_inner(core, side, h, desc);
    trace_->emit(core, EventKind::Transport, "vq_push",
                 vq_args(side, h, desc), std::string(vq_status_str(st)));
    if (st == VqStatus::Rejected)
      trace_->emit(core, EventKind::AttackBlocked, "vq_pointer_escape",
                   vq_args(side, h, desc), "rejected");
    return st;
  }

  VqStatus vq_pop(CoreId core, VqSide side, const SbsHandle& h, VqDesc& out) {
    VqStatus st = vq_pop_inner(core, side, h, out);
    trace_->emit(core, EventKind::Transport, "vq_pop",
                 "realm=" + std::to_string(h.realm), std::string(vq_status_str(st)));
    if (st == VqStatus::Rejected)
      trace_->emit(core, EventKind::AttackBlocked, "vq_pointer_escape",
                   vq_args(side, h, out), "rejected");
    return st;
  }

  // --- Encrypted device channel -------------------------------------------

  /// Guest -> device path. The hypervisor only relays sealed bytes; any
  /// mutation is caught by the remote endpoint's authenticated decryption.
  ChannelStatus encrypted_channel_send(CoreId core, RealmId realm,
                                       DeviceKind dev,
                                       std::span<const uint8_t> payload,
                                       bool tamper,
                                       std::vector<uint8_t>* plaintext_out) {
    RealmDescriptor* r = rmm_->find_realm(realm);
    std::string args = "realm=" + std::to_string(realm) +
                       " dev=" + std::string(to_string(dev));
    if (!r || std::find(r->devices.begin(), r->devices.end(), dev) ==
                  r->devices.end()) {
      trace_->emit(core, EventKind::Transport, "channel_tx", args, "not_attached");
      return ChannelStatus::NotAttached;
    }
    std::vector<uint8_t> blob = rmm_->channel_seal(*r, payload);
    if (tamper && !blob.empty()) blob[blob.size() / 2] ^= 0x01;
    // Remote endpoint (shares the key with the guest) opens the blob.
    std::vector<uint8_t> plain;
    bool ok = aead_open(r->channel_key, blob, plain);
    if (ok && plaintext_out) *plaintext_out = plain;
    trace_->emit(core, EventKind::Transport, "channel_tx", args,
                 ok ? "delivered" : "tamper_detected");
    return ok ? ChannelStatus::Delivered : ChannelStatus::TamperDetected;
  }

  /// Device -> guest path: the remote seals, the hypervisor stores the blob
  /// and injects the device interrupt; the guest opens it on its next entry.
  ChannelStatus channel_deliver_to_guest(CoreId core, RealmId realm,
                                         DeviceKind dev,
                                         std::span<const uint8_t> payload,
                                         bool tamper) {
    RealmDescriptor* r = rmm_->find_realm(realm);
    std::string args = "realm=" + std::to_string(realm) +
                       " dev=" + std::string(to_string(dev));
    if (!r || std::find(r->devices.begin(), r->devices.end(), dev) ==
                  r->devices.end()) {
      trace_->emit(core, EventKind::Transport, "channel_rx_relay", args,
                   "not_attached");
      return ChannelStatus::NotAttached;
    }
    std::vector<uint8_t> blob =
        aead_seal(r->channel_key, (1ull << 32) + r->inbox.size(), payload);
    if (tamper && !blob.empty()) blob[blob.size() / 2] ^= 0x01;
    r->inbox.push_back(std::move(blob));
    trace_->emit(core, EventKind::Transport, "channel_rx_relay", args, "queued");
    rmm_->inject_interrupt(core, realm, IrqSource::device(dev));
    return ChannelStatus::Delivered;
  }

  // --- RPC over the shared region ------------------------------------------

  /// App-side call: writes the frame, drives the guest through its
  /// exclusive-access bracket, and reads the reply after the off bracket.
  RpcResult rpc_call(CoreId core, RealmId realm, uint32_t cmd,
                     std::span<const uint8_t> payload) {
    RpcResult res;
    SbsHandle* h = find_handle(realm);
    if (!h || !h->active || h->shared_pages == 0) {
      res.transport_error = true;
      return res;
    }
    uint64_t region = h->shared_pages * kGranuleSize;
    if (payload.size() + 12 > region) {
      res.frame_invalid = true;  // bounds check before any compute
      trace_->emit(core, EventKind::Transport, "rpc_call",
                   "realm=" + std::to_string(realm), "frame_invalid");
      return res;
    }
    std::vector<uint8_t> frame(12 + payload.size());
    put_u32(frame.data(), cmd);
    put_u32(frame.data() + 4, static_cast<uint32_t>(payload.size()));
    put_u32(frame.data() + 8, 0);
    std::copy(payload.begin(), payload.end(), frame.begin() + 12);
    if (shared_write(core, VqSide::Host, *h, 0, frame) != VqStatus::Ok) {
      res.transport_error = true;
      return res;
    }

    // Drive the REC: the serve loop traps twice per request (ex_access on,
    // then off); the reply is stable once the off bracket completed.
    int brackets = 0;
    for (int i = 0; i < 64 && brackets < 2; i++) {
      ExitInfo e = hyp_rec_enter(core, realm, 0);
      if (e.status != RmmStatus::Ok ||
          e.kind == ExitKind::Halt || e.kind == ExitKind::Fault) {
        res.transport_error = true;
        return res;
      }
      if (e.kind == ExitKind::Rsi && e.rsi_name == "ex_access") brackets++;
    }
    std::array<uint8_t, 12> hdr{};
    if (shared_read(core, VqSide::Host, *h, 0, hdr) != VqStatus::Ok) {
      res.transport_error = true;
      return res;
    }
    uint32_t rlen = get_u32(hdr.data() + 4);
    uint32_t status = get_u32(hdr.data() + 8);
    if (status == 2) {
      res.frame_invalid = true;
      return res;
    }
    if (status != 1 || rlen > region - 12) {
      res.transport_error = true;
      return res;
    }
    res.reply.assign(rlen, 0);
    if (rlen &&
        shared_read(core, VqSide::Host, *h, 12, res.reply) != VqStatus::Ok)
      res.transport_error = true;
    return res;
  }

  /// Raw shared-region access for both transport sides. Guest accesses go
  /// through its stage-2 view on a realm-world core; host accesses hit the
  /// physical granules from the normal world.
  VqStatus shared_read(CoreId core, VqSide side, const SbsHandle& h,
                       uint64_t offset, std::span<uint8_t> out) {
    return shared_access(core, side, h, offset, out, {}, Access::Read);
  }
  VqStatus shared_write(CoreId core, VqSide side, const SbsHandle& h,
                        uint64_t offset, std::span<const uint8_t> in) {
    return shared_access(core, side, h, offset, {}, in, Access::Write);
  }

 private:
  template <typename R, typename F>
  R rmi_wrapped(CoreId core, F&& f) {
    WorldGuard in_realm(*machine_, core, World::Realm);
    return f();
  }

  std::optional<GranuleIdx> alloc_granule() {
    GranuleIdx n = machine_->granules();
    for (GranuleIdx i = 0; i < n; i++) {
      GranuleIdx g = (next_alloc_ + i) % n;
      if (machine_->gpt_pair(g) == std::pair{Pas::Normal, Pas::NotAccessible}) {
        next_alloc_ = (g + 1) % n;
        return g;
      }
    }
    return std::nullopt;
  }

  void teardown(CoreId core, const SbsHandle& h) {
    SbsHandle tmp = h;
    handles_[h.realm] = tmp;  // make bookkeeping visible to destroy
    hyp_destroy_sbs(core, h.realm);
    handles_.erase(h.realm);
  }

  static void put_u32(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
    p[2] = static_cast<uint8_t>(v >> 16);
    p[3] = static_cast<uint8_t>(v >> 24);
  }
  static uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  }
  static void put_u64(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; i++) p[i] = static_cast<uint8_t>(v >> (8 * i));
  }
  static uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }

  static std::string vq_args(VqSide side, const SbsHandle& h, const VqDesc& d) {
    std::ostringstream os;
    os << "realm=" << h.realm << " side=" << (side == VqSide::Host ? "host" : "guest")
       << " addr=0x" << std::hex << d.addr << std::dec << " len=" << d.len;
    return os.str();
  }

  static std::string_view vq_status_str(VqStatus st) {
    switch (st) {
      case VqStatus::Ok: return "ok";
      case VqStatus::Rejected: return "pointer_escape";
      case VqStatus::Fault: return "fault";
      case VqStatus::Empty: return "empty";
      case VqStatus::Full: return "full";
    }
    return "?";
  }

  VqStatus shared_access(CoreId core, VqSide side, const SbsHandle& h,
                         uint64_t offset, std::span<uint8_t> out,
                         std::span<const uint8_t> in, Access acc) {
    size_t len = acc == Access::Read ? out.size() : in.size();
    if (offset + len > h.shared_pages * kGranuleSize) return VqStatus::Rejected;
    if (side == VqSide::Guest) {
      RealmDescriptor* r = rmm_->find_realm(h.realm);
      if (!r) return VqStatus::Fault;
      WorldGuard in_realm(*machine_, core, World::Realm);
      bool ok = acc == Access::Read
                    ? rmm_->guest_mem_read(core, *r, h.shared_base + offset, out)
                    : rmm_->guest_mem_write(core, *r, h.shared_base + offset, in);
      return ok ? VqStatus::Ok : VqStatus::Fault;
    }
    // Host side: page-by-page through the granules backing the region.
    size_t done = 0;
    while (done < len) {
      uint64_t off = offset + done;
      uint64_t page = off / kGranuleSize;
      uint64_t inner = off % kGranuleSize;
      size_t chunk = std::min<uint64_t>(len - done, kGranuleSize - inner);
      uint64_t pa =
          static_cast<uint64_t>(h.shared_granules[page]) * kGranuleSize + inner;
      CheckResult cr =
          acc == Access::Read
              ? machine_->read_bytes(core, pa, out.subspan(done, chunk))
              : machine_->write_bytes(core, pa, in.subspan(done, chunk));
      if (!cr.allowed) return VqStatus::Fault;
      done += chunk;
    }
    return VqStatus::Ok;
  }

  bool desc_in_region(const SbsHandle& h, const VqDesc& d) const {
    Ipa lo = h.shared_base;
    Ipa hi = h.shared_base + h.shared_pages * kGranuleSize;
    return d.addr >= lo && d.len <= hi - d.addr;
  }

  VqStatus vq_push_inner(CoreId core, VqSide side, const SbsHandle& h,
                         const VqDesc& desc) {
    if (h.vq_capacity == 0) return VqStatus::Fault;
    if (!desc_in_region(h, desc)) return VqStatus::Rejected;
    std::array<uint8_t, 12> hdr{};
    if (shared_read(core, side, h, h.vq_offset, hdr) != VqStatus::Ok)
      return VqStatus::Fault;
    uint32_t cap = get_u32(hdr.data());
    uint32_t head = get_u32(hdr.data() + 4);
    uint32_t tail = get_u32(hdr.data() + 8);
    if (cap == 0 || cap != h.vq_capacity) return VqStatus::Fault;
    if (head - tail >= cap) return VqStatus::Full;
    std::array<uint8_t, 16> slot{};
    put_u64(slot.data(), desc.addr);
    put_u32(slot.data() + 8, desc.len);
    put_u32(slot.data() + 12, desc.flags);
    uint64_t slot_off = h.vq_offset + 12 + (head % cap) * 16;
    if (shared_write(core, side, h, slot_off, slot) != VqStatus::Ok)
      return VqStatus::Fault;
    std::array<uint8_t, 4> head_b{};
    put_u32(head_b.data(), head + 1);
    if (shared_write(core, side, h, h.vq_offset + 4, head_b) != VqStatus::Ok)
      return VqStatus::Fault;
    return VqStatus::Ok;
  }

  VqStatus vq_pop_inner(CoreId core, VqSide side, const SbsHandle& h,
                        VqDesc& out) {
    if (h.vq_capacity == 0) return VqStatus::Fault;
    std::array<uint8_t, 12> hdr{};
    if (shared_read(core, side, h, h.vq_offset, hdr) != VqStatus::Ok)
      return VqStatus::Fault;
    uint32_t cap = get_u32(hdr.data());
    uint32_t head = get_u32(hdr.data() + 4);
    uint32_t tail = get_u32(hdr.data() + 8);
    if (cap == 0 || cap != h.vq_capacity) return VqStatus::Fault;
    if (tail == head) return VqStatus::Empty;
    std::array<uint8_t, 16> slot{};
    uint64_t slot_off = h.vq_offset + 12 + (tail % cap) * 16;
    if (shared_read(core, side, h, slot_off, slot) != VqStatus::Ok)
      return VqStatus::Fault;
    out.addr = get_u64(slot.data());
    out.len = get_u32(slot.data() + 8);
    out.flags = get_u32(slot.data() + 12);
    std::array<uint8_t, 4> tail_b{};
    put_u32(tail_b.data(), tail + 1);
    if (shared_write(core, side, h, h.vq_offset + 8, tail_b) != VqStatus::Ok)
      return VqStatus::Fault;
    // Both transport ends re-validate the descriptor they see.
    if (!desc_in_region(h, out)) return VqStatus::Rejected;
    return VqStatus::Ok;
  }

  Machine* machine_;
  RootMonitor* root_;
  RealmMonitor* rmm_;
  Trace* trace_;
  std::map<RealmId, SbsHandle> handles_;
  GranuleIdx next_alloc_ = 0;
};

}  // namespace sbsim
