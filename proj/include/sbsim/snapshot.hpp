// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbsim/system.hpp"

namespace sbsim {

// Versioned, length-prefixed binary snapshot of the whole machine state.
// The format is deterministic (all maps serialize in key order) but makes
// no portability promises beyond this simulator.
inline constexpr char kSnapshotMagic[4] = {'S', 'B', 'S', 'S'};
inline constexpr uint32_t kSnapshotVersion = 1;

namespace bin {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; i++) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; i++) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void bytes(std::span<const uint8_t> b) {
    u64(b.size());
    buf_.append(reinterpret_cast<const char*>(b.data()), b.size());
  }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  std::vector<uint8_t> bytes() {
    uint64_t n = u64();
    need(n);
    std::vector<uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  std::string str() {
    uint64_t n = u64();
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(uint64_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error("snapshot: truncated input");
  }
  std::string data_;
  size_t pos_ = 0;
};

}  // namespace bin

namespace snapshot_detail {

inline void write_script(bin::Writer& w, const GuestScript& script) {
  w.u64(script.size());
  for (const auto& a : script) {
    w.u8(static_cast<uint8_t>(a.op));
    w.u64(a.ipa);
    w.bytes(a.bytes);
    w.u64(a.value);
    w.i64(a.rel);
    w.str(a.rsi_call);
    w.u64(a.rsi_args.size());
    for (uint64_t v : a.rsi_args) w.u64(v);
    w.str(a.rpc_kind);
  }
}

inline GuestScript read_script(bin::Reader& r) {
  GuestScript script(r.u64());
  for (auto& a : script) {
    a.op = static_cast<GuestOp>(r.u8());
    a.ipa = r.u64();
    a.bytes = r.bytes();
    a.value = r.u64();
    a.rel = r.i64();
    a.rsi_call = r.str();
    a.rsi_args.resize(r.u64());
    for (auto& v : a.rsi_args) v = r.u64();
    a.rpc_kind = r.str();
  }
  return script;
}

inline void write_digest(bin::Writer& w, const Digest256& d) {
  w.bytes(std::span<const uint8_t>(d.data(), d.size()));
}

inline Digest256 read_digest(bin::Reader& r) {
  auto b = r.bytes();
  Digest256 d{};
  if (b.size() != d.size()) throw std::runtime_error("snapshot: bad digest");
  std::memcpy(d.data(), b.data(), d.size());
  return d;
}

inline void write_realm(bin::Writer& w, const RealmDescriptor& r) {
  w.u32(r.id);
  w.u8(static_cast<uint8_t>(r.state));
  w.u64(r.s2.size());
  for (const auto& [page, e] : r.s2) {
    w.u64(page);
    w.u32(e.granule);
    w.u8(e.perms);
  }
  w.u64(r.ripas.size());
  for (const auto& [page, st] : r.ripas) {
    w.u64(page);
    w.u8(static_cast<uint8_t>(st));
  }
  w.u8(r.shared_region ? 1 : 0);
  if (r.shared_region) {
    w.u64(r.shared_region->first);
    w.u64(r.shared_region->second);
  }
  w.u64(r.mmio_regions.size());
  for (uint64_t p : r.mmio_regions) w.u64(p);
  w.u64(r.rtt_pages.size());
  for (uint64_t p : r.rtt_pages) w.u64(p);
  write_digest(w, r.measurement.value);
  w.u64(r.measurement.log.size());
  for (const auto& e : r.measurement.log) {
    w.str(e.kind);
    w.u64(e.ipa);
    write_digest(w, e.digest);
  }
  w.u64(r.recs.size());
  for (const auto& rec : r.recs) {
    w.u32(rec.id);
    for (uint64_t v : rec.regs) w.u64(v);
    w.u64(rec.ip);
    write_script(w, rec.script);
    w.u8(rec.halted ? 1 : 0);
    w.u8(rec.pending_fault ? 1 : 0);
  }
  w.u64(r.devices.size());
  for (DeviceKind d : r.devices) w.u8(static_cast<uint8_t>(d));
  w.u8(r.pending_mmio ? 1 : 0);
  if (r.pending_mmio) {
    w.u32(r.pending_mmio->rec);
    w.u64(r.pending_mmio->ipa);
    w.u8(static_cast<uint8_t>(r.pending_mmio->access));
    w.u64(r.pending_mmio->wval);
  }
  w.u8(r.irq_pending ? 1 : 0);
  if (r.irq_pending) {
    w.u8(static_cast<uint8_t>(r.irq_pending->kind));
    w.u8(static_cast<uint8_t>(r.irq_pending->dev));
  }
  w.u8(r.shared_pages_at_activate ? 1 : 0);
  if (r.shared_pages_at_activate) w.u64(*r.shared_pages_at_activate);
  w.u8(r.boot_validated ? 1 : 0);
  write_digest(w, r.channel_key);
  w.u64(r.channel_send_ctr);
  w.u64(r.inbox.size());
  for (const auto& blob : r.inbox) w.bytes(blob);
  w.bytes(r.last_rx);
  w.bytes(r.otp_secret);
  w.u64(r.otp_counter);
  w.u8(r.mmio_last_write ? 1 : 0);
  if (r.mmio_last_write) {
    w.u64(r.mmio_last_write->first);
    w.u64(r.mmio_last_write->second);
  }
}

inline RealmDescriptor read_realm(bin::Reader& rd) {
  RealmDescriptor r;
  r.id = rd.u32();
  r.state = static_cast<RealmState>(rd.u8());
  uint64_t n = rd.u64();
  for (uint64_t i = 0; i < n; i++) {
    uint64_t page = rd.u64();
    S2Entry e;
    e.granule = rd.u32();
    e.perms = rd.u8();
    r.s2.emplace(page, e);
  }
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) {
    uint64_t page = rd.u64();
    r.ripas.emplace(page, static_cast<Ripas>(rd.u8()));
  }
  if (rd.u8()) {
    uint64_t base = rd.u64(), pages = rd.u64();
    r.shared_region = {base, pages};
  }
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) r.mmio_regions.insert(rd.u64());
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) r.rtt_pages.insert(rd.u64());
  r.measurement.value = read_digest(rd);
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) {
    MeasurementEntry e;
    e.kind = rd.str();
    e.ipa = rd.u64();
    e.digest = read_digest(rd);
    r.measurement.log.push_back(std::move(e));
  }
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) {
    Rec rec;
    rec.id = rd.u32();
    for (auto& v : rec.regs) v = rd.u64();
    rec.ip = rd.u64();
    rec.script = read_script(rd);
    rec.halted = rd.u8() != 0;
    rec.pending_fault = rd.u8() != 0;
    r.recs.push_back(std::move(rec));
  }
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++)
    r.devices.push_back(static_cast<DeviceKind>(rd.u8()));
  if (rd.u8()) {
    PendingMmio pm;
    pm.rec = rd.u32();
    pm.ipa = rd.u64();
    pm.access = static_cast<Access>(rd.u8());
    pm.wval = rd.u64();
    r.pending_mmio = pm;
  }
  if (rd.u8()) {
    IrqSource src;
    src.kind = static_cast<IrqSource::Kind>(rd.u8());
    src.dev = static_cast<DeviceKind>(rd.u8());
    r.irq_pending = src;
  }
  if (rd.u8()) r.shared_pages_at_activate = rd.u64();
  r.boot_validated = rd.u8() != 0;
  r.channel_key = read_digest(rd);
  r.channel_send_ctr = rd.u64();
  n = rd.u64();
  for (uint64_t i = 0; i < n; i++) r.inbox.push_back(rd.bytes());
  r.last_rx = rd.bytes();
  r.otp_secret = rd.bytes();
  r.otp_counter = rd.u64();
  if (rd.u8()) {
    uint64_t a = rd.u64(), b = rd.u64();
    r.mmio_last_write = {a, b};
  }
  return r;
}

}  // namespace snapshot_detail

inline void save_system(System& sys, std::ostream& out) {
  using namespace snapshot_detail;
  bin::Writer w;
  w.u32(kSnapshotVersion);
  w.u64(sys.seed());

  const MachineLayout& layout = sys.machine().layout();
  w.u32(layout.granules);
  w.u64(layout.regions.size());
  for (const auto& r : layout.regions) {
    w.u8(static_cast<uint8_t>(r.kind));
    w.u32(r.start);
    w.u32(r.count);
  }
  w.u32(sys.machine().core_count());
  for (CoreId c = 0; c < sys.machine().core_count(); c++) {
    const Core& core = sys.machine().core(c);
    w.u8(static_cast<uint8_t>(core.sec_state));
    w.u8(static_cast<uint8_t>(core.active_gpt));
    w.u64(core.tlb.size());
    for (const auto& [g, pas] : core.tlb) {
      w.u32(g);
      w.u8(static_cast<uint8_t>(pas));
    }
  }
  for (GranuleIdx g = 0; g < layout.granules; g++) {
    w.u8(static_cast<uint8_t>(sys.machine().gpt(GptId::GptN).entry(g)));
    w.u8(static_cast<uint8_t>(sys.machine().gpt(GptId::GptRs).entry(g)));
  }
  for (GranuleIdx g = 0; g < layout.granules; g++) {
    if (sys.machine().granule_is_zero(g)) {
      w.u8(0);
    } else {
      w.u8(1);
      w.bytes(sys.machine().granule_data(g));
    }
  }

  const auto& pending = sys.root().pending();
  w.u64(pending.size());
  for (const auto& [key, count] : pending) {
    w.str(std::get<0>(key));
    w.u32(std::get<1>(key));
    w.u32(std::get<2>(key));
    w.u32(count);
  }

  w.u32(sys.rmm().next_realm_id());
  const auto& realms = sys.rmm().realms();
  w.u64(realms.size());
  for (const auto& [id, r] : realms) write_realm(w, r);
  const auto& owners = sys.rmm().owners();
  w.u64(owners.size());
  for (const auto& [g, id] : owners) {
    w.u32(g);
    w.u32(id);
  }

  const auto& handles = sys.nw().handles();
  w.u64(handles.size());
  for (const auto& [id, h] : handles) {
    w.u32(h.realm);
    w.u64(h.delegated.size());
    for (GranuleIdx g : h.delegated) w.u32(g);
    w.u64(h.shared_granules.size());
    for (GranuleIdx g : h.shared_granules) w.u32(g);
    w.u64(h.shared_base);
    w.u64(h.shared_pages);
    w.u64(h.vq_offset);
    w.u64(h.vq_capacity);
    w.u8(h.active ? 1 : 0);
  }
  w.u32(sys.nw().next_alloc_hint());

  w.u64(sys.trace().next_step());
  const CounterReport& c = sys.trace().counters();
  w.u64(c.context_switches);
  w.u64(c.hyp_vm_calls);
  w.u64(c.smcs);
  w.u64(c.rmis);
  w.u64(c.rsis);
  w.u64(c.gpfs);

  out.write(kSnapshotMagic, 4);
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
}

inline std::unique_ptr<System> load_system(std::istream& in) {
  using namespace snapshot_detail;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kSnapshotMagic, 4) != 0)
    throw std::runtime_error("snapshot: bad magic");
  std::string rest((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  bin::Reader r(std::move(rest));
  if (r.u32() != kSnapshotVersion)
    throw std::runtime_error("snapshot: unsupported version");

  SystemConfig cfg;
  cfg.seed = r.u64();
  cfg.layout.granules = r.u32();
  cfg.layout.regions.clear();
  uint64_t nregions = r.u64();
  for (uint64_t i = 0; i < nregions; i++) {
    LayoutRegion reg;
    reg.kind = static_cast<RegionKind>(r.u8());
    reg.start = r.u32();
    reg.count = r.u32();
    cfg.layout.regions.push_back(reg);
  }
  uint32_t cores = r.u32();
  cfg.cores = cores;
  auto sys = std::make_unique<System>(std::move(cfg));

  for (CoreId c = 0; c < cores; c++) {
    Core& core = sys->machine().core(c);
    core.sec_state = static_cast<World>(r.u8());
    core.active_gpt = static_cast<GptId>(r.u8());
    uint64_t n = r.u64();
    core.tlb.clear();
    for (uint64_t i = 0; i < n; i++) {
      GranuleIdx g = r.u32();
      core.tlb.emplace(g, static_cast<Pas>(r.u8()));
    }
  }
  GranuleIdx granules = sys->machine().granules();
  for (GranuleIdx g = 0; g < granules; g++) {
    sys->machine().set_gpt_entry(GptId::GptN, g, static_cast<Pas>(r.u8()));
    sys->machine().set_gpt_entry(GptId::GptRs, g, static_cast<Pas>(r.u8()));
  }
  for (GranuleIdx g = 0; g < granules; g++) {
    if (r.u8()) {
      auto bytes = r.bytes();
      if (bytes.size() != kGranuleSize)
        throw std::runtime_error("snapshot: bad granule size");
      sys->machine().granule_data(g) = std::move(bytes);
    }
  }
  sys->root().rebuild_static_set();

  std::map<RootMonitor::PendingKey, uint32_t> pending;
  uint64_t npending = r.u64();
  for (uint64_t i = 0; i < npending; i++) {
    std::string name = r.str();
    GranuleIdx g = r.u32();
    RealmId realm = r.u32();
    pending[RootMonitor::PendingKey{name, g, realm}] = r.u32();
  }
  sys->root().restore_pending(std::move(pending));

  RealmId next_realm = r.u32();
  std::map<RealmId, RealmDescriptor> realms;
  uint64_t nrealms = r.u64();
  for (uint64_t i = 0; i < nrealms; i++) {
    RealmDescriptor rd = read_realm(r);
    RealmId id = rd.id;
    realms.emplace(id, std::move(rd));
  }
  std::map<GranuleIdx, RealmId> owners;
  uint64_t nowners = r.u64();
  for (uint64_t i = 0; i < nowners; i++) {
    GranuleIdx g = r.u32();
    owners[g] = r.u32();
  }
  sys->rmm().restore(std::move(realms), std::move(owners), next_realm);

  std::map<RealmId, SbsHandle> handles;
  uint64_t nhandles = r.u64();
  for (uint64_t i = 0; i < nhandles; i++) {
    SbsHandle h;
    h.realm = r.u32();
    uint64_t nd = r.u64();
    for (uint64_t k = 0; k < nd; k++) h.delegated.push_back(r.u32());
    uint64_t ns = r.u64();
    for (uint64_t k = 0; k < ns; k++) h.shared_granules.push_back(r.u32());
    h.shared_base = r.u64();
    h.shared_pages = r.u64();
    h.vq_offset = r.u64();
    h.vq_capacity = r.u64();
    h.active = r.u8() != 0;
    handles.emplace(h.realm, std::move(h));
  }
  GranuleIdx next_alloc = r.u32();
  sys->nw().restore(std::move(handles), next_alloc);

  sys->trace().set_next_step(r.u64());
  CounterReport c;
  c.context_switches = r.u64();
  c.hyp_vm_calls = r.u64();
  c.smcs = r.u64();
  c.rmis = r.u64();
  c.rsis = r.u64();
  c.gpfs = r.u64();
  sys->trace().set_counters(c);
  return sys;
}

}  // namespace sbsim
