// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbsim/guest.hpp"
#include "sbsim/hash.hpp"
#include "sbsim/memory_model.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

enum class DeviceKind : uint8_t { VirtioBlock, VirtioNet, VirtioConsole, VirtioGpu, Unknown };

constexpr std::string_view to_string(DeviceKind d) {
  switch (d) {
    case DeviceKind::VirtioBlock: return "virtio-blk";
    case DeviceKind::VirtioNet: return "virtio-net";
    case DeviceKind::VirtioConsole: return "virtio-console";
    case DeviceKind::VirtioGpu: return "virtio-gpu";
    case DeviceKind::Unknown: return "unknown";
  }
  return "?";
}

inline DeviceKind device_from_string(std::string_view s) {
  if (s == "virtio-blk") return DeviceKind::VirtioBlock;
  if (s == "virtio-net") return DeviceKind::VirtioNet;
  if (s == "virtio-console") return DeviceKind::VirtioConsole;
  if (s == "virtio-gpu") return DeviceKind::VirtioGpu;
  return DeviceKind::Unknown;
}

/// Launch request for one sandboxed service: memory sizing, the fixed shared
/// window, the devices to attach, and the guest program to run.
struct Manifest {
  uint64_t memory_pages = 4;              // protected pages (payload + zeroed)
  Ipa shared_base_ipa = kUnprotectedIpaBase;
  uint64_t shared_pages = 0;
  uint64_t vq_offset = 0x800;             // ring offset inside the shared region
  std::vector<DeviceKind> devices;
  std::string payload_digest;             // hex pin of the payload bytes, "" = unpinned
  GuestScript entry_script;
};

namespace detail {

inline uint64_t parse_u64(const nlohmann::json& v) {
  if (v.is_number_unsigned() || v.is_number_integer()) return v.get<uint64_t>();
  if (v.is_string()) return std::stoull(v.get<std::string>(), nullptr, 0);
  throw std::runtime_error("manifest: expected integer or string number");
}

inline std::vector<uint8_t> parse_hex_bytes(const std::string& s) {
  if (s.size() % 2) throw std::runtime_error("manifest: odd hex string");
  std::vector<uint8_t> out(s.size() / 2);
  for (size_t i = 0; i < out.size(); i++)
    out[i] = static_cast<uint8_t>(std::stoul(s.substr(2 * i, 2), nullptr, 16));
  return out;
}

inline GuestAction parse_action(const nlohmann::json& j) {
  std::string op = j.at("op").get<std::string>();
  if (op == "write")
    return GuestAction::write(parse_u64(j.at("ipa")),
                              parse_hex_bytes(j.value("bytes_hex", "")));
  if (op == "read")
    return GuestAction::read(parse_u64(j.at("ipa")),
                             j.contains("len") ? parse_u64(j.at("len")) : 8);
  if (op == "exec") return GuestAction::exec(parse_u64(j.at("ipa")));
  if (op == "rsi") {
    std::vector<uint64_t> args;
    if (j.contains("args"))
      for (const auto& a : j.at("args")) args.push_back(parse_u64(a));
    return GuestAction::rsi(j.at("call").get<std::string>(), std::move(args));
  }
  if (op == "mmio_read") return GuestAction::mmio_read(parse_u64(j.at("ipa")));
  if (op == "mmio_write")
    return GuestAction::mmio_write(parse_u64(j.at("ipa")),
                                   parse_u64(j.at("value")));
  if (op == "rpc_serve") {
    // Expanded into the exclusive-access bracket when the REC is built.
    GuestAction a = GuestAction::rpc_compute(j.at("kind").get<std::string>());
    a.rsi_call = "serve";
    return a;
  }
  if (op == "jump") return GuestAction::jump(j.at("rel").get<int64_t>());
  if (op == "halt") return GuestAction::halt();
  throw std::runtime_error("manifest: unknown guest op '" + op + "'");
}

}  // namespace detail

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  m.memory_pages = detail::parse_u64(j.at("memory_pages"));
  m.shared_base_ipa = detail::parse_u64(j.at("shared_base_ipa"));
  m.shared_pages = detail::parse_u64(j.at("shared_pages"));
  if (j.contains("vq_offset")) m.vq_offset = detail::parse_u64(j.at("vq_offset"));
  if (j.contains("devices"))
    for (const auto& d : j.at("devices"))
      m.devices.push_back(device_from_string(d.get<std::string>()));
  m.payload_digest = j.value("payload_digest", "");
  if (j.contains("entry_script"))
    for (const auto& a : j.at("entry_script"))
      m.entry_script.push_back(detail::parse_action(a));
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  return manifest_from_json(j);
}

/// Canonical byte encoding of a guest script; these bytes are what gets
/// split into payload pages and measured.
inline std::vector<uint8_t> serialize_script(const GuestScript& script) {
  std::vector<uint8_t> out;
  auto put_u64 = [&](uint64_t v) {
    for (int i = 0; i < 8; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  auto put_str = [&](const std::string& s) {
    put_u64(s.size());
    out.insert(out.end(), s.begin(), s.end());
  };
  put_u64(script.size());
  for (const auto& a : script) {
    out.push_back(static_cast<uint8_t>(a.op));
    put_u64(a.ipa);
    put_u64(a.bytes.size());
    out.insert(out.end(), a.bytes.begin(), a.bytes.end());
    put_u64(a.value);
    put_u64(static_cast<uint64_t>(a.rel));
    put_str(a.rsi_call);
    put_u64(a.rsi_args.size());
    for (uint64_t v : a.rsi_args) put_u64(v);
    put_str(a.rpc_kind);
  }
  return out;
}

inline MachineLayout layout_from_json(const nlohmann::json& j) {
  MachineLayout l;
  l.granules = static_cast<GranuleIdx>(detail::parse_u64(j.at("granules")));
  for (const auto& r : j.at("regions")) {
    auto kind = region_from_string(r.at("kind").get<std::string>());
    if (!kind) throw std::runtime_error("layout: unknown region kind");
    l.regions.push_back({*kind,
                         static_cast<GranuleIdx>(detail::parse_u64(r.at("start"))),
                         static_cast<GranuleIdx>(detail::parse_u64(r.at("count")))});
  }
  return l;
}

inline MachineLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layout: " + path);
  nlohmann::json j;
  in >> j;
  return layout_from_json(j);
}

struct AllowList {
  std::vector<Digest256> digests;
  bool allow_any = false;

  bool permits(const Digest256& d) const {
    if (allow_any) return true;
    for (const auto& e : digests)
      if (e == d) return true;
    return false;
  }
};

/// One hex digest per line; '#' comments and blank lines are skipped and
/// a single '*' entry accepts any measurement.
inline AllowList load_allowlist(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open allow-list: " + path);
  AllowList al;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line == "*") {
      al.allow_any = true;
      continue;
    }
    Digest256 d;
    if (!from_hex(line, d))
      throw std::runtime_error("allow-list: bad digest line: " + line);
    al.digests.push_back(d);
  }
  return al;
}

}  // namespace sbsim
