// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbsim/types.hpp"

namespace sbsim {

/// Guest payloads are small scripted programs; they name IPAs only and never
/// physical granules. RpcCompute and Jump exist so a script can serve RPC
/// requests repeatedly with the exclusive-access bracket around each one.
enum class GuestOp : uint8_t {
  WriteMem,
  ReadMem,
  Exec,
  Rsi,
  MmioRead,
  MmioWrite,
  RpcCompute,
  Jump,
  Halt,
};

struct GuestAction {
  GuestOp op = GuestOp::Halt;
  Ipa ipa = 0;
  std::vector<uint8_t> bytes;      // WriteMem payload
  uint64_t value = 0;              // MmioWrite value / ReadMem length
  int64_t rel = 0;                 // Jump displacement
  std::string rsi_call;            // "ex_access" | "mmio" | "set_ripas" | "attest"
  std::vector<uint64_t> rsi_args;
  std::string rpc_kind;            // RpcCompute responder: "add" | "otp"

  static GuestAction write(Ipa ipa, std::vector<uint8_t> data) {
    GuestAction a;
    a.op = GuestOp::WriteMem;
    a.ipa = ipa;
    a.bytes = std::move(data);
    return a;
  }
  static GuestAction read(Ipa ipa, uint64_t len = 8) {
    GuestAction a;
    a.op = GuestOp::ReadMem;
    a.ipa = ipa;
    a.value = len;
    return a;
  }
  static GuestAction exec(Ipa ipa) {
    GuestAction a;
    a.op = GuestOp::Exec;
    a.ipa = ipa;
    return a;
  }
  static GuestAction rsi(std::string call, std::vector<uint64_t> args = {}) {
    GuestAction a;
    a.op = GuestOp::Rsi;
    a.rsi_call = std::move(call);
    a.rsi_args = std::move(args);
    return a;
  }
  static GuestAction mmio_read(Ipa ipa) {
    GuestAction a;
    a.op = GuestOp::MmioRead;
    a.ipa = ipa;
    return a;
  }
  static GuestAction mmio_write(Ipa ipa, uint64_t value) {
    GuestAction a;
    a.op = GuestOp::MmioWrite;
    a.ipa = ipa;
    a.value = value;
    return a;
  }
  static GuestAction rpc_compute(std::string kind) {
    GuestAction a;
    a.op = GuestOp::RpcCompute;
    a.rpc_kind = std::move(kind);
    return a;
  }
  static GuestAction jump(int64_t rel) {
    GuestAction a;
    a.op = GuestOp::Jump;
    a.rel = rel;
    return a;
  }
  static GuestAction halt() { return GuestAction{}; }
};

using GuestScript = std::vector<GuestAction>;

}  // namespace sbsim
