// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbsim/system.hpp"

namespace sbsim {

/// One `actor call(args)` line from a scenario file.
struct ScenarioStep {
  std::string actor;
  std::string op;
  std::vector<std::string> args;
  int line = 0;
};

inline std::vector<ScenarioStep> parse_scenario(std::istream& in) {
  std::vector<ScenarioStep> steps;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    lineno++;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    ScenarioStep step;
    step.line = lineno;
    size_t sp = t.find_first_of(" \t");
    if (sp == std::string::npos)
      throw std::runtime_error("scenario line " + std::to_string(lineno) +
                               ": expected 'actor call(args)'");
    step.actor = t.substr(0, sp);
    std::string rest = trim(t.substr(sp + 1));
    size_t paren = rest.find('(');
    if (paren == std::string::npos) {
      step.op = rest;
    } else {
      step.op = trim(rest.substr(0, paren));
      size_t close = rest.rfind(')');
      if (close == std::string::npos || close < paren)
        throw std::runtime_error("scenario line " + std::to_string(lineno) +
                                 ": unbalanced parentheses");
      std::string inner = rest.substr(paren + 1, close - paren - 1);
      std::string cur;
      std::istringstream is(inner);
      while (std::getline(is, cur, ',')) {
        std::string a = trim(cur);
        if (!a.empty()) step.args.push_back(a);
      }
    }
    steps.push_back(std::move(step));
  }
  return steps;
}

/// Executes scenario steps against one system. Raises on malformed steps
/// (usage errors); operation denials are outcomes, not errors.
class ScenarioRunner {
 public:
  explicit ScenarioRunner(System& sys) : sys_(sys) {
    aux_core_ = sys_.machine().core_count() > 1 ? 1 : 0;
  }

  RealmId last_realm() const { return last_realm_; }

  std::string run_step(const ScenarioStep& s) {
    auto u64 = [&](size_t i, uint64_t def = 0) -> uint64_t {
      if (i >= s.args.size()) return def;
      return std::stoull(s.args[i], nullptr, 0);
    };
    auto realm_arg = [&](size_t i) {
      return s.args.size() > i ? static_cast<RealmId>(u64(i)) : last_realm_;
    };
    auto bytes_arg = [&](size_t i) {
      std::vector<uint8_t> out;
      if (i >= s.args.size()) return out;
      const std::string& h = s.args[i];
      for (size_t k = 0; k + 1 < h.size(); k += 2)
        out.push_back(
            static_cast<uint8_t>(std::stoul(h.substr(k, 2), nullptr, 16)));
      return out;
    };

    if (s.actor == "hyp") {
      if (s.op == "create_sbs") {
        Manifest m = load_manifest(s.args.at(0));
        auto res = sys_.nw().hyp_create_sbs(hyp_core_, m);
        if (res.ok()) last_realm_ = res.realm;
        return std::string(to_string(res.error));
      }
      if (s.op == "destroy")
        return std::string(
            to_string(sys_.nw().hyp_destroy_sbs(hyp_core_, realm_arg(0))));
      if (s.op == "rec_enter") {
        ExitInfo e = sys_.nw().hyp_rec_enter(hyp_core_, realm_arg(0),
                                             static_cast<RecId>(u64(1)));
        if (e.status != RmmStatus::Ok) return std::string(to_string(e.status));
        std::string out(to_string(e.kind));
        if (e.kind == ExitKind::Rsi) out += ":" + e.rsi_name;
        return out;
      }
      if (s.op == "delegate")
        return std::string(to_string(sys_.nw().rmi_granule_delegate(
            hyp_core_, static_cast<GranuleIdx>(u64(0)), realm_arg(1))));
      if (s.op == "undelegate")
        return std::string(to_string(sys_.nw().rmi_granule_undelegate(
            hyp_core_, static_cast<GranuleIdx>(u64(0)), realm_arg(1))));
      if (s.op == "read" || s.op == "write") return mem_op(s, World::Normal, hyp_core_);
      if (s.op == "mmio_complete") {
        Access acc = s.args.at(1) == "w" ? Access::Write : Access::Read;
        MmioDecision d = sys_.rmm().handle_mmio_exit(hyp_core_, realm_arg(3),
                                                     u64(0), acc, u64(2));
        return d == MmioDecision::Emulate ? "emulate" : "refuse";
      }
      if (s.op == "interrupt") {
        IrqSource src = IrqSource::timer();
        const std::string& kind = s.args.at(0);
        if (kind == "timer") src = IrqSource::timer();
        else if (kind == "arbitrary") src = IrqSource::arbitrary();
        else src = IrqSource::device(device_from_string(kind));
        IrqOutcome o = sys_.rmm().inject_interrupt(hyp_core_, realm_arg(1), src);
        return o == IrqOutcome::Delivered ? "delivered"
               : o == IrqOutcome::Filtered ? "filtered"
                                           : "wrong_state";
      }
      if (s.op == "channel_send" || s.op == "channel_deliver") {
        DeviceKind dev = device_from_string(s.args.at(0));
        std::vector<uint8_t> payload = bytes_arg(1);
        bool tamper = u64(2) != 0;
        ChannelStatus st =
            s.op == "channel_send"
                ? sys_.nw().encrypted_channel_send(hyp_core_, last_realm_, dev,
                                                   payload, tamper, nullptr)
                : sys_.nw().channel_deliver_to_guest(hyp_core_, last_realm_,
                                                     dev, payload, tamper);
        return st == ChannelStatus::Delivered      ? "delivered"
               : st == ChannelStatus::TamperDetected ? "tamper_detected"
                                                     : "not_attached";
      }
      if (s.op == "vq_push" || s.op == "vq_pop") return vq_op(s, VqSide::Host, hyp_core_);
      if (s.op == "flush") {
        sys_.machine().flush_all_gpc_tlbs();
        return "ok";
      }
    }
    if (s.actor == "app") {
      if (s.op == "rpc_add") {
        std::vector<uint8_t> payload(16, 0);
        uint64_t x = u64(0), y = u64(1);
        for (int i = 0; i < 8; i++) {
          payload[i] = static_cast<uint8_t>(x >> (8 * i));
          payload[8 + i] = static_cast<uint8_t>(y >> (8 * i));
        }
        RpcResult r = sys_.nw().rpc_call(app_core_, last_realm_, kRpcCmdAdd, payload);
        if (r.frame_invalid) return "frame_invalid";
        if (r.transport_error || r.reply.size() != 8) return "error";
        uint64_t sum = 0;
        for (int i = 0; i < 8; i++)
          sum |= static_cast<uint64_t>(r.reply[i]) << (8 * i);
        return "sum=" + std::to_string(sum);
      }
      if (s.op == "rpc_otp_register") {
        RpcResult r = sys_.nw().rpc_call(app_core_, last_realm_,
                                         kRpcCmdOtpRegister, bytes_arg(0));
        return r.frame_invalid ? "frame_invalid"
               : r.transport_error ? "error"
                                   : "ok";
      }
      if (s.op == "rpc_otp") {
        RpcResult r =
            sys_.nw().rpc_call(app_core_, last_realm_, kRpcCmdOtpRequest, {});
        if (r.frame_invalid) return "frame_invalid";
        if (r.transport_error || r.reply.size() != 4) return "error";
        uint32_t code = 0;
        for (int i = 0; i < 4; i++)
          code |= static_cast<uint32_t>(r.reply[i]) << (8 * i);
        return "otp=" + std::to_string(code);
      }
      if (s.op == "write_shared" || s.op == "read_shared") {
        SbsHandle* h = sys_.nw().find_handle(last_realm_);
        if (!h) return "no_realm";
        if (s.op == "write_shared") {
          auto data = bytes_arg(1);
          VqStatus st = sys_.nw().shared_write(app_core_, VqSide::Host, *h,
                                               u64(0), data);
          return st == VqStatus::Ok ? "ok" : "fault";
        }
        std::vector<uint8_t> buf(u64(1, 8), 0);
        VqStatus st =
            sys_.nw().shared_read(app_core_, VqSide::Host, *h, u64(0), buf);
        return st == VqStatus::Ok ? "ok:" + to_hex(buf) : "fault";
      }
    }
    if (s.actor == "guest") {
      if (s.op == "vq_push" || s.op == "vq_pop")
        return vq_op(s, VqSide::Guest, aux_core_);
    }
    if (s.actor == "secure") {
      if (s.op == "read" || s.op == "write")
        return mem_op(s, World::Secure, aux_core_);
    }
    if (s.actor == "rmm") {
      GranuleIdx g = static_cast<GranuleIdx>(u64(0));
      if (s.op == "smc_delegate")
        return std::string(to_string(sys_.root().smc_delegate(aux_core_, g)));
      if (s.op == "smc_undelegate")
        return std::string(to_string(sys_.root().smc_undelegate(aux_core_, g)));
      if (s.op == "smc_share")
        return std::string(to_string(sys_.root().smc_2gpt_ns_share(aux_core_, g)));
      if (s.op == "smc_unshare")
        return std::string(
            to_string(sys_.root().smc_2gpt_ns_unshare(aux_core_, g)));
      if (s.op == "smc_ex")
        return std::string(to_string(
            sys_.root().smc_2gpt_ex_access(aux_core_, g, u64(1) != 0)));
    }
    throw std::runtime_error("scenario line " + std::to_string(s.line) +
                             ": unknown step '" + s.actor + " " + s.op + "'");
  }

  std::vector<std::string> run_all(const std::vector<ScenarioStep>& steps) {
    std::vector<std::string> outcomes;
    for (const auto& s : steps) outcomes.push_back(run_step(s));
    return outcomes;
  }

 private:
  std::string mem_op(const ScenarioStep& s, World w, CoreId core) {
    GranuleIdx g = static_cast<GranuleIdx>(std::stoull(s.args.at(0), nullptr, 0));
    if (s.op == "read") {
      std::array<uint8_t, 8> buf{};
      CheckResult r = sys_.actor_read(core, w, g, buf);
      if (!r.allowed) return "gpf";
      return "ok:" + to_hex(buf);
    }
    std::array<uint8_t, 1> b{
        static_cast<uint8_t>(std::stoull(s.args.at(1), nullptr, 0))};
    uint64_t off = s.args.size() > 2 ? std::stoull(s.args[2], nullptr, 0) : 0;
    CheckResult r = sys_.actor_write(core, w, g, b, off);
    return r.allowed ? "ok" : "gpf";
  }

  std::string vq_op(const ScenarioStep& s, VqSide side, CoreId core) {
    SbsHandle* h = sys_.nw().find_handle(last_realm_);
    if (!h) return "no_realm";
    if (s.op == "vq_push") {
      VqDesc d;
      d.addr = std::stoull(s.args.at(0), nullptr, 0);
      d.len = static_cast<uint32_t>(std::stoull(s.args.at(1), nullptr, 0));
      VqStatus st = sys_.nw().vq_push(core, side, *h, d);
      return std::string(vq_status_name(st));
    }
    VqDesc d;
    VqStatus st = sys_.nw().vq_pop(core, side, *h, d);
    if (st != VqStatus::Ok) return std::string(vq_status_name(st));
    std::ostringstream os;
    os << "ok:addr=0x" << std::hex << d.addr << std::dec << ",len=" << d.len;
    return os.str();
  }

  static std::string_view vq_status_name(VqStatus st) {
    switch (st) {
      case VqStatus::Ok: return "ok";
      case VqStatus::Rejected: return "pointer_escape";
      case VqStatus::Fault: return "fault";
      case VqStatus::Empty: return "empty";
      case VqStatus::Full: return "full";
    }
    return "?";
  }

  System& sys_;
  RealmId last_realm_ = 0;
  CoreId hyp_core_ = 0;
  CoreId app_core_ = 0;
  CoreId aux_core_ = 1;
};

}  // namespace sbsim
