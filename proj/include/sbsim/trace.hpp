// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/types.hpp"

namespace sbsim {

enum class EventKind : uint8_t {
  Smc,
  Rmi,
  Rsi,
  ContextSwitch,
  Gpf,
  TlbFlush,
  InterruptFiltered,
  AttackBlocked,
  S2Fault,
  Transport,
  Boot,
};

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Smc: return "smc";
    case EventKind::Rmi: return "rmi";
    case EventKind::Rsi: return "rsi";
    case EventKind::ContextSwitch: return "ctx";
    case EventKind::Gpf: return "gpf";
    case EventKind::TlbFlush: return "flush";
    case EventKind::InterruptFiltered: return "irq_filtered";
    case EventKind::AttackBlocked: return "attack_blocked";
    case EventKind::S2Fault: return "s2_fault";
    case EventKind::Transport: return "xport";
    case EventKind::Boot: return "boot";
  }
  return "?";
}

inline std::optional<EventKind> event_kind_from_string(std::string_view s) {
  if (s == "smc") return EventKind::Smc;
  if (s == "rmi") return EventKind::Rmi;
  if (s == "rsi") return EventKind::Rsi;
  if (s == "ctx") return EventKind::ContextSwitch;
  if (s == "gpf") return EventKind::Gpf;
  if (s == "flush") return EventKind::TlbFlush;
  if (s == "irq_filtered") return EventKind::InterruptFiltered;
  if (s == "attack_blocked") return EventKind::AttackBlocked;
  if (s == "s2_fault") return EventKind::S2Fault;
  if (s == "xport") return EventKind::Transport;
  if (s == "boot") return EventKind::Boot;
  return std::nullopt;
}

/// One step of the ordered event record. Serialized as a tab-separated line
/// with a stable field order: step, core, kind, name, args, outcome.
struct Event {
  uint64_t step = 0;
  CoreId core = 0;
  EventKind kind = EventKind::Boot;
  std::string name;     // operation name, "-" if not applicable
  std::string args;     // "k=v k=v", "-" if empty
  std::string outcome;  // "ok", "denied", ..., "-" if not applicable

  std::string to_line() const {
    std::ostringstream os;
    os << step << '\t' << core << '\t' << to_string(kind) << '\t'
       << (name.empty() ? "-" : name) << '\t' << (args.empty() ? "-" : args)
       << '\t' << (outcome.empty() ? "-" : outcome);
    return os.str();
  }

  static std::optional<Event> from_line(std::string_view line) {
    std::array<std::string, 6> f;
    size_t field = 0, start = 0;
    for (size_t i = 0; i <= line.size() && field < 6; i++) {
      if (i == line.size() || line[i] == '\t') {
        f[field++] = std::string(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (field != 6) return std::nullopt;
    Event e;
    try {
      e.step = std::stoull(f[0]);
      e.core = static_cast<CoreId>(std::stoul(f[1]));
    } catch (...) {
      return std::nullopt;
    }
    auto k = event_kind_from_string(f[2]);
    if (!k) return std::nullopt;
    e.kind = *k;
    e.name = f[3] == "-" ? "" : f[3];
    e.args = f[4] == "-" ? "" : f[4];
    e.outcome = f[5] == "-" ? "" : f[5];
    return e;
  }
};

/// Per-run totals in the shape of the usual cost-breakdown tables.
struct CounterReport {
  uint64_t context_switches = 0;
  uint64_t hyp_vm_calls = 0;  // rec_enter round trips
  uint64_t smcs = 0;
  uint64_t rmis = 0;
  uint64_t rsis = 0;
  uint64_t gpfs = 0;

  void account(const Event& e) {
    switch (e.kind) {
      case EventKind::ContextSwitch: context_switches++; break;
      case EventKind::Smc: smcs++; break;
      case EventKind::Rmi:
        rmis++;
        if (e.name == "rmi_rec_enter") hyp_vm_calls++;
        break;
      case EventKind::Rsi: rsis++; break;
      case EventKind::Gpf: gpfs++; break;
      default: break;
    }
  }

  bool operator==(const CounterReport&) const = default;

  std::string to_text() const {
    std::ostringstream os;
    os << "context_switches=" << context_switches << '\n'
       << "hyp_vm_calls=" << hyp_vm_calls << '\n'
       << "smcs=" << smcs << '\n'
       << "rmis=" << rmis << '\n'
       << "rsis=" << rsis << '\n'
       << "gpfs=" << gpfs << '\n';
    return os.str();
  }
};

/// Append-only event record with online counters. Steps are strictly
/// increasing; `base_step` carries the index across persisted sessions.
class Trace {
 public:
  uint64_t emit(CoreId core, EventKind kind, std::string name,
                std::string args = {}, std::string outcome = {}) {
    Event e;
    e.step = next_step_++;
    e.core = core;
    e.kind = kind;
    e.name = std::move(name);
    e.args = std::move(args);
    e.outcome = std::move(outcome);
    counters_.account(e);
    events_.push_back(std::move(e));
    return events_.back().step;
  }

  const std::vector<Event>& events() const { return events_; }
  const CounterReport& counters() const { return counters_; }
  uint64_t next_step() const { return next_step_; }

  void set_next_step(uint64_t s) { next_step_ = s; }
  void set_counters(const CounterReport& c) { counters_ = c; }

  /// Drops buffered events (after they are flushed to a file); counters and
  /// the step index keep running.
  void drain() { events_.clear(); }

  std::string to_text() const {
    std::string out;
    for (const auto& e : events_) {
      out += e.to_line();
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<Event> events_;
  CounterReport counters_;
  uint64_t next_step_ = 0;
};

}  // namespace sbsim
