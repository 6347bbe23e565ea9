// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbsim/system.hpp"
#include "sbsim/trace.hpp"

namespace sbsim {

namespace verify_detail {

inline std::map<std::string, std::string> parse_args(const std::string& args) {
  std::map<std::string, std::string> out;
  std::istringstream is(args);
  std::string tok;
  while (is >> tok) {
    size_t eq = tok.find('=');
    if (eq != std::string::npos)
      out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

inline uint64_t num(const std::map<std::string, std::string>& kv,
                    const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) return 0;
  return std::stoull(it->second, nullptr, 0);
}

}  // namespace verify_detail

/// State reconstructed purely from a recorded trace: the per-granule GPT
/// pairs and each realm's IPA-to-granule mapping skeleton.
struct ReplayState {
  bool ok = false;
  std::string error;
  std::map<GranuleIdx, std::pair<Pas, Pas>> pairs;
  std::map<RealmId, std::map<uint64_t, GranuleIdx>> s2;
  CounterReport counters;
};

inline ReplayState replay_events(const std::vector<Event>& events) {
  using namespace verify_detail;
  ReplayState st;
  bool booted = false;
  for (const Event& e : events) {
    st.counters.account(e);
    if (e.kind == EventKind::Boot && e.name == "boot_create_gpts" &&
        e.outcome == "ok") {
      // args: granules=N kind=start+count ...
      std::istringstream is(e.args);
      std::string tok;
      GranuleIdx total = 0;
      std::vector<std::tuple<RegionKind, GranuleIdx, GranuleIdx>> regions;
      while (is >> tok) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos) continue;
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "granules") {
          total = static_cast<GranuleIdx>(std::stoul(val));
        } else if (auto kind = region_from_string(key)) {
          size_t plus = val.find('+');
          if (plus == std::string::npos) continue;
          regions.emplace_back(*kind,
                               static_cast<GranuleIdx>(std::stoul(val.substr(0, plus))),
                               static_cast<GranuleIdx>(std::stoul(val.substr(plus + 1))));
        }
      }
      st.pairs.clear();
      for (GranuleIdx g = 0; g < total; g++)
        st.pairs[g] = {Pas::NotAccessible, Pas::NotAccessible};
      for (auto [kind, start, count] : regions) {
        Pas pas = pas_for_region(kind);
        for (GranuleIdx g = start; g < start + count; g++)
          st.pairs[g] = {pas, pas == Pas::Normal ? Pas::NotAccessible : pas};
      }
      booted = true;
      continue;
    }
    if (e.kind == EventKind::Smc && e.outcome == "ok") {
      auto kv = parse_args(e.args);
      auto n = pas_from_string(kv.count("gptn") ? kv.at("gptn") : "");
      auto rs = pas_from_string(kv.count("gptrs") ? kv.at("gptrs") : "");
      if (!n || !rs) {
        st.error = "smc event without resulting pair at step " +
                   std::to_string(e.step);
        return st;
      }
      st.pairs[static_cast<GranuleIdx>(num(kv, "g"))] = {*n, *rs};
      continue;
    }
    if (e.kind == EventKind::Rmi && e.outcome == "ok") {
      auto kv = parse_args(e.args);
      if (e.name == "rmi_data_create" || e.name == "rmi_rtt_map_unprotected") {
        RealmId realm = static_cast<RealmId>(num(kv, "realm"));
        st.s2[realm][num(kv, "ipa") >> kPageShift] =
            static_cast<GranuleIdx>(num(kv, "g"));
      } else if (e.name == "rmi_destroy_realm") {
        st.s2[static_cast<RealmId>(num(kv, "realm"))].clear();
      }
      continue;
    }
  }
  if (!booted) {
    st.error = "no boot event in trace";
    return st;
  }
  st.ok = true;
  return st;
}

/// Compares replayed state with a live system: GPT pairs, realm S2
/// skeletons, and counters must all agree.
inline bool replay_matches(System& sys, const ReplayState& replayed,
                           std::string* why = nullptr) {
  auto complain = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (!replayed.ok) return complain("replay failed: " + replayed.error);
  if (replayed.pairs.size() != sys.machine().granules())
    return complain("granule count mismatch");
  for (const auto& [g, pair] : replayed.pairs) {
    if (sys.machine().gpt_pair(g) != pair)
      return complain("gpt pair mismatch at granule " + std::to_string(g));
  }
  for (const auto& [id, s2model] : replayed.s2) {
    const RealmDescriptor* r =
        const_cast<System&>(sys).rmm().find_realm(id);
    std::map<uint64_t, GranuleIdx> live;
    if (r && r->state != RealmState::Destroyed)
      for (const auto& [page, e] : r->s2) live[page] = e.granule;
    if (live != s2model)
      return complain("s2 mismatch for realm " + std::to_string(id));
  }
  if (!(replayed.counters == sys.trace().counters()))
    return complain("counter mismatch between trace and live state");
  return true;
}

inline std::vector<Event> parse_trace_text(std::istream& in,
                                           std::string* error = nullptr) {
  std::vector<Event> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.empty() || line[0] == '#') continue;
    auto e = Event::from_line(line);
    if (!e) {
      if (error) *error = "bad trace line " + std::to_string(lineno);
      continue;
    }
    events.push_back(std::move(*e));
  }
  return events;
}

}  // namespace sbsim
