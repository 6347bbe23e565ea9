// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sbsim {

using GranuleIdx = uint32_t;
using Ipa = uint64_t;
using RealmId = uint32_t;
using RecId = uint32_t;
using CoreId = uint32_t;

inline constexpr uint64_t kGranuleSize = 4096;
inline constexpr uint64_t kPageShift = 12;

// Protected IPAs live below the alias base; granules shared with the normal
// world are mapped at page-aligned IPAs inside the unprotected window.
inline constexpr Ipa kUnprotectedIpaBase = 0x8000'0000ull;
inline constexpr Ipa kUnprotectedIpaEnd = 0x1'0000'0000ull;

/// Security domain a core executes in (value of its sec_state register).
enum class World : uint8_t { Root, Realm, Normal, Secure };

/// Physical address space tag a GPT assigns to a granule.
enum class Pas : uint8_t { Root, Realm, Normal, Secure, NotAccessible, AllAccessible };

enum class Access : uint8_t { Read, Write, Execute };

enum class GptId : uint8_t { GptN, GptRs };

/// World-vs-PAS decision applied by every granule protection check.
/// Root cores bypass the tables and may touch every PAS value.
constexpr bool pas_permits(World w, Pas p) {
  if (w == World::Root) return true;
  if (p == Pas::AllAccessible) return true;
  switch (w) {
    case World::Normal: return p == Pas::Normal;
    case World::Realm: return p == Pas::Realm;
    case World::Secure: return p == Pas::Secure;
    default: return true;
  }
}

constexpr GptId gpt_for_world(World w) {
  return w == World::Normal ? GptId::GptN : GptId::GptRs;
}

constexpr std::string_view to_string(World w) {
  switch (w) {
    case World::Root: return "root";
    case World::Realm: return "realm";
    case World::Normal: return "normal";
    case World::Secure: return "secure";
  }
  return "?";
}

constexpr std::string_view to_string(Pas p) {
  switch (p) {
    case Pas::Root: return "root";
    case Pas::Realm: return "realm";
    case Pas::Normal: return "normal";
    case Pas::Secure: return "secure";
    case Pas::NotAccessible: return "na";
    case Pas::AllAccessible: return "all";
  }
  return "?";
}

constexpr std::string_view to_string(Access a) {
  switch (a) {
    case Access::Read: return "r";
    case Access::Write: return "w";
    case Access::Execute: return "x";
  }
  return "?";
}

inline std::optional<World> world_from_string(std::string_view s) {
  if (s == "root") return World::Root;
  if (s == "realm") return World::Realm;
  if (s == "normal") return World::Normal;
  if (s == "secure") return World::Secure;
  return std::nullopt;
}

inline std::optional<Pas> pas_from_string(std::string_view s) {
  if (s == "root") return Pas::Root;
  if (s == "realm") return Pas::Realm;
  if (s == "normal") return Pas::Normal;
  if (s == "secure") return Pas::Secure;
  if (s == "na") return Pas::NotAccessible;
  if (s == "all") return Pas::AllAccessible;
  return std::nullopt;
}

/// Test hooks that disable one defensive check each. All false in normal
/// operation; the mutation-sensitivity suite flips them one at a time and
/// expects the harness to notice.
struct Hooks {
  bool skip_log_check = false;   // request-log consistency check in the TF
  bool skip_flush = false;       // GPC TLB flush after GPT updates
  bool skip_nx = false;          // non-executable marking of shared pages
  bool skip_overlap_check = false;  // one-owner-per-granule check
  bool skip_mmio_gate = false;   // marked-region check before MMIO emulation
};

}  // namespace sbsim
