// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

#include <string>

#include "sbsim/memory_model.hpp"
#include "sbsim/normal_world.hpp"
#include "sbsim/realm_monitor.hpp"
#include "sbsim/root_monitor.hpp"
#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"

namespace sbsim {

struct SystemConfig {
  MachineLayout layout = MachineLayout::standard();
  uint32_t cores = 2;
  uint64_t seed = 1;
  Hooks hooks;
  AllowList allowlist;
  std::string bootloader_image = "bootloader-image-v1";

  SystemConfig() { allowlist.allow_any = true; }
};

/// Wires one machine instance together with its monitors and untrusted-world
/// actors. Everything is advanced by a single deterministic caller; no
/// thread safety is needed or provided.
class System {
 public:
  explicit System(SystemConfig cfg = {})
      : cfg_(std::move(cfg)),
        machine_(cfg_.layout, cfg_.cores, &trace_),
        root_(&machine_, &trace_, &cfg_.hooks),
        rmm_(&machine_, &root_, &trace_, &cfg_.hooks, cfg_.seed),
        nw_(&machine_, &root_, &rmm_, &trace_) {
    rmm_.set_allowlist(cfg_.allowlist);
    rmm_.set_bootloader_image(cfg_.bootloader_image);
  }
  System(const System&) = delete;
  System& operator=(const System&) = delete;

  bool boot() { return root_.boot_create_gpts(); }

  Trace& trace() { return trace_; }
  Machine& machine() { return machine_; }
  RootMonitor& root() { return root_; }
  RealmMonitor& rmm() { return rmm_; }
  NormalWorld& nw() { return nw_; }
  Hooks& hooks() { return cfg_.hooks; }
  const SystemConfig& config() const { return cfg_; }
  uint64_t seed() const { return cfg_.seed; }

  /// Raw read by an actor in a given world; the core is switched there for
  /// the duration of the access.
  CheckResult actor_read(CoreId core, World w, GranuleIdx g,
                         std::span<uint8_t> out, uint64_t offset = 0) {
    WorldGuard guard(machine_, core, w);
    return machine_.read_bytes(core, static_cast<uint64_t>(g) * kGranuleSize + offset,
                               out);
  }
  CheckResult actor_write(CoreId core, World w, GranuleIdx g,
                          std::span<const uint8_t> in, uint64_t offset = 0) {
    WorldGuard guard(machine_, core, w);
    return machine_.write_bytes(core,
                                static_cast<uint64_t>(g) * kGranuleSize + offset, in);
  }

 private:
  SystemConfig cfg_;
  Trace trace_;
  Machine machine_;
  RootMonitor root_;
  RealmMonitor rmm_;
  NormalWorld nw_;
};

}  // namespace sbsim
