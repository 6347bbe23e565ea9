// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
#pragma once

// Umbrella header for the whole simulator.

#include "sbsim/adversary.hpp"
#include "sbsim/aead.hpp"
#include "sbsim/guest.hpp"
#include "sbsim/hash.hpp"
#include "sbsim/manifest.hpp"
#include "sbsim/memory_model.hpp"
#include "sbsim/normal_world.hpp"
#include "sbsim/realm_monitor.hpp"
#include "sbsim/root_monitor.hpp"
#include "sbsim/scenario.hpp"
#include "sbsim/snapshot.hpp"
#include "sbsim/system.hpp"
#include "sbsim/trace.hpp"
#include "sbsim/types.hpp"
#include "sbsim/verify.hpp"
