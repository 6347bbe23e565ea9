// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Acceptance suite: runs every top-level requirement end to end and prints
// one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "sbsim/sbsim.hpp"
#include "support/oracles.hpp"

#ifndef SBSIM_DATA_DIR
#define SBSIM_DATA_DIR "data"
#endif
#ifndef SBSIM_CLI_PATH
#define SBSIM_CLI_PATH "build/tools/sbsim"
#endif

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Criterion {
  const char* name = "";
  bool pass = false;
  std::string detail;
};

sbsim::Manifest serve_manifest(const std::string& kind, uint64_t shared,
                               std::vector<sbsim::DeviceKind> devices = {}) {
  sbsim::Manifest m;
  m.memory_pages = 2;
  m.shared_pages = shared;
  m.devices = std::move(devices);
  sbsim::GuestAction serve = sbsim::GuestAction::rpc_compute(kind);
  serve.rsi_call = "serve";
  m.entry_script = {serve};
  return m;
}

std::vector<uint8_t> add_payload(uint64_t x, uint64_t y) {
  std::vector<uint8_t> p(16, 0);
  for (int i = 0; i < 8; i++) {
    p[i] = static_cast<uint8_t>(x >> (8 * i));
    p[8 + i] = static_cast<uint8_t>(y >> (8 * i));
  }
  return p;
}

// 1. Every scripted attack terminates with its expected outcome, fast.
Criterion criterion_attack_suite() {
  Criterion c;
  c.name = "criterion_1_attack_suite";
  auto t0 = Clock::now();
  auto catalog = sbsim::attack_catalog();
  size_t passed = 0;
  std::string first_failure;
  for (const auto& a : catalog) {
    auto out = a.run();
    if (out.pass) {
      passed++;
    } else if (first_failure.empty()) {
      first_failure = a.name + (": " + out.detail);
    }
  }
  double secs = seconds_since(t0);
  std::ostringstream d;
  d << passed << "/" << catalog.size() << " scenarios blocked/detected in "
    << secs << "s";
  if (!first_failure.empty()) d << "; first failure: " << first_failure;
  c.detail = d.str();
  c.pass = passed == catalog.size() && catalog.size() >= 8 && secs < 10.0;
  return c;
}

// 2. Exhaustive depth-6 enumeration on a 4-granule machine reaches exactly
// the legal dynamic pair set.
Criterion criterion_state_machine() {
  Criterion c;
  c.name = "criterion_2_granule_state_machine";
  auto e = sbsim::enumerate_gpt_transition_system(4, 6);
  std::set<std::string> expected = {"normal/na", "realm/realm", "normal/realm",
                                    "na/realm"};
  std::ostringstream d;
  d << "pairs={";
  for (const auto& p : e.pairs_reached) d << p << " ";
  d << "} states=" << e.states_visited
    << " closure=" << (e.closure_ok ? "ok" : "VIOLATED");
  c.detail = d.str();
  c.pass = e.closure_ok && e.pairs_reached == expected;
  return c;
}

// 3. Three fuzz seeds, 10k steps each, zero invariant violations.
Criterion criterion_fuzz() {
  Criterion c;
  c.name = "criterion_3_fuzz_invariants";
  std::ostringstream d;
  c.pass = true;
  for (uint64_t seed : {1, 2, 3}) {
    sbsim::FuzzConfig cfg;
    cfg.seed = seed;
    cfg.steps = 10000;
    cfg.cores = 2;
    auto t0 = Clock::now();
    auto rep = sbsim::fuzz(cfg);
    double secs = seconds_since(t0);
    d << "seed" << seed << ": " << rep.violations.size() << " violations in "
      << secs << "s; ";
    if (!rep.violations.empty()) {
      c.pass = false;
      d << "first=" << rep.violations.front().invariant << "; ";
    }
    if (secs >= 60.0) c.pass = false;
  }
  c.detail = d.str();
  return c;
}

// 4. Each seeded defect is detected.
Criterion criterion_mutation() {
  Criterion c;
  c.name = "criterion_4_mutation_sensitivity";
  struct Hook {
    const char* name;
    void (*set)(sbsim::Hooks&);
  };
  const Hook hooks[] = {
      {"log_check", [](sbsim::Hooks& h) { h.skip_log_check = true; }},
      {"tlb_flush", [](sbsim::Hooks& h) { h.skip_flush = true; }},
      {"nx", [](sbsim::Hooks& h) { h.skip_nx = true; }},
      {"overlap", [](sbsim::Hooks& h) { h.skip_overlap_check = true; }},
      {"mmio_gate", [](sbsim::Hooks& h) { h.skip_mmio_gate = true; }},
  };
  std::ostringstream d;
  c.pass = true;
  for (const auto& hook : hooks) {
    size_t found = 0;
    for (uint64_t seed : {7, 11}) {
      sbsim::FuzzConfig cfg;
      cfg.seed = seed;
      cfg.steps = 3000;
      hook.set(cfg.hooks);
      found += sbsim::fuzz(cfg).violations.size();
      if (found) break;
    }
    d << hook.name << "=" << found << " ";
    if (found == 0) c.pass = false;
  }
  c.detail = "violations per disabled check: " + d.str();
  return c;
}

// 5. Create + destroy leaves no residue for randomized manifests.
Criterion criterion_lifecycle() {
  Criterion c;
  c.name = "criterion_5_lifecycle_fidelity";
  std::mt19937_64 rng(2024);
  int launched = 0;
  for (int i = 0; i < 100; i++) {
    sbsim::System sys;
    if (!sys.boot()) {
      c.detail = "boot failed";
      return c;
    }
    sbsim::Manifest m;
    m.memory_pages = 1 + rng() % 4;
    m.shared_pages = rng() % 4;
    if (rng() % 2) m.devices.push_back(sbsim::DeviceKind::VirtioBlock);
    if (rng() % 2) m.devices.push_back(sbsim::DeviceKind::VirtioNet);
    sbsim::GuestAction serve = sbsim::GuestAction::rpc_compute("add");
    serve.rsi_call = "serve";
    for (uint64_t p = 0; p < m.memory_pages; p++)
      m.entry_script.push_back(sbsim::GuestAction::write(
          p * sbsim::kGranuleSize + 64, {uint8_t(rng()), uint8_t(rng())}));
    m.entry_script.push_back(serve);
    auto res = sys.nw().hyp_create_sbs(0, m);
    if (!res.ok()) {
      c.detail = "launch " + std::to_string(i) + " failed";
      return c;
    }
    launched++;
    sbsim::SbsHandle handle = *sys.nw().find_handle(res.realm);
    // Let the guest dirty its pages, and the host the shared ones.
    sys.nw().rpc_call(0, res.realm, sbsim::kRpcCmdAdd, add_payload(rng(), rng()));
    if (sys.nw().hyp_destroy_sbs(0, res.realm) != sbsim::RmmStatus::Ok) {
      c.detail = "destroy " + std::to_string(i) + " failed";
      return c;
    }
    for (sbsim::GranuleIdx g : handle.delegated) {
      if (sys.machine().gpt_pair(g) !=
          std::pair{sbsim::Pas::Normal, sbsim::Pas::NotAccessible}) {
        c.detail = "granule " + std::to_string(g) + " not returned (run " +
                   std::to_string(i) + ")";
        return c;
      }
      if (!sys.machine().granule_is_zero(g)) {
        c.detail = "granule " + std::to_string(g) + " not scrubbed (run " +
                   std::to_string(i) + ")";
        return c;
      }
      std::array<uint8_t, 32> buf{};
      if (!sys.actor_read(0, sbsim::World::Normal, g, buf).allowed) {
        c.detail = "normal world cannot read returned granule";
        return c;
      }
      for (uint8_t b : buf)
        if (b != 0) {
          c.detail = "leaked nonzero byte after destroy";
          return c;
        }
    }
  }
  c.detail = std::to_string(launched) + " randomized manifests cycled cleanly";
  c.pass = launched == 100;
  return c;
}

// 6. Case studies: arithmetic RPC and the OTP service against its oracle,
// with the exclusive-access bracket visible in the trace.
Criterion criterion_case_studies() {
  Criterion c;
  c.name = "criterion_6_case_studies";
  sbsim::System sys;
  if (!sys.boot()) {
    c.detail = "boot failed";
    return c;
  }
  auto add_realm = sys.nw().hyp_create_sbs(0, serve_manifest("add", 2));
  if (!add_realm.ok()) {
    c.detail = "add launch failed";
    return c;
  }
  std::mt19937_64 rng(77);
  for (int i = 0; i < 100; i++) {
    uint64_t x = rng(), y = rng();
    uint64_t rsis_before = sys.trace().counters().rsis;
    auto r = sys.nw().rpc_call(0, add_realm.realm, sbsim::kRpcCmdAdd,
                               add_payload(x, y));
    if (r.reply.size() != 8) {
      c.detail = "add reply missing at iteration " + std::to_string(i);
      return c;
    }
    uint64_t sum = 0;
    for (int k = 0; k < 8; k++)
      sum |= static_cast<uint64_t>(r.reply[k]) << (8 * k);
    if (sum != x + y) {
      c.detail = "wrong sum at iteration " + std::to_string(i);
      return c;
    }
    if (sys.trace().counters().rsis < rsis_before + 2) {
      c.detail = "exclusive-access bracket missing from trace";
      return c;
    }
  }

  auto otp_realm = sys.nw().hyp_create_sbs(
      0, serve_manifest("otp", 2, {sbsim::DeviceKind::VirtioNet}));
  if (!otp_realm.ok()) {
    c.detail = "otp launch failed";
    return c;
  }
  std::vector<uint8_t> secret(16);
  for (auto& b : secret) b = static_cast<uint8_t>(rng());
  auto reg = sys.nw().rpc_call(0, otp_realm.realm, sbsim::kRpcCmdOtpRegister,
                               secret);
  if (reg.frame_invalid || reg.transport_error) {
    c.detail = "otp registration failed";
    return c;
  }
  for (uint64_t counter = 0; counter < 8; counter++) {
    auto r = sys.nw().rpc_call(0, otp_realm.realm, sbsim::kRpcCmdOtpRequest, {});
    if (r.reply.size() != 4) {
      c.detail = "otp reply missing";
      return c;
    }
    uint32_t code = 0;
    for (int k = 0; k < 4; k++)
      code |= static_cast<uint32_t>(r.reply[k]) << (8 * k);
    if (code != oracle::hotp(secret, counter)) {
      c.detail = "otp mismatch vs oracle at counter " + std::to_string(counter);
      return c;
    }
  }
  c.detail = "100 random sums and 8 oracle-checked OTPs, brackets traced";
  c.pass = true;
  return c;
}

// 7. Byte-identical traces across two consecutive identical runs, both for
// the CLI scenario path and the fuzzer.
Criterion criterion_determinism() {
  namespace fs = std::filesystem;
  Criterion c;
  c.name = "criterion_7_determinism";

  sbsim::FuzzConfig cfg;
  cfg.seed = 3;
  cfg.steps = 1000;
  auto a = sbsim::fuzz(cfg);
  auto b = sbsim::fuzz(cfg);
  if (a.trace_text != b.trace_text || a.to_text() != b.to_text()) {
    c.detail = "fuzz runs diverged";
    return c;
  }

  auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  std::string traces[2];
  for (int run = 0; run < 2; run++) {
    fs::path dir = fs::temp_directory_path() /
                   ("sbsim_acceptance_run" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string base = std::string(SBSIM_CLI_PATH) + " --state " +
                       (dir / "state.bin").string() + " --trace " +
                       (dir / "trace.log").string() + " --summary " +
                       (dir / "summary.txt").string();
    std::string scn = std::string(SBSIM_DATA_DIR) + "/scenarios/add_numbers.scn";
    if (std::system((base + " boot --seed 5 > /dev/null").c_str()) != 0 ||
        std::system((base + " scenario " + scn + " > /dev/null").c_str()) != 0) {
      c.detail = "CLI run failed";
      return c;
    }
    traces[run] = read_file(dir / "trace.log");
  }
  if (traces[0].empty() || traces[0] != traces[1]) {
    c.detail = "CLI trace files differ between identical runs";
    return c;
  }
  c.detail = "fuzz and CLI scenario traces byte-identical across reruns";
  c.pass = true;
  return c;
}

}  // namespace

int main() {
  Criterion results[] = {
      criterion_attack_suite(), criterion_state_machine(), criterion_fuzz(),
      criterion_mutation(),     criterion_lifecycle(),     criterion_case_studies(),
      criterion_determinism(),
  };
  int failures = 0;
  for (const auto& c : results) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " — " << c.detail
              << "\n";
    if (!c.pass) failures++;
  }
  std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed"
                              : "ACCEPTANCE: " + std::to_string(failures) +
                                    " criterion(s) failed")
            << "\n";
  return failures;
}
