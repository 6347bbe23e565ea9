// Copyright 2026 the sbsim authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Command-line front end: drives boot, launch, scenario replay, the attack
// suite, and the fuzzer against a persisted machine snapshot, and emits the
// event trace plus per-run counters.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "sbsim/sbsim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;

struct Paths {
  std::string state = "state.bin";
  std::string trace = "trace.log";
  std::string summary = "summary.txt";
  std::string layout;     // empty: $SBSIM_LAYOUT, then built-in default
  std::string allowlist;  // empty: accept any measurement
};

sbsim::MachineLayout resolve_layout(const Paths& paths, uint32_t granules) {
  if (!paths.layout.empty()) return sbsim::load_layout(paths.layout);
  if (const char* env = std::getenv("SBSIM_LAYOUT"); env && *env)
    return sbsim::load_layout(env);
  return sbsim::MachineLayout::standard(granules);
}

void apply_allowlist(sbsim::System& sys, const Paths& paths) {
  if (!paths.allowlist.empty())
    sys.rmm().set_allowlist(sbsim::load_allowlist(paths.allowlist));
}

void append_trace(sbsim::System& sys, const Paths& paths, bool truncate) {
  std::ofstream out(paths.trace, truncate ? std::ios::trunc : std::ios::app);
  out << sys.trace().to_text();
  sys.trace().drain();
}

void write_summary(sbsim::System& sys, const Paths& paths) {
  std::ofstream out(paths.summary, std::ios::trunc);
  out << sys.trace().counters().to_text();
}

std::unique_ptr<sbsim::System> load_state(const Paths& paths) {
  std::ifstream in(paths.state, std::ios::binary);
  if (!in) throw std::runtime_error("no state file at '" + paths.state +
                                    "' (run `sbsim boot` first)");
  auto sys = sbsim::load_system(in);
  apply_allowlist(*sys, paths);
  return sys;
}

void save_state(sbsim::System& sys, const Paths& paths) {
  std::ofstream out(paths.state, std::ios::binary | std::ios::trunc);
  sbsim::save_system(sys, out);
}

int cmd_boot(const Paths& paths, uint32_t granules, uint32_t cores,
             uint64_t seed) {
  sbsim::SystemConfig cfg;
  cfg.layout = resolve_layout(paths, granules);
  cfg.cores = cores;
  cfg.seed = seed;
  sbsim::System sys(std::move(cfg));
  apply_allowlist(sys, paths);
  if (!sys.boot()) {
    std::cerr << "boot: invalid machine layout\n";
    append_trace(sys, paths, true);
    return kExitUsage;
  }
  save_state(sys, paths);
  append_trace(sys, paths, true);
  write_summary(sys, paths);
  std::cout << "booted: " << sys.machine().layout().describe() << "\n";
  return kExitOk;
}

int cmd_launch(const Paths& paths, const std::string& manifest_path) {
  auto sys = load_state(paths);
  sbsim::Manifest m = sbsim::load_manifest(manifest_path);
  auto res = sys->nw().hyp_create_sbs(0, m);
  save_state(*sys, paths);
  append_trace(*sys, paths, false);
  write_summary(*sys, paths);
  std::cout << "launch " << manifest_path << ": " << to_string(res.error);
  if (res.ok())
    std::cout << " realm=" << res.realm;
  else if (res.error == sbsim::LaunchError::BootRejected)
    std::cout << " (" << to_string(res.boot_check) << ")";
  std::cout << "\n";
  return res.ok() ? kExitOk : kExitViolation;
}

int cmd_scenario(const Paths& paths, const std::string& file) {
  auto sys = load_state(paths);
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open scenario: " + file);
  auto steps = sbsim::parse_scenario(in);
  sbsim::ScenarioRunner runner(*sys);
  int rc = kExitOk;
  for (const auto& s : steps) {
    std::string outcome = runner.run_step(s);
    std::cout << s.actor << " " << s.op << " -> " << outcome << "\n";
  }
  sbsim::InvariantChecker chk(*sys);
  auto violations = chk.all(true);
  for (const auto& v : violations) {
    std::cout << "invariant violation: " << v << "\n";
    rc = kExitViolation;
  }
  save_state(*sys, paths);
  append_trace(*sys, paths, false);
  write_summary(*sys, paths);
  return rc;
}

int cmd_attack(const Paths& paths, const std::string& which) {
  auto catalog = sbsim::attack_catalog();
  bool found = false;
  bool all_pass = true;
  std::ofstream summary(paths.summary, std::ios::trunc);
  for (const auto& a : catalog) {
    if (which != "all" && which != a.name) continue;
    found = true;
    auto out = a.run();
    std::string line = std::string(out.pass ? "PASS" : "FAIL") + " " + a.name +
                       " (" + a.expectation + "): " + out.detail;
    std::cout << line << "\n";
    summary << line << "\n";
    all_pass = all_pass && out.pass;
  }
  if (!found) {
    std::cerr << "unknown attack '" << which << "'; known:";
    for (const auto& a : catalog) std::cerr << " " << a.name;
    std::cerr << "\n";
    return kExitUsage;
  }
  return all_pass ? kExitOk : kExitViolation;
}

int cmd_fuzz(const Paths& paths, uint64_t seed, uint64_t steps, uint32_t cores,
             const sbsim::Hooks& hooks) {
  sbsim::FuzzConfig cfg;
  cfg.seed = seed;
  cfg.steps = steps;
  cfg.cores = cores;
  cfg.hooks = hooks;
  auto report = sbsim::fuzz(cfg);
  std::ofstream summary(paths.summary, std::ios::trunc);
  summary << report.to_text();
  std::ofstream trace(paths.trace, std::ios::trunc);
  trace << report.trace_text;
  std::cout << "fuzz seed=" << seed << " steps=" << steps
            << " violations=" << report.violations.size() << "\n";
  for (size_t i = 0; i < report.violations.size() && i < 10; i++)
    std::cout << "  step=" << report.violations[i].step << " call="
              << report.violations[i].call << " "
              << report.violations[i].invariant << "\n";
  return report.violations.empty() ? kExitOk : kExitViolation;
}

int cmd_dump_state(const Paths& paths) {
  auto sys = load_state(paths);
  std::cout << "layout: " << sys->machine().layout().describe() << "\n";
  std::cout << "granule states:\n";
  sbsim::GranuleIdx start = 0;
  auto flush_run = [&](sbsim::GranuleIdx end) {
    auto p = sys->machine().gpt_pair(start);
    std::cout << "  [" << start << ".." << end - 1 << "] gptn="
              << to_string(p.first) << " gptrs=" << to_string(p.second) << "\n";
  };
  for (sbsim::GranuleIdx g = 1; g <= sys->machine().granules(); g++) {
    if (g == sys->machine().granules() ||
        sys->machine().gpt_pair(g) != sys->machine().gpt_pair(start)) {
      flush_run(g);
      start = g;
    }
  }
  for (const auto& [id, r] : sys->rmm().realms()) {
    std::cout << "realm " << id << ": state=" << to_string(r.state)
              << " s2_pages=" << r.s2.size()
              << " measurement=" << sbsim::to_hex(r.measurement.value);
    if (r.shared_region)
      std::cout << " shared=0x" << std::hex << r.shared_region->first
                << std::dec << "+" << r.shared_region->second;
    std::cout << "\n";
  }
  std::cout << "counters:\n" << sys->trace().counters().to_text();
  return kExitOk;
}

int cmd_report(const Paths& paths) {
  auto sys = load_state(paths);
  std::ifstream in(paths.trace);
  if (!in) throw std::runtime_error("cannot open trace: " + paths.trace);
  auto events = sbsim::parse_trace_text(in);
  auto replayed = sbsim::replay_events(events);
  std::string why;
  bool match = sbsim::replay_matches(*sys, replayed, &why);
  std::cout << "trace events: " << events.size() << "\n";
  std::cout << "counters (live):\n" << sys->trace().counters().to_text();
  std::cout << "counters (recomputed from trace):\n"
            << replayed.counters.to_text();
  std::cout << "replay check: " << (match ? "ok" : ("MISMATCH: " + why)) << "\n";
  return match ? kExitOk : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator of a two-GPT sandboxed-service architecture"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Paths paths;
  app.add_option("--state", paths.state, "Machine snapshot file");
  app.add_option("--trace", paths.trace, "Event trace log");
  app.add_option("--summary", paths.summary, "Counter / report summary file");
  app.add_option("--layout", paths.layout,
                 "Machine layout JSON (default: $SBSIM_LAYOUT)");
  app.add_option("--allowlist", paths.allowlist,
                 "Boot validation allow-list (one hex digest per line)");

  uint32_t granules = 1024, cores = 2;
  uint64_t seed = 1;
  auto* boot = app.add_subcommand("boot", "Create and persist a fresh machine");
  boot->add_option("--granules", granules, "Granule count for the default layout");
  boot->add_option("--cores", cores, "Number of cores");
  boot->add_option("--seed", seed, "Session seed");

  std::string manifest_path;
  auto* launch = app.add_subcommand("launch", "Create an SBS from a manifest");
  launch->add_option("manifest", manifest_path, "Manifest JSON path")->required();

  std::string scenario_path;
  auto* scenario = app.add_subcommand("scenario", "Run a scenario file");
  scenario->add_option("file", scenario_path, "Scenario file path")->required();

  std::string attack_name = "all";
  auto* attack = app.add_subcommand("attack", "Run scripted attack scenarios");
  attack->add_option("name", attack_name, "Attack name or 'all'");

  uint64_t fuzz_seed = 1, fuzz_steps = 10000;
  uint32_t fuzz_cores = 2;
  sbsim::Hooks hooks;
  auto* fuzz = app.add_subcommand("fuzz", "Randomized interface fuzzing");
  fuzz->add_option("--seed", fuzz_seed, "Fuzz seed");
  fuzz->add_option("--steps", fuzz_steps, "Step budget");
  fuzz->add_option("--cores", fuzz_cores, "Number of cores");
  fuzz->add_flag("--skip-log-check", hooks.skip_log_check,
                 "Disable the request-log check (mutation testing)");
  fuzz->add_flag("--skip-flush", hooks.skip_flush,
                 "Disable TLB flushes (mutation testing)");
  fuzz->add_flag("--skip-nx", hooks.skip_nx,
                 "Disable NX on shared pages (mutation testing)");
  fuzz->add_flag("--skip-overlap-check", hooks.skip_overlap_check,
                 "Disable the owner-overlap check (mutation testing)");
  fuzz->add_flag("--skip-mmio-gate", hooks.skip_mmio_gate,
                 "Disable the MMIO marking gate (mutation testing)");

  auto* dump = app.add_subcommand("dump-state", "Print the persisted state");
  auto* report = app.add_subcommand("report", "Counters and trace replay check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (boot->parsed()) return cmd_boot(paths, granules, cores, seed);
    if (launch->parsed()) return cmd_launch(paths, manifest_path);
    if (scenario->parsed()) return cmd_scenario(paths, scenario_path);
    if (attack->parsed()) return cmd_attack(paths, attack_name);
    if (fuzz->parsed())
      return cmd_fuzz(paths, fuzz_seed, fuzz_steps, fuzz_cores, hooks);
    if (dump->parsed()) return cmd_dump_state(paths);
    if (report->parsed()) return cmd_report(paths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
