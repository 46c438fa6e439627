#pragma once
// Gluing relation between the abstract and concrete machines. Seven
// conjuncts pair the two states; lock-step testing asserts them after
// init and after every step, which is the refinement argument run as
// an executable check instead of a proof.

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>

#include <json.hpp>

#include "skrefine/abstract_machine.hpp"
#include "skrefine/concrete_machine.hpp"

namespace skrefine {

struct GluingReport {
  std::array<bool, 7> conjunct{true, true, true, true, true, true, true};
  std::string detail;  // first failure in g1..g7 order
  std::optional<uint32_t> cpu;
  std::optional<uint32_t> subject;
  std::optional<uint64_t> address;

  bool g(int i) const { return conjunct[static_cast<size_t>(i - 1)]; }

  bool pass() const {
    for (bool b : conjunct)
      if (!b) return false;
    return true;
  }
};

inline nlohmann::ordered_json glue_to_json(const GluingReport& r) {
  nlohmann::ordered_json j;
  for (int i = 1; i <= 7; ++i) j["g" + std::to_string(i)] = r.g(i);
  if (!r.pass()) {
    j["detail"] = r.detail;
    if (r.cpu) j["cpu"] = *r.cpu;
    if (r.subject) j["subject"] = *r.subject;
    if (r.address) j["address"] = hex(*r.address);
  }
  return j;
}

// g1 registers: an enabled subject's abstract register file equals the live
//    vmcs registers, a disabled subject's equals its descriptor.
// g2 memory: every valid abstract page (private or channel view) equals
//    physical memory at the page-table translation of its address.
// g3 clocks: tsc - cmsc equals the ideal clock's total tick count minus the
//    start of the current global major frame, per cpu.
// g4 frames: global major frame and cycle agree; minor frame pointers and
//    active subjects agree on enabled cpus.
// g5 timer: vmx_timer + min_ticks equals the current minor deadline on
//    enabled cpus.
// g6 barrier: a cpu waits in the barrier exactly when it is disabled.
// g7 events: the concrete global event table equals abstract pending words.
inline GluingReport glue_check(const AbstractState& a, const ConcreteState& c) {
  GluingReport r;
  auto fail = [&](int i, std::string d, std::optional<uint32_t> cpu = std::nullopt,
                  std::optional<uint32_t> subject = std::nullopt,
                  std::optional<uint64_t> address = std::nullopt) {
    r.conjunct[static_cast<size_t>(i - 1)] = false;
    if (r.detail.empty()) {
      r.detail = "g" + std::to_string(i) + ": " + std::move(d);
      r.cpu = cpu;
      r.subject = subject;
      r.address = address;
    }
  };

  uint32_t nsubs = static_cast<uint32_t>(a.subjects.size());
  uint32_t ncpus = static_cast<uint32_t>(a.cpus.size());

  for (uint32_t s = 0; s < nsubs; ++s) {
    const RegisterFile& want = a.subjects[s].regs;
    const RegisterFile& got = a.subjects[s].enabled ? c.vmcss[s].regs : c.subject_descs[s];
    if (!(want == got)) {
      fail(1, std::string("register file of subject ") + std::to_string(s) + " differs from the " +
                  (a.subjects[s].enabled ? "live vmcs" : "subject descriptor"),
           std::nullopt, s);
      break;
    }
  }

  for (uint32_t s = 0; s < nsubs && r.g(2); ++s) {
    for (const auto& [la, perms] : a.subjects[s].perms) {
      std::optional<Translation> t = c_translate(c.pts[s], la);
      if (!t) {
        fail(2, "valid abstract page has no concrete mapping", std::nullopt, s, la);
        break;
      }
      if (t->pa + kPageSize > c.pmem.size()) {
        fail(2, "translation leaves physical memory", std::nullopt, s, la);
        break;
      }
      const uint8_t* ab = a_page(a, s, la);
      if (!ab) {
        fail(2, "valid abstract page has no backing bytes", std::nullopt, s, la);
        break;
      }
      if (std::memcmp(ab, &c.pmem[t->pa], kPageSize) != 0) {
        uint64_t off = 0;
        while (ab[off] == c.pmem[t->pa + off]) ++off;
        fail(2, "memory mismatch at offset " + std::to_string(off), std::nullopt, s, la);
        break;
      }
    }
  }

  uint64_t len = a.sched.cycle_length;
  uint64_t global_start = a.cycles * len + a.sched.end_before(a.maj_fp);
  for (uint32_t cpu = 0; cpu < ncpus; ++cpu) {
    const AbsCpuClock& ck = a.cpus[cpu];
    uint64_t ideal_total = ck.ideal_cycles * len + ck.ticks;
    if (c.cpus[cpu].tsc < c.cmsc || ideal_total < global_start ||
        c.cpus[cpu].tsc - c.cmsc != ideal_total - global_start) {
      fail(3, "clock offset differs on cpu " + std::to_string(cpu), cpu);
      break;
    }
  }

  if (c.current_major_frame != a.maj_fp || c.current_cycle != a.cycles)
    fail(4, "global frame pointers differ");
  for (uint32_t cpu = 0; cpu < ncpus && r.g(4); ++cpu) {
    if (!a_cpu_enabled(a, cpu)) continue;
    if (c.cpus[cpu].minor_frame != a.cpus[cpu].minor_fp) {
      fail(4, "minor frame pointer differs on cpu " + std::to_string(cpu), cpu);
      break;
    }
    std::optional<uint32_t> want = a_active_subject(a, cpu);
    if (c.cpus[cpu].vmptr != want) {
      fail(4, "active subject differs on cpu " + std::to_string(cpu), cpu);
      break;
    }
  }

  for (uint32_t cpu = 0; cpu < ncpus; ++cpu) {
    if (!a_cpu_enabled(a, cpu)) continue;
    const auto& plan = a.sched.sched_plans[cpu][a.maj_fp];
    if (a.cpus[cpu].minor_fp >= plan.size()) continue;  // i6/i16 territory
    uint64_t deadline = plan[a.cpus[cpu].minor_fp].deadline;
    if (c.cpus[cpu].vmx_timer + a.cpus[cpu].min_ticks != deadline) {
      fail(5, "timer sum misses the minor deadline on cpu " + std::to_string(cpu), cpu);
      break;
    }
  }

  for (uint32_t cpu = 0; cpu < ncpus; ++cpu) {
    if (c.cpus[cpu].in_barrier == a_cpu_enabled(a, cpu)) {
      fail(6, "barrier state disagrees with cpu enablement on cpu " + std::to_string(cpu), cpu);
      break;
    }
  }

  for (uint32_t s = 0; s < nsubs; ++s) {
    if (c.global_events[s] != a.subjects[s].pending) {
      fail(7, "pending events differ for subject " + std::to_string(s), std::nullopt, s);
      break;
    }
  }

  return r;
}

}  // namespace skrefine
