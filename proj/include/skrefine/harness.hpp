#pragma once
// Pairs the two machines: random traces, the lock-step runner gated on
// condition R, and the three derived security property tests. Also the
// page-table alias injector that builds the R1-violating counterexamples
// those tests must catch.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skrefine/checker.hpp"
#include "skrefine/glue.hpp"

namespace skrefine {

struct TraceWeights {
  uint32_t execute = 70;
  uint32_t tick = 25;
  uint32_t interrupt = 5;  // weights are percents; execute+tick+interrupt = 100
};

inline std::vector<OperationCall> random_trace(uint64_t seed, uint64_t steps, uint32_t ncpus,
                                               TraceWeights w = {}) {
  if (w.execute + w.tick + w.interrupt != 100)
    throw std::invalid_argument("trace weights must sum to 100");
  std::mt19937_64 rng(seed);
  std::vector<OperationCall> out;
  out.reserve(steps);
  for (uint64_t i = 0; i < steps; ++i) {
    uint64_t roll = rand_below(rng, 100);
    uint32_t cpu = static_cast<uint32_t>(rand_below(rng, ncpus));
    if (roll < w.execute)
      out.push_back({"execute", cpu, 0});
    else if (roll < w.execute + w.tick)
      out.push_back({"tick", cpu, 0});
    else
      out.push_back({"interrupt", cpu, rand_below(rng, 256)});
  }
  return out;
}

inline ContentResolver unavailable_resolver() {
  return [](const std::string& path) -> std::vector<uint8_t> {
    throw IoError("no content source available for " + path);
  };
}

// Glue plus both invariant suites, as the lock-step predicate.
inline std::optional<std::string> glue_and_invariants(const AbstractState& a,
                                                      const ConcreteState& c) {
  GluingReport g = glue_check(a, c);
  if (!g.pass()) return g.detail;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  std::vector<std::string> ai = a_invariants(a);
  if (!ai.empty()) return "abstract invariant violated: " + join(ai);
  std::vector<std::string> ci = c_invariants(c);
  if (!ci.empty()) return "concrete invariant violated: " + join(ci);
  return std::nullopt;
}

struct LockstepOptions {
  bool force = false;  // run even when condition R fails
  TraceWeights weights{};
};

struct LockstepRunResult {
  bool refused = false;  // condition R failed and force was not set
  ConditionReport condition_r;
  LockstepVerdict verdict = LockstepVerdict::passed();
  uint64_t steps = 0;

  bool pass() const { return !refused && verdict.pass; }
};

inline LockstepRunResult lockstep_run(const Artifacts& a, const ContentResolver& base,
                                      std::span<const OperationCall> trace,
                                      const LockstepOptions& opt = {}) {
  LockstepRunResult res;
  ContentResolver resolve = artifact_resolver(a, base);
  res.condition_r = check_all(a.policy, a.bpolicy, a.pts, a.image, a.v, resolve);
  if (!res.condition_r.all_pass() && !opt.force) {
    res.refused = true;
    return res;
  }
  AbstractMachine am(a.u, resolve);
  ConcreteMachine cm(a.v, a.pts, a.image);
  res.verdict =
      check_lockstep(am, cm, trace, [](const AbstractMachine& x, const ConcreteMachine& y) {
        return glue_and_invariants(x.state(), y.state());
      });
  res.steps = trace.size();
  return res;
}

inline LockstepRunResult lockstep_run(const Artifacts& a, const ContentResolver& base,
                                      uint64_t seed, uint64_t steps,
                                      const LockstepOptions& opt = {}) {
  std::vector<OperationCall> trace = random_trace(seed, steps, a.v.ncpus, opt.weights);
  return lockstep_run(a, base, trace, opt);
}

inline LockstepRunResult lockstep_run(const Policy& p, uint64_t seed, uint64_t steps,
                                      const LockstepOptions& opt = {}) {
  Artifacts a = generate(p, unavailable_resolver());
  return lockstep_run(a, unavailable_resolver(), seed, steps, opt);
}

// Redirects one writable private page of the subject running first on cpu 0
// so it translates onto another subject's frame. The result fails R1 and is
// the executable counterexample behind the security fail cases.
struct PtAliasInfo {
  uint32_t writer = 0;
  uint32_t victim = 0;
  uint32_t writer_cpu = 0;
  uint64_t writer_la = 0;
  uint64_t victim_pa = 0;
};

inline PtAliasInfo inject_pt_alias(Artifacts& a) {
  if (a.u.nsubs < 2) throw std::invalid_argument("aliasing needs at least two subjects");
  PtAliasInfo info;
  info.writer_cpu = 0;
  info.writer = a.u.sched.sched_plans[0][0][0].subject;

  auto writable_la = [&](uint32_t s) -> std::optional<uint64_t> {
    for (const AbsVmemEntry& e : a.u.subjects[s].vmem)
      if (e.rwe.w && !e.channel) return e.la;
    return std::nullopt;
  };
  std::optional<uint64_t> wla = writable_la(info.writer);
  if (!wla) throw std::invalid_argument("first scheduled subject has no writable private page");
  info.writer_la = *wla;

  bool found = false;
  for (uint32_t s = 0; s < a.u.nsubs && !found; ++s) {
    if (s == info.writer) continue;
    if (std::optional<uint64_t> vla = writable_la(s)) {
      std::optional<Translation> t = c_translate(a.pts[s], *vla);
      if (!t) continue;
      info.victim = s;
      info.victim_pa = t->pa;
      found = true;
    }
  }
  if (!found) throw std::invalid_argument("no victim subject with a writable private page");

  Walk w = walk_va(a.pts[info.writer], info.writer_la);
  if (w.status != Walk::Status::Mapped)
    throw std::invalid_argument("writer page is not mapped before aliasing");
  uint64_t raw = encode_entry(info.victim_pa, true, true, true).raw;
  a.pts[info.writer].words[w.touched[3]] = raw;
  // keep the image's embedded copy of the paging structures coherent so the
  // alias violates exactly R1
  uint64_t image_off = a.pts[info.writer].pt_base + w.touched[3] * 8;
  for (int i = 0; i < 8; ++i)
    a.image.bytes.at(image_off + static_cast<uint64_t>(i)) =
        static_cast<uint8_t>(raw >> (8 * i));
  return info;
}

struct SecurityVerdict {
  bool pass = true;
  std::string detail;
};

namespace detail {

// Concatenated bytes of a subject's private pages, read through its own
// paging structures. Channel pages are excluded: they are the sanctioned
// communication path.
inline std::vector<uint8_t> translated_private_bytes(const ConcreteState& c,
                                                     const ParamsAbstract& u, uint32_t s) {
  std::vector<uint8_t> out;
  for (const AbsVmemEntry& e : u.subjects[s].vmem) {
    if (e.channel) continue;
    for (uint64_t off = 0; off < e.size; off += kPageSize) {
      std::optional<Translation> t = c_translate(c.pts[s], e.la + off);
      if (!t || t->pa + kPageSize > c.pmem.size()) {
        out.push_back(0xde);  // unmapped marker, keeps positions aligned
        continue;
      }
      out.insert(out.end(), c.pmem.begin() + static_cast<ptrdiff_t>(t->pa),
                 c.pmem.begin() + static_cast<ptrdiff_t>(t->pa + kPageSize));
    }
  }
  return out;
}

inline bool poke_both(AbstractState& a, ConcreteState& c, uint32_t s, uint64_t va,
                      const Instruction& ins) {
  std::array<uint8_t, kInstrSize> b = encode(ins);
  for (size_t i = 0; i < b.size(); ++i) {
    uint8_t* ap = a_byte(a, s, va + i);
    std::optional<Translation> t = c_translate(c.pts[s], va + i);
    if (!ap || !t || t->pa >= c.pmem.size()) return false;
    *ap = b[i];
    c.pmem[t->pa] = b[i];
  }
  return true;
}

inline bool poke_concrete(ConcreteState& c, uint32_t s, uint64_t va, const Instruction& ins) {
  std::array<uint8_t, kInstrSize> b = encode(ins);
  for (size_t i = 0; i < b.size(); ++i) {
    std::optional<Translation> t = c_translate(c.pts[s], va + i);
    if (!t || t->pa >= c.pmem.size()) return false;
    c.pmem[t->pa] = b[i];
  }
  return true;
}

}  // namespace detail

// A randomly placed STOREB by the running subject to one of its own writable
// private pages must leave every other subject's abstract memory and
// concrete translated image unchanged. With `alias` set, the probe store
// goes through the redirected page and the victim's image must expose it.
inline SecurityVerdict test_no_exfiltration(const Artifacts& a, const ContentResolver& base,
                                            uint64_t seed,
                                            const std::optional<PtAliasInfo>& alias = {}) {
  AbstractMachine am(a.u, artifact_resolver(a, base));
  ConcreteMachine cm(a.v, a.pts, a.image);
  std::mt19937_64 rng(seed ^ 0x5ec5ecULL);

  // warm the clocks and interrupt tables; no executes, so the probe below is
  // the run's only memory write
  std::vector<OperationCall> warm =
      random_trace(rng(), rand_below(rng, 64), a.v.ncpus, TraceWeights{0, 90, 10});
  for (const OperationCall& op : warm) {
    am.apply(op);
    cm.apply(op);
  }

  uint32_t cpu = alias ? alias->writer_cpu : static_cast<uint32_t>(rand_below(rng, a.v.ncpus));
  auto ready = [&] {
    const CpuState& ck = cm.state().cpus[cpu];
    if (ck.in_barrier || !ck.vmptr) return false;
    return !alias || *ck.vmptr == alias->writer;
  };
  for (uint64_t guard = 4 * a.u.sched.cycle_length + 8; !ready() && guard > 0; --guard)
    for (uint32_t k = 0; k < a.v.ncpus; ++k) {
      OperationCall op{"tick", k, 0};
      am.apply(op);
      cm.apply(op);
    }
  if (!ready()) return {false, "no runnable probe subject"};
  uint32_t s = *cm.state().cpus[cpu].vmptr;

  uint64_t target = 0;
  if (alias) {
    target = alias->writer_la + rand_below(rng, kPageSize);
  } else {
    std::vector<uint64_t> pages;
    for (const AbsVmemEntry& e : a.u.subjects[s].vmem)
      if (e.rwe.w && !e.channel)
        for (uint64_t off = 0; off < e.size; off += kPageSize) pages.push_back(e.la + off);
    if (pages.empty()) return {true, "probe subject has no writable private page"};
    target = pages[rand_below(rng, pages.size())] + rand_below(rng, kPageSize);
  }

  std::vector<std::map<uint64_t, std::vector<uint8_t>>> abs_before;
  std::vector<std::vector<uint8_t>> conc_before;
  for (uint32_t t = 0; t < a.u.nsubs; ++t) {
    abs_before.push_back(am.state().subjects[t].vmem);
    conc_before.push_back(detail::translated_private_bytes(cm.state(), a.u, t));
  }

  uint64_t ip = am.state().subjects[s].regs.ip;
  if (!detail::poke_both(am.state(), cm.state(), s, ip, {Opcode::Storeb, 1, 2, 0}))
    return {false, "probe instruction not pokeable"};
  uint64_t value = rand_below(rng, 256);
  am.state().subjects[s].regs.gp[1] = value;
  am.state().subjects[s].regs.gp[2] = target;
  cm.state().vmcss[s].regs.gp[1] = value;
  cm.state().vmcss[s].regs.gp[2] = target;
  OperationCall ex{"execute", cpu, 0};
  am.apply(ex);
  cm.apply(ex);

  for (uint32_t t = 0; t < a.u.nsubs; ++t) {
    if (t == s) continue;
    if (am.state().subjects[t].vmem != abs_before[t])
      return {false, "abstract private memory of subject " + std::to_string(t) + " changed"};
    if (detail::translated_private_bytes(cm.state(), a.u, t) != conc_before[t])
      return {false, "translated image of subject " + std::to_string(t) + " changed"};
  }
  return {};
}

// Two concrete states agreeing on the probe subject but differing everywhere
// else must agree on the subject's whole slice after one of its operations.
inline SecurityVerdict test_no_infiltration(const Artifacts& a, uint64_t seed,
                                            const std::optional<PtAliasInfo>& alias = {}) {
  ConcreteState s1 = c_init(a.v, a.pts, a.image);
  std::mt19937_64 rng(seed ^ 0x1f117ULL);

  uint32_t cpu = alias ? alias->writer_cpu : static_cast<uint32_t>(rand_below(rng, a.v.ncpus));
  uint64_t warm = rand_below(rng, a.u.sched.cycle_length);
  auto tick_all = [&](ConcreteState& st) {
    for (uint32_t k = 0; k < a.v.ncpus; ++k) c_tick(st, k);
  };
  for (uint64_t i = 0; i < warm; ++i) tick_all(s1);
  auto ready = [&] {
    const CpuState& ck = s1.cpus[cpu];
    if (ck.in_barrier || !ck.vmptr) return false;
    return !alias || *ck.vmptr == alias->writer;
  };
  for (uint64_t guard = 4 * a.u.sched.cycle_length + 8; !ready() && guard > 0; --guard)
    tick_all(s1);
  if (!ready()) return {false, "no runnable probe subject"};
  uint32_t s = *s1.cpus[cpu].vmptr;

  uint64_t target = 0;
  if (alias && s == alias->writer) {
    target = alias->writer_la + rand_below(rng, kPageSize);
  } else {
    std::vector<uint64_t> pages;
    for (const AbsVmemEntry& e : a.u.subjects[s].vmem)
      if (e.rwe.r)
        for (uint64_t off = 0; off < e.size; off += kPageSize) pages.push_back(e.la + off);
    if (pages.empty()) return {true, "probe subject has no readable page"};
    target = pages[rand_below(rng, pages.size())] + rand_below(rng, kPageSize);
  }
  if (!detail::poke_concrete(s1, s, s1.vmcss[s].regs.ip, {Opcode::Loadb, 1, 2, 0}))
    return {false, "probe instruction not pokeable"};
  s1.vmcss[s].regs.gp[2] = target;

  // second state: same subject slice, everything else perturbed
  ConcreteState s2 = s1;
  for (uint32_t t = 0; t < a.u.nsubs; ++t) {
    if (t == s) continue;
    for (uint64_t& g : s2.vmcss[t].regs.gp) g = rng();
    s2.vmcss[t].regs.ip = rng();
    s2.vmcss[t].regs.sp = rng();
    for (uint64_t& g : s2.subject_descs[t].gp) g = rng();
    s2.global_events[t] = rng() & 0xffff;
    for (const AbsVmemEntry& e : a.u.subjects[t].vmem) {
      if (e.channel) continue;  // the probe subject's channel view must agree
      for (uint64_t off = 0; off < e.size; ++off) {
        std::optional<Translation> tr = c_translate(s2.pts[t], e.la + off);
        if (tr && tr->pa < s2.pmem.size())
          s2.pmem[tr->pa] += static_cast<uint8_t>(1 + rand_below(rng, 255));
      }
    }
  }

  StepOutput o1 = c_execute(s1, cpu);
  StepOutput o2 = c_execute(s2, cpu);
  if (!(o1 == o2)) return {false, "step outputs differ"};
  if (!(s1.vmcss[s].regs == s2.vmcss[s].regs))
    return {false, "registers of the probe subject differ"};
  if (s1.global_events[s] != s2.global_events[s])
    return {false, "pending events of the probe subject differ"};
  auto view = [&](const ConcreteState& st) {
    std::vector<uint8_t> out = detail::translated_private_bytes(st, a.u, s);
    for (const AbsVmemEntry& e : a.u.subjects[s].vmem) {
      if (!e.channel) continue;
      for (uint64_t off = 0; off < e.size; off += kPageSize) {
        std::optional<Translation> tr = c_translate(st.pts[s], e.la + off);
        if (tr && tr->pa + kPageSize <= st.pmem.size())
          out.insert(out.end(), st.pmem.begin() + static_cast<ptrdiff_t>(tr->pa),
                     st.pmem.begin() + static_cast<ptrdiff_t>(tr->pa + kPageSize));
      }
    }
    return out;
  };
  if (view(s1) != view(s2)) return {false, "memory view of the probe subject differs"};
  return {};
}

// Over two full schedule cycles: (a) every running cpu executes exactly the
// scheduled subject, (b) no subject's registers or private memory change
// outside its own execution steps. The skip-reg-save knob breaks (b) at the
// first context switch after the victim has run.
inline SecurityVerdict test_temporal_separation(const Artifacts& a, bool skip_reg_save = false) {
  ConcreteState st = c_init(a.v, a.pts, a.image);
  st.fault_skip_reg_save = skip_reg_save;
  uint32_t nsubs = a.u.nsubs;
  uint32_t ncpus = a.v.ncpus;

  std::vector<RegisterFile> expected_regs(nsubs);
  std::vector<std::vector<uint8_t>> expected_mem(nsubs);
  for (uint32_t s = 0; s < nsubs; ++s) {
    expected_regs[s] = st.vmcss[s].regs;
    expected_mem[s] = detail::translated_private_bytes(st, a.u, s);
  }
  // executes are capped well below binary size / 8 so instruction fetch never
  // runs off the smallest one-page binary
  std::vector<uint32_t> budget(nsubs, 400);

  uint64_t rounds = 2 * a.u.sched.cycle_length;
  for (uint64_t r = 0; r < rounds; ++r) {
    for (uint32_t cpu = 0; cpu < ncpus; ++cpu) {
      std::optional<uint32_t> act = c_active_subject(st, cpu);
      if (act && budget[*act] > 0) {
        c_execute(st, cpu);
        --budget[*act];
        expected_regs[*act] = st.vmcss[*act].regs;
        expected_mem[*act] = detail::translated_private_bytes(st, a.u, *act);
      }
      c_tick(st, cpu);
    }
    for (uint32_t cpu = 0; cpu < ncpus; ++cpu) {
      const CpuState& ck = st.cpus[cpu];
      if (ck.in_barrier) continue;
      const auto& plan = st.sched.sched_plans[cpu][st.current_major_frame];
      if (!ck.vmptr || ck.minor_frame >= plan.size() ||
          *ck.vmptr != plan[ck.minor_frame].subject)
        return {false, "cpu " + std::to_string(cpu) + " runs an unscheduled subject"};
    }
    bool check_mem = (r % 8 == 7) || r + 1 == rounds;
    for (uint32_t s = 0; s < nsubs; ++s) {
      if (!(st.vmcss[s].regs == expected_regs[s]))
        return {false,
                "registers of subject " + std::to_string(s) + " changed outside its execution"};
      if (check_mem && detail::translated_private_bytes(st, a.u, s) != expected_mem[s])
        return {false, "private memory of subject " + std::to_string(s) +
                           " changed outside its execution"};
    }
  }
  return {};
}

}  // namespace skrefine
