#pragma once

// Abstract specification machine: one dedicated processor per subject,
// private sparse memories, shared channel memory reached through per-subject
// channel maps, and ideal/global clock scheduling. Stepped through the same
// operation alphabet as the concrete machine so the two run in lock-step.

#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "skrefine/isa.hpp"
#include "skrefine/step.hpp"
#include "skrefine/toolchain.hpp"

namespace skrefine {

struct AbsSubjectState {
  RegisterFile regs;
  std::map<uint64_t, std::vector<uint8_t>> vmem;  // page la -> kPageSize private bytes
  std::map<uint64_t, Permissions> perms;          // page la -> rwe, every valid page
  std::map<uint64_t, uint64_t> cmap;              // channel page la -> chmem byte offset
  uint64_t pending = 0;                           // bit v set: vector v pending
  bool enabled = false;

  bool operator==(const AbsSubjectState&) const = default;
};

// Ideal clock of one logical CPU; runs freely even while the CPU is outside
// the global schedule position.
struct AbsCpuClock {
  uint64_t ticks = 0;      // mod cycle length
  uint64_t min_ticks = 0;  // ticks into the current ideal major frame
  uint32_t ideal_maj_fp = 0;
  uint32_t minor_fp = 0;
  uint64_t ideal_cycles = 0;

  bool operator==(const AbsCpuClock&) const = default;
};

struct AbstractState {
  std::vector<AbsSubjectState> subjects;
  std::vector<uint8_t> chmem;
  std::vector<AbsCpuClock> cpus;
  uint32_t maj_fp = 0;
  uint64_t cycles = 0;
  MachineMode mode = MachineMode::Running;
  SchedDerived sched;
  std::vector<VectorRoutingEntry> routing;

  bool operator==(const AbstractState&) const = default;
};

namespace detail {

// Machine type shared by the pair: equality of the two types is the (type)
// half of adequacy, so the descriptors carry the parameter-derived domains.
inline MachineType sk_machine_type(uint32_t ncpus, uint32_t nsubs) {
  std::string cpu = "cpu:" + std::to_string(ncpus);
  return MachineType{"sk",
                     {OpSig{"init", "", "ok"},
                      OpSig{"execute", cpu, "ok|noop|halted"},
                      OpSig{"tick", cpu, "ok|halted"},
                      OpSig{"interrupt", "vector:256",
                            "routed:" + std::to_string(nsubs) + "|dropped"}}};
}

inline bool sk_call_in_domain(const OperationCall& c, uint32_t ncpus) {
  if (c.op == "init") return true;
  if (c.op == "execute" || c.op == "tick") return c.cpu < ncpus;
  if (c.op == "interrupt") return c.value < 256;
  return false;
}

}  // namespace detail

inline bool a_cpu_enabled(const AbstractState& st, uint32_t cpu) {
  const AbsCpuClock& ck = st.cpus[cpu];
  return ck.ideal_cycles == st.cycles && ck.ideal_maj_fp == st.maj_fp;
}

inline std::optional<uint32_t> a_active_subject(const AbstractState& st, uint32_t cpu) {
  if (!a_cpu_enabled(st, cpu)) return std::nullopt;
  return st.sched.sched_plans[cpu][st.maj_fp][st.cpus[cpu].minor_fp].subject;
}

inline const Permissions* a_page_perms(const AbstractState& st, uint32_t s, uint64_t va) {
  const auto& perms = st.subjects[s].perms;
  auto it = perms.find(va & ~(kPageSize - 1));
  return it == perms.end() ? nullptr : &it->second;
}

// Byte cell behind a valid virtual address: private page bytes, or channel
// memory through cmap. Null when the page is invalid.
inline uint8_t* a_byte(AbstractState& st, uint32_t s, uint64_t va) {
  AbsSubjectState& sub = st.subjects[s];
  uint64_t page = va & ~(kPageSize - 1);
  if (auto cm = sub.cmap.find(page); cm != sub.cmap.end())
    return &st.chmem[cm->second + (va & (kPageSize - 1))];
  if (auto vm = sub.vmem.find(page); vm != sub.vmem.end())
    return &vm->second[va & (kPageSize - 1)];
  return nullptr;
}

inline const uint8_t* a_byte(const AbstractState& st, uint32_t s, uint64_t va) {
  return a_byte(const_cast<AbstractState&>(st), s, va);
}

// Whole page behind a page-aligned valid address, kPageSize contiguous
// bytes. Null when the page is invalid.
inline const uint8_t* a_page(const AbstractState& st, uint32_t s, uint64_t page) {
  const AbsSubjectState& sub = st.subjects[s];
  if (auto cm = sub.cmap.find(page); cm != sub.cmap.end()) return &st.chmem[cm->second];
  if (auto vm = sub.vmem.find(page); vm != sub.vmem.end()) return vm->second.data();
  return nullptr;
}

inline AbstractState a_init(const ParamsAbstract& u, const ContentResolver& resolve) {
  if (u.subjects.size() != u.nsubs) throw std::invalid_argument("nsubs != subject count");
  if (u.sched.sched_plans.size() != u.ncpus)
    throw std::invalid_argument("sched plans do not cover every cpu");
  for (const auto& r : u.routing)
    if (r.subject >= u.nsubs || r.dest_vector > 63)
      throw std::invalid_argument("routing entry out of range");

  AbstractState st;
  st.sched = u.sched;
  st.routing = u.routing;
  st.chmem.assign(u.chmem_size, 0);
  st.cpus.assign(u.ncpus, {});
  st.subjects.resize(u.nsubs);

  for (size_t i = 0; i < u.subjects.size(); ++i) {
    const AbsSubjectParams& sp = u.subjects[i];
    AbsSubjectState& sub = st.subjects[i];
    sub.regs.ip = sp.entry_ip;
    sub.regs.sp = sp.entry_sp;
    for (const AbsVmemEntry& e : sp.vmem) {
      std::vector<uint8_t> bytes;
      if (!e.channel) bytes = resolve_content(e.content, e.size, resolve);
      for (uint64_t off = 0; off < e.size; off += kPageSize) {
        if (!sub.perms.emplace(e.la + off, e.rwe).second)
          throw std::invalid_argument("subject '" + sp.name + "' maps page " + hex(e.la + off) +
                                      " twice");
        if (e.channel) {
          if (e.chmem_offset + off + kPageSize > st.chmem.size())
            throw std::invalid_argument("channel mapping beyond chmem");
          sub.cmap[e.la + off] = e.chmem_offset + off;
        } else {
          sub.vmem[e.la + off] =
              std::vector<uint8_t>(bytes.begin() + off, bytes.begin() + off + kPageSize);
        }
      }
    }
  }

  for (uint32_t c = 0; c < u.ncpus; ++c) {
    if (st.sched.sched_plans[c].empty() || st.sched.sched_plans[c][0].empty())
      throw std::invalid_argument("empty schedule plan");
    st.subjects[st.sched.sched_plans[c][0][0].subject].enabled = true;
  }
  return st;
}

inline StepOutput a_execute(AbstractState& st, uint32_t cpu) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  std::optional<uint32_t> active = a_active_subject(st, cpu);
  if (!active) return StepOutput::noop();
  AbsSubjectState& sub = st.subjects[*active];

  if (sub.pending != 0 && sub.regs.ir == 0) {
    int v = std::countr_zero(sub.pending);
    sub.pending &= sub.pending - 1;
    sub.regs.ir = static_cast<uint64_t>(v) + 1;
  }

  auto fail = [&] {
    st.mode = MachineMode::ErrorHalt;
    return StepOutput::halted();
  };

  std::array<uint8_t, kInstrSize> raw;
  for (size_t i = 0; i < kInstrSize; ++i) {
    const Permissions* p = a_page_perms(st, *active, sub.regs.ip + i);
    uint8_t* cell = a_byte(st, *active, sub.regs.ip + i);
    if (!p || !p->x || !cell) return fail();
    raw[i] = *cell;
  }
  std::optional<Instruction> ins = decode(raw);
  if (!ins) return fail();

  RegisterFile& r = sub.regs;
  switch (ins->op) {
    case Opcode::Movi:
      r.gp[ins->reg1] = ins->imm;
      break;
    case Opcode::Loadb: {
      uint64_t va = r.gp[ins->reg2];
      const Permissions* p = a_page_perms(st, *active, va);
      if (!p || !p->r) return fail();
      r.gp[ins->reg1] = (r.gp[ins->reg1] & ~0xffull) | *a_byte(st, *active, va);
      break;
    }
    case Opcode::Storeb: {
      uint64_t va = r.gp[ins->reg2];
      const Permissions* p = a_page_perms(st, *active, va);
      if (!p || !p->w) return fail();
      *a_byte(st, *active, va) = static_cast<uint8_t>(r.gp[ins->reg1]);
      break;
    }
    case Opcode::Add:
      r.gp[ins->reg1] += r.gp[ins->reg2];
      break;
    case Opcode::Jmp:
      r.ip = ins->imm;
      return StepOutput::ok();
    case Opcode::Rdir:
      r.gp[ins->reg1] = r.ir;
      r.ir = 0;
      break;
    case Opcode::Vmcall:
      break;
    case Opcode::Hlt:
      return StepOutput::ok();  // idles: ip does not advance
  }
  r.ip += kInstrSize;
  return StepOutput::ok();
}

inline StepOutput a_tick(AbstractState& st, uint32_t cpu) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  AbsCpuClock& ck = st.cpus[cpu];
  const SchedDerived& sd = st.sched;
  size_t nmf = sd.major_frames.size();

  ck.ticks += 1;
  if (ck.ticks == sd.cycle_length) {
    ck.ticks = 0;
    ck.ideal_cycles += 1;
  }
  ck.min_ticks += 1;

  const auto& plan = sd.sched_plans[cpu][ck.ideal_maj_fp];
  if (ck.minor_fp < plan.size() && ck.min_ticks == plan[ck.minor_fp].deadline) ck.minor_fp += 1;
  if (ck.min_ticks == sd.major_frames[ck.ideal_maj_fp]) {
    ck.min_ticks = 0;
    ck.minor_fp = 0;
    ck.ideal_maj_fp = static_cast<uint32_t>((ck.ideal_maj_fp + 1) % nmf);
  }

  // the global position advances once every ideal clock is strictly past it
  bool all_past = true;
  for (const auto& c : st.cpus)
    all_past = all_past && (c.ideal_cycles > st.cycles ||
                            (c.ideal_cycles == st.cycles && c.ideal_maj_fp > st.maj_fp));
  if (all_past) {
    st.maj_fp += 1;
    if (st.maj_fp == nmf) {
      st.maj_fp = 0;
      st.cycles += 1;
    }
  }

  for (auto& sub : st.subjects) sub.enabled = false;
  for (uint32_t c = 0; c < st.cpus.size(); ++c)
    if (std::optional<uint32_t> s = a_active_subject(st, c)) st.subjects[*s].enabled = true;
  return StepOutput::ok();
}

inline StepOutput a_interrupt(AbstractState& st, uint64_t vector) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  for (const auto& rte : st.routing)
    if (rte.vector == vector) {
      st.subjects[rte.subject].pending |= 1ull << rte.dest_vector;
      return StepOutput::routed(rte.subject);
    }
  return StepOutput::dropped();
}

inline std::vector<std::string> a_invariants(const AbstractState& st) {
  const SchedDerived& sd = st.sched;
  uint64_t L = sd.cycle_length;
  size_t ncpus = st.cpus.size();

  bool i1 = true, i3 = true, i4 = true, i6 = true, i7 = true, i15 = true, i16 = true;
  for (size_t c = 0; c < ncpus; ++c) {
    const AbsCpuClock& ck = st.cpus[c];
    uint64_t start = sd.end_before(ck.ideal_maj_fp);
    const auto& plan = sd.sched_plans[c][ck.ideal_maj_fp];

    i1 = i1 && ck.ideal_cycles >= st.cycles;
    i3 = i3 && ck.min_ticks < sd.major_frames[ck.ideal_maj_fp];
    i4 = i4 && ck.ticks < L;
    i6 = i6 && ck.minor_fp <= plan.size();
    i7 = i7 && ck.ticks % L == (start + ck.min_ticks) % L;
    i15 = i15 && start <= ck.ticks % L && ck.ticks % L < sd.major_frame_ends[ck.ideal_maj_fp];
    if (ck.minor_fp >= plan.size()) {
      i16 = false;
    } else {
      uint64_t lo = ck.minor_fp == 0 ? 0 : plan[ck.minor_fp - 1].deadline;
      i16 = i16 && lo <= ck.min_ticks && ck.min_ticks < plan[ck.minor_fp].deadline;
    }
  }

  bool i2 = true;
  uint32_t min_maj = 0;
  bool any_current = false;
  for (const auto& ck : st.cpus)
    if (ck.ideal_cycles == st.cycles) {
      min_maj = any_current ? std::min(min_maj, ck.ideal_maj_fp) : ck.ideal_maj_fp;
      any_current = true;
    }
  if (any_current) i2 = st.maj_fp == min_maj;

  bool i19 = false;
  for (uint32_t c = 0; c < ncpus; ++c) i19 = i19 || a_cpu_enabled(st, c);

  std::vector<std::string> out;
  if (!i1) out.push_back("i1");
  if (!i2) out.push_back("i2");
  if (!i3) out.push_back("i3");
  if (!i4) out.push_back("i4");
  if (!i6) out.push_back("i6");
  if (!i7) out.push_back("i7");
  if (!i15) out.push_back("i15");
  if (!i16) out.push_back("i16");
  if (!i19) out.push_back("i19");
  return out;
}

// Per-subject serialization: registers, pending vector, enabled flag, and
// hashes of the private pages. Channel memory is global state and is
// deliberately not part of any subject's serialization; the isolation
// property quantifies over everything but declared channels.
inline nlohmann::ordered_json a_subject_json(const AbstractState& st, uint32_t s) {
  const AbsSubjectState& sub = st.subjects[s];
  nlohmann::ordered_json j;
  j["regs"] = {{"gp", sub.regs.gp},
               {"ip", hex(sub.regs.ip)},
               {"sp", hex(sub.regs.sp)},
               {"ir", sub.regs.ir}};
  j["pending"] = sub.pending;
  j["enabled"] = sub.enabled;
  nlohmann::ordered_json pages = nlohmann::ordered_json::object();
  for (const auto& [la, bytes] : sub.vmem) pages[hex(la)] = fnv1a(bytes.data(), bytes.size());
  j["pages"] = std::move(pages);
  return j;
}

inline nlohmann::ordered_json a_snapshot(const AbstractState& st) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(st.mode);
  j["maj_fp"] = st.maj_fp;
  j["cycles"] = st.cycles;
  nlohmann::ordered_json cpus = nlohmann::ordered_json::array();
  for (const auto& ck : st.cpus)
    cpus.push_back({{"ticks", ck.ticks},
                    {"min_ticks", ck.min_ticks},
                    {"ideal_maj_fp", ck.ideal_maj_fp},
                    {"minor_fp", ck.minor_fp},
                    {"ideal_cycles", ck.ideal_cycles}});
  j["cpus"] = std::move(cpus);
  j["chmem"] = fnv1a(st.chmem.data(), st.chmem.size());
  nlohmann::ordered_json subs = nlohmann::ordered_json::array();
  for (uint32_t s = 0; s < st.subjects.size(); ++s) subs.push_back(a_subject_json(st, s));
  j["subjects"] = std::move(subs);
  return j;
}

class AbstractMachine {
 public:
  AbstractMachine(ParamsAbstract u, ContentResolver resolve)
      : u_(std::move(u)), resolve_(std::move(resolve)), st_(a_init(u_, resolve_)) {}

  MachineType machine_type() const { return detail::sk_machine_type(u_.ncpus, u_.nsubs); }

  bool in_domain(const OperationCall& c) const { return detail::sk_call_in_domain(c, u_.ncpus); }

  StepOutput apply(const OperationCall& c) {
    if (c.op == "init") {
      st_ = a_init(u_, resolve_);
      return StepOutput::ok();
    }
    if (c.op == "execute") return a_execute(st_, c.cpu);
    if (c.op == "tick") return a_tick(st_, c.cpu);
    if (c.op == "interrupt") return a_interrupt(st_, c.value);
    throw std::invalid_argument("unknown operation '" + c.op + "'");
  }

  const AbstractState& state() const { return st_; }
  AbstractState& state() { return st_; }  // tests poke instructions and memory
  const ParamsAbstract& params() const { return u_; }

 private:
  ParamsAbstract u_;
  ContentResolver resolve_;
  AbstractState st_;
};

}  // namespace skrefine
