#pragma once

// Concrete machine: single physical memory, per-subject page tables, VMCS
// array, per-CPU VT-x state, and the generated-kernel handler semantics
// (timer exits, minor/major frame switching, sense-reversal barrier).

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "skrefine/abstract_machine.hpp"
#include "skrefine/isa.hpp"
#include "skrefine/paging.hpp"
#include "skrefine/step.hpp"
#include "skrefine/toolchain.hpp"

namespace skrefine {

struct Vmcs {
  RegisterFile regs;
  uint32_t pt_id = 0;

  bool operator==(const Vmcs&) const = default;
};

struct CpuState {
  std::optional<uint32_t> vmptr;  // loaded VMCS id; always engaged after init
  uint32_t eptp = 0;              // active page-table id
  uint32_t vmx_timer = 0;
  uint64_t tsc = 0;
  bool in_barrier = false;
  uint32_t minor_frame = 0;  // index into the current major frame's plan

  bool operator==(const CpuState&) const = default;
};

struct ConcreteState {
  std::vector<uint8_t> pmem;
  std::vector<PagingStructureFile> pts;
  std::vector<Vmcs> vmcss;
  std::vector<CpuState> cpus;
  std::vector<RegisterFile> subject_descs;
  uint64_t cmsc = 0;  // tsc value at the start of the current major frame
  uint32_t current_major_frame = 0;
  uint64_t current_cycle = 0;
  uint32_t wait_count = 0;
  SchedDerived sched;
  std::vector<VectorRoutingEntry> routing;
  std::vector<uint64_t> global_events;  // per subject
  MachineMode mode = MachineMode::Running;
  bool fault_skip_reg_save = false;  // test knob: drop the reg save on VM exit

  bool operator==(const ConcreteState&) const = default;
};

inline std::optional<uint32_t> c_active_subject(const ConcreteState& st, uint32_t cpu) {
  const CpuState& ck = st.cpus[cpu];
  if (ck.in_barrier || !ck.vmptr) return std::nullopt;
  return *ck.vmptr;
}

// Translation that never throws: corrupt structures and non-canonical
// addresses read as unmapped, which the execute path turns into a halt.
inline std::optional<Translation> c_translate(const PagingStructureFile& f, uint64_t va) {
  if (va >= kVaLimit) return std::nullopt;
  try {
    return translate(f, va);
  } catch (const PtCorruption&) {
    return std::nullopt;
  }
}

inline ConcreteState c_init(const ParamsConcrete& v, const std::vector<PagingStructureFile>& pts,
                            const Image& image) {
  if (v.subject_specs.size() != v.nsubs) throw std::invalid_argument("nsubs != spec count");
  if (pts.size() != v.nsubs) throw std::invalid_argument("one paging structure file per subject");
  if (v.sched.sched_plans.size() != v.ncpus)
    throw std::invalid_argument("sched plans do not cover every cpu");
  for (const auto& r : v.routing)
    if (r.subject >= v.nsubs || r.dest_vector > 63)
      throw std::invalid_argument("routing entry out of range");

  ConcreteState st;
  st.pmem = image.bytes;
  st.pts = pts;
  st.sched = v.sched;
  st.routing = v.routing;
  st.global_events.assign(v.nsubs, 0);
  st.vmcss.resize(v.nsubs);
  st.subject_descs.resize(v.nsubs);
  for (uint32_t i = 0; i < v.nsubs; ++i) {
    const SubjectSpec& spec = v.subject_specs[i];
    if (spec.pt_id >= pts.size() || spec.vmcs_id >= v.nsubs)
      throw std::invalid_argument("subject spec ids out of range");
    RegisterFile r;
    r.ip = spec.entry_ip;
    r.sp = spec.entry_sp;
    st.vmcss[spec.vmcs_id].regs = r;
    st.vmcss[spec.vmcs_id].pt_id = spec.pt_id;
    st.subject_descs[i] = r;
  }
  st.cpus.resize(v.ncpus);
  for (uint32_t c = 0; c < v.ncpus; ++c) {
    if (st.sched.sched_plans[c].empty() || st.sched.sched_plans[c][0].empty())
      throw std::invalid_argument("empty schedule plan");
    const MinorFrame& first = st.sched.sched_plans[c][0][0];
    st.cpus[c].vmptr = first.subject;
    st.cpus[c].eptp = st.vmcss[first.subject].pt_id;
    st.cpus[c].vmx_timer = static_cast<uint32_t>(first.deadline);
    st.cpus[c].minor_frame = 0;
  }
  return st;
}

inline StepOutput c_execute(ConcreteState& st, uint32_t cpu) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  CpuState& ck = st.cpus[cpu];
  if (ck.in_barrier) return StepOutput::noop();  // the kernel is spinning
  uint32_t s = *ck.vmptr;
  RegisterFile& r = st.vmcss[s].regs;

  if (st.global_events[s] != 0 && r.ir == 0) {
    int v = std::countr_zero(st.global_events[s]);
    st.global_events[s] &= st.global_events[s] - 1;
    r.ir = static_cast<uint64_t>(v) + 1;
  }

  auto fail = [&] {
    st.mode = MachineMode::ErrorHalt;
    return StepOutput::halted();
  };

  const PagingStructureFile& f = st.pts[ck.eptp];
  std::array<uint8_t, kInstrSize> raw;
  for (size_t i = 0; i < kInstrSize; ++i) {
    std::optional<Translation> t = c_translate(f, r.ip + i);
    if (!t || !t->perms.x || t->pa >= st.pmem.size()) return fail();
    raw[i] = st.pmem[t->pa];
  }
  std::optional<Instruction> ins = decode(raw);
  if (!ins) return fail();

  switch (ins->op) {
    case Opcode::Movi:
      r.gp[ins->reg1] = ins->imm;
      break;
    case Opcode::Loadb: {
      std::optional<Translation> t = c_translate(f, r.gp[ins->reg2]);
      if (!t || !t->perms.r || t->pa >= st.pmem.size()) return fail();
      r.gp[ins->reg1] = (r.gp[ins->reg1] & ~0xffull) | st.pmem[t->pa];
      break;
    }
    case Opcode::Storeb: {
      std::optional<Translation> t = c_translate(f, r.gp[ins->reg2]);
      if (!t || !t->perms.w || t->pa >= st.pmem.size()) return fail();
      st.pmem[t->pa] = static_cast<uint8_t>(r.gp[ins->reg1]);
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
      return StepOutput::ok();
  }
  r.ip += kInstrSize;
  return StepOutput::ok();
}

namespace detail {

inline void c_launch(ConcreteState& st, uint32_t cpu, uint32_t subject) {
  st.vmcss[subject].regs = st.subject_descs[subject];
  st.cpus[cpu].vmptr = subject;
  st.cpus[cpu].eptp = st.vmcss[subject].pt_id;
}

// Barrier release, performed wholesale by the last-arriving CPU: advance the
// major frame, then place every CPU by its elapsed time in the new frame.
// The releasing CPU has elapsed 0, so at least one CPU always launches.
inline void c_release(ConcreteState& st) {
  st.wait_count = 0;
  st.cmsc += st.sched.major_frames[st.current_major_frame];
  st.current_major_frame += 1;
  if (st.current_major_frame == st.sched.major_frames.size()) {
    st.current_major_frame = 0;
    st.current_cycle += 1;
  }
  for (uint32_t c = 0; c < st.cpus.size(); ++c) {
    CpuState& ck = st.cpus[c];
    ck.in_barrier = false;
    uint64_t elapsed = ck.tsc - st.cmsc;
    const auto& plan = st.sched.sched_plans[c][st.current_major_frame];
    size_t m = 0;
    while (m < plan.size() && plan[m].deadline <= elapsed) ++m;
    if (m == plan.size()) {  // over-ticked past the whole frame
      ck.in_barrier = true;
      st.wait_count += 1;
    } else {
      ck.minor_frame = static_cast<uint32_t>(m);
      ck.vmx_timer = static_cast<uint32_t>(plan[m].deadline - elapsed);
      c_launch(st, c, plan[m].subject);
    }
  }
}

}  // namespace detail

inline StepOutput c_tick(ConcreteState& st, uint32_t cpu) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  CpuState& ck = st.cpus[cpu];
  ck.tsc += 1;
  if (ck.in_barrier) return StepOutput::ok();  // no timer armed while spinning

  ck.vmx_timer -= 1;
  if (ck.vmx_timer > 0) return StepOutput::ok();

  // VM exit: timer expired
  uint32_t outgoing = *ck.vmptr;
  if (!st.fault_skip_reg_save) st.subject_descs[outgoing] = st.vmcss[outgoing].regs;

  const auto& plan = st.sched.sched_plans[cpu][st.current_major_frame];
  if (ck.minor_frame + 1 < plan.size()) {
    ck.minor_frame += 1;
    const MinorFrame& next = plan[ck.minor_frame];
    ck.vmx_timer = static_cast<uint32_t>(next.deadline - (ck.tsc - st.cmsc));
    detail::c_launch(st, cpu, next.subject);
  } else {
    ck.in_barrier = true;
    st.wait_count += 1;
    if (st.wait_count == st.cpus.size()) detail::c_release(st);
  }
  return StepOutput::ok();
}

inline StepOutput c_interrupt(ConcreteState& st, uint32_t cpu, uint64_t vector) {
  if (st.mode != MachineMode::Running) return StepOutput::halted();
  (void)cpu;  // the VM exit saves and restores the guest transparently
  for (const auto& rte : st.routing)
    if (rte.vector == vector) {
      st.global_events[rte.subject] |= 1ull << rte.dest_vector;
      return StepOutput::routed(rte.subject);
    }
  return StepOutput::dropped();
}

inline std::vector<std::string> c_invariants(const ConcreteState& st) {
  std::vector<std::string> out;

  bool any = false;
  uint64_t min_elapsed = 0;
  uint32_t barrier_count = 0;
  for (const auto& ck : st.cpus) {
    uint64_t elapsed = ck.tsc - st.cmsc;
    if (!any || elapsed < min_elapsed) min_elapsed = elapsed;
    any = true;
    if (ck.in_barrier) barrier_count += 1;
  }
  if (any && min_elapsed >= st.sched.major_frames[st.current_major_frame]) out.push_back("c1");
  if (st.wait_count != barrier_count) out.push_back("c2");
  if (any && barrier_count == st.cpus.size()) out.push_back("c3");
  return out;
}

inline nlohmann::ordered_json c_snapshot(const ConcreteState& st) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(st.mode);
  j["current_major_frame"] = st.current_major_frame;
  j["current_cycle"] = st.current_cycle;
  j["cmsc"] = st.cmsc;
  j["wait_count"] = st.wait_count;
  nlohmann::ordered_json cpus = nlohmann::ordered_json::array();
  for (const auto& ck : st.cpus)
    cpus.push_back({{"vmptr", ck.vmptr ? nlohmann::ordered_json(*ck.vmptr) : nullptr},
                    {"eptp", ck.eptp},
                    {"vmx_timer", ck.vmx_timer},
                    {"tsc", ck.tsc},
                    {"in_barrier", ck.in_barrier},
                    {"minor_frame", ck.minor_frame}});
  j["cpus"] = std::move(cpus);
  nlohmann::ordered_json subs = nlohmann::ordered_json::array();
  for (uint32_t s = 0; s < st.vmcss.size(); ++s) {
    const RegisterFile& live = st.vmcss[s].regs;
    const RegisterFile& desc = st.subject_descs[s];
    subs.push_back({{"vmcs_regs",
                     {{"gp", live.gp}, {"ip", hex(live.ip)}, {"sp", hex(live.sp)}, {"ir", live.ir}}},
                    {"desc_regs",
                     {{"gp", desc.gp}, {"ip", hex(desc.ip)}, {"sp", hex(desc.sp)}, {"ir", desc.ir}}},
                    {"pending", st.global_events[s]}});
  }
  j["subjects"] = std::move(subs);
  nlohmann::ordered_json pages = nlohmann::ordered_json::object();
  for (uint64_t pa = 0; pa + kPageSize <= st.pmem.size(); pa += kPageSize) {
    bool all_zero = true;
    for (uint64_t i = 0; i < kPageSize && all_zero; ++i) all_zero = st.pmem[pa + i] == 0;
    if (!all_zero) pages[hex(pa)] = fnv1a(st.pmem.data() + pa, kPageSize);
  }
  j["pages"] = std::move(pages);
  return j;
}

class ConcreteMachine {
 public:
  ConcreteMachine(ParamsConcrete v, std::vector<PagingStructureFile> pts, Image image)
      : v_(std::move(v)),
        pts_(std::move(pts)),
        image_(std::move(image)),
        st_(c_init(v_, pts_, image_)) {}

  MachineType machine_type() const { return detail::sk_machine_type(v_.ncpus, v_.nsubs); }

  bool in_domain(const OperationCall& c) const { return detail::sk_call_in_domain(c, v_.ncpus); }

  StepOutput apply(const OperationCall& c) {
    if (c.op == "init") {
      bool knob = st_.fault_skip_reg_save;
      st_ = c_init(v_, pts_, image_);
      st_.fault_skip_reg_save = knob;
      return StepOutput::ok();
    }
    if (c.op == "execute") return c_execute(st_, c.cpu);
    if (c.op == "tick") return c_tick(st_, c.cpu);
    if (c.op == "interrupt") return c_interrupt(st_, c.cpu, c.value);
    throw std::invalid_argument("unknown operation '" + c.op + "'");
  }

  const ConcreteState& state() const { return st_; }
  ConcreteState& state() { return st_; }  // tests poke memory and knobs
  const ParamsConcrete& params() const { return v_; }

 private:
  ParamsConcrete v_;
  std::vector<PagingStructureFile> pts_;
  Image image_;
  ConcreteState st_;
};

}  // namespace skrefine
