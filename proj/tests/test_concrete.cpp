#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "skrefine/concrete_machine.hpp"
#include "skrefine/policy_gen.hpp"
#include "support.hpp"

using namespace skrefine;

namespace {

ContentResolver no_content() {
  return [](const std::string& p) -> std::vector<uint8_t> {
    throw IoError("unexpected content request: " + p);
  };
}

ConcreteState demo_state() {
  Policy p = testsupport::demo_policy();
  Artifacts a = generate(p, no_content());
  return c_init(a.v, a.pts, a.image);
}

// writes an instruction into pmem at the subject's translated address
void poke(ConcreteState& st, uint32_t subject, uint64_t va, const Instruction& ins) {
  std::array<uint8_t, kInstrSize> b = encode(ins);
  for (size_t i = 0; i < b.size(); ++i) {
    std::optional<Translation> t = c_translate(st.pts[subject], va + i);
    REQUIRE(t.has_value());
    st.pmem[t->pa] = b[i];
  }
}

}  // namespace

TEST_CASE("initial concrete state matches the reference configuration") {
  ConcreteState st = demo_state();

  SECTION("timers arm to the first minor deadlines") {
    CHECK(st.cpus[0].vmx_timer == 40);  // sub1
    CHECK(st.cpus[1].vmx_timer == 80);  // sub3
    CHECK(st.cpus[0].vmptr == 0);
    CHECK(st.cpus[1].vmptr == 2);
    CHECK(st.cpus[0].eptp == 0);
    CHECK(st.cpus[1].eptp == 2);
  }
  SECTION("clocks and barrier start cold") {
    for (const auto& ck : st.cpus) {
      CHECK(ck.tsc == 0);
      CHECK_FALSE(ck.in_barrier);
      CHECK(ck.minor_frame == 0);
    }
    CHECK(st.cmsc == 0);
    CHECK(st.current_major_frame == 0);
    CHECK(st.wait_count == 0);
    CHECK(st.mode == MachineMode::Running);
  }
  SECTION("subject descriptors hold the entry registers") {
    for (uint32_t s = 0; s < 4; ++s) {
      CHECK(st.subject_descs[s].ip == (s < 4 ? 0x400000 : 0));
      CHECK(st.subject_descs[s].sp == 0x500ff8);
      CHECK(st.vmcss[s].regs == st.subject_descs[s]);
      CHECK(st.vmcss[s].pt_id == s);
      CHECK(st.global_events[s] == 0);
    }
  }
  SECTION("pmem is the image") {
    CHECK(st.pmem[0x1000] == 0x01);  // binary fill of the first subject
    CHECK(st.pmem[0x2000] == 0x00);  // its data page
  }
  SECTION("invariants hold") { CHECK(c_invariants(st).empty()); }
}

TEST_CASE("c_init rejects inconsistent parameters") {
  Policy p = testsupport::demo_policy();
  Artifacts a = generate(p, no_content());

  SECTION("missing paging structures") {
    a.pts.pop_back();
    CHECK_THROWS_AS(c_init(a.v, a.pts, a.image), std::invalid_argument);
  }
  SECTION("spec count mismatch") {
    a.v.nsubs = 5;
    CHECK_THROWS_AS(c_init(a.v, a.pts, a.image), std::invalid_argument);
  }
}

TEST_CASE("timer exits walk the minor frames of the golden trace") {
  ConcreteState st = demo_state();

  SECTION("40 ticks switch cpu0 to the second minor frame") {
    st.vmcss[0].regs.gp[0] = 0xdead;  // live register to be context-saved
    for (int i = 0; i < 40; ++i) CHECK(c_tick(st, 0) == StepOutput::ok());
    CHECK(st.cpus[0].tsc == 40);
    CHECK(st.cpus[0].vmptr == 1);          // sub2 launched
    CHECK(st.cpus[0].eptp == 1);
    CHECK(st.cpus[0].vmx_timer == 40);     // 80 - 40
    CHECK(st.cpus[0].minor_frame == 1);
    CHECK_FALSE(st.cpus[0].in_barrier);
    CHECK(st.subject_descs[0].gp[0] == 0xdead);  // outgoing regs saved
    CHECK(st.vmcss[1].regs == st.subject_descs[1]);  // incoming regs restored
    CHECK(c_invariants(st).empty());
  }
  SECTION("the frame end parks the cpu in the barrier") {
    for (int i = 0; i < 80; ++i) c_tick(st, 1);
    CHECK(st.cpus[1].in_barrier);
    CHECK(st.wait_count == 1);
    CHECK(st.cmsc == 0);
    CHECK(st.current_major_frame == 0);
    CHECK(c_invariants(st).empty());

    SECTION("ticks while waiting advance only the tsc") {
      ConcreteState before = st;
      CHECK(c_tick(st, 1) == StepOutput::ok());
      CHECK(st.cpus[1].tsc == 81);
      before.cpus[1].tsc = 81;
      CHECK(st == before);
    }
    SECTION("execute while waiting is a no-op") {
      ConcreteState before = st;
      CHECK(c_execute(st, 1) == StepOutput::noop());
      CHECK(st == before);
    }
    SECTION("the last arrival releases into the next major frame") {
      for (int i = 0; i < 80; ++i) c_tick(st, 0);
      CHECK(st.wait_count == 0);
      CHECK_FALSE(st.cpus[0].in_barrier);
      CHECK_FALSE(st.cpus[1].in_barrier);
      CHECK(st.cmsc == 80);
      CHECK(st.current_major_frame == 1);
      CHECK(st.cpus[0].vmx_timer == 80);  // sub1 opens major frame 2
      CHECK(st.cpus[0].vmptr == 0);
      CHECK(st.cpus[1].vmx_timer == 60);  // sub4
      CHECK(st.cpus[1].vmptr == 3);
      CHECK(st.cpus[1].minor_frame == 0);
      CHECK(c_invariants(st).empty());
    }
    SECTION("an over-ticked cpu skips spent minor frames on release") {
      for (int i = 0; i < 65; ++i) c_tick(st, 1);  // waits 65 extra ticks
      CHECK(st.cpus[1].tsc == 145);
      for (int i = 0; i < 80; ++i) c_tick(st, 0);
      CHECK(st.cmsc == 80);
      CHECK(st.current_major_frame == 1);
      // elapsed 65 on cpu1 passes sub4's deadline 60: skip to the second minor
      CHECK(st.cpus[1].minor_frame == 1);
      CHECK(st.cpus[1].vmptr == 2);          // sub3
      CHECK(st.cpus[1].vmx_timer == 55);     // 120 - 65
      CHECK_FALSE(st.cpus[1].in_barrier);
      CHECK(c_invariants(st).empty());
    }
  }
  SECTION("a full cycle returns to frame zero") {
    for (int i = 0; i < 200; ++i) {
      c_tick(st, 0);
      c_tick(st, 1);
      CHECK(c_invariants(st).empty());
    }
    CHECK(st.current_major_frame == 0);
    CHECK(st.current_cycle == 1);
    CHECK(st.cmsc == 200);
    CHECK(st.cpus[0].vmx_timer == 40);
    CHECK(st.cpus[0].vmptr == 0);
  }
}

TEST_CASE("the skipped reg save knob corrupts the outgoing context") {
  ConcreteState st = demo_state();
  st.fault_skip_reg_save = true;
  st.vmcss[0].regs.gp[0] = 0xdead;
  for (int i = 0; i < 40; ++i) c_tick(st, 0);
  CHECK(st.subject_descs[0].gp[0] == 0);  // live value lost
}

TEST_CASE("c_execute runs instructions through the page tables") {
  ConcreteState st = demo_state();

  SECTION("register write") {
    poke(st, 0, 0x400000, {Opcode::Movi, 0, 0, 7});
    CHECK(c_execute(st, 0) == StepOutput::ok());
    CHECK(st.vmcss[0].regs.gp[0] == 7);
    CHECK(st.vmcss[0].regs.ip == 0x400008);
  }
  SECTION("store lands at the translated physical address") {
    st.vmcss[0].regs.gp[1] = 0x42;
    st.vmcss[0].regs.gp[2] = 0x500010;
    poke(st, 0, 0x400000, {Opcode::Storeb, 1, 2, 0});
    CHECK(c_execute(st, 0) == StepOutput::ok());
    std::optional<Translation> t = c_translate(st.pts[0], 0x500010);
    CHECK(st.pmem[t->pa] == 0x42);
  }
  SECTION("channel store is visible through the peer's mapping") {
    st.vmcss[0].regs.gp[1] = 0x77;
    st.vmcss[0].regs.gp[2] = 0x70000123;
    poke(st, 0, 0x400000, {Opcode::Storeb, 1, 2, 0});
    CHECK(c_execute(st, 0) == StepOutput::ok());
    std::optional<Translation> peer = c_translate(st.pts[1], 0x70000123);
    REQUIRE(peer.has_value());
    CHECK(st.pmem[peer->pa] == 0x77);
  }
  SECTION("store to a read-only page halts") {
    st.vmcss[0].regs.gp[2] = 0x400100;
    poke(st, 0, 0x400000, {Opcode::Storeb, 1, 2, 0});
    CHECK(c_execute(st, 0) == StepOutput::halted());
    CHECK(st.mode == MachineMode::ErrorHalt);
  }
  SECTION("unmapped access halts") {
    st.vmcss[0].regs.gp[2] = 0x600000;
    poke(st, 0, 0x400000, {Opcode::Loadb, 1, 2, 0});
    CHECK(c_execute(st, 0) == StepOutput::halted());
    CHECK(st.mode == MachineMode::ErrorHalt);
  }
  SECTION("corrupt paging structures halt instead of throwing") {
    Walk w = walk_va(st.pts[0], 0x400000);
    st.pts[0].words[w.touched[0]] = encode_entry(0xffff0000, true, true, false).raw;
    CHECK(c_execute(st, 0) == StepOutput::halted());
    CHECK(st.mode == MachineMode::ErrorHalt);
  }
  SECTION("translated address beyond pmem halts") {
    st.pmem.resize(0x2000);  // binary page at 0x1000 still readable
    st.vmcss[0].regs.gp[2] = 0x500010;  // data now beyond pmem
    poke(st, 0, 0x400000, {Opcode::Loadb, 1, 2, 0});
    CHECK(c_execute(st, 0) == StepOutput::halted());
    CHECK(st.mode == MachineMode::ErrorHalt);
  }
}

TEST_CASE("c_interrupt routes into the global event table") {
  ConcreteState st = demo_state();

  SECTION("routed vector") {
    CHECK(c_interrupt(st, 0, 33) == StepOutput::routed(1));
    CHECK(st.global_events[1] == 1ull << 5);
  }
  SECTION("unrouted vector is dropped") {
    ConcreteState before = st;
    CHECK(c_interrupt(st, 1, 200) == StepOutput::dropped());
    CHECK(st == before);
  }
  SECTION("pending event injects at the subject's next execute") {
    c_interrupt(st, 0, 33);
    for (int i = 0; i < 40; ++i) c_tick(st, 0);  // sub2 becomes active on cpu0
    poke(st, 1, 0x400000, {Opcode::Rdir, 3, 0, 0});
    CHECK(c_execute(st, 0) == StepOutput::ok());
    CHECK(st.vmcss[1].regs.gp[3] == 6);  // vector 5, stored as v+1
    CHECK(st.global_events[1] == 0);
  }
}

TEST_CASE("hand-built concrete invariant violations are reported by id") {
  ConcreteState st = demo_state();

  SECTION("reachable state is clean") { CHECK(c_invariants(st).empty()); }
  SECTION("every cpu in the barrier") {
    for (auto& ck : st.cpus) ck.in_barrier = true;
    st.wait_count = 2;
    CHECK(c_invariants(st) == std::vector<std::string>{"c3"});
  }
  SECTION("wait count off the barrier population") {
    st.wait_count = 1;
    CHECK(c_invariants(st) == std::vector<std::string>{"c2"});
  }
  SECTION("whole frame elapsed on every cpu") {
    for (auto& ck : st.cpus) ck.tsc = 80;
    CHECK(c_invariants(st) == std::vector<std::string>{"c1"});
  }
}

TEST_CASE("timer arithmetic matches the minor deadline relation") {
  // vmx_timer + (tsc - cmsc) == minor deadline on running cpus; deadlines are
  // cumulative within the major frame, so no start-of-minor correction
  ConcreteState st = demo_state();
  std::mt19937_64 rng(7);
  for (int step = 0; step < 3000; ++step) {
    c_tick(st, static_cast<uint32_t>(rand_below(rng, st.cpus.size())));
    REQUIRE(c_invariants(st).empty());
    for (uint32_t c = 0; c < st.cpus.size(); ++c) {
      const CpuState& ck = st.cpus[c];
      if (ck.in_barrier) continue;
      const auto& plan = st.sched.sched_plans[c][st.current_major_frame];
      REQUIRE(ck.vmx_timer + (ck.tsc - st.cmsc) == plan[ck.minor_frame].deadline);
      REQUIRE(ck.vmx_timer > 0);
    }
  }
}

TEST_CASE("randomized concrete traces keep c1 to c3") {
  for (uint64_t seed : {5u, 29u}) {
    Policy p = gen_random_policy(seed);
    Artifacts a = generate(p, no_content());
    ConcreteState st = c_init(a.v, a.pts, a.image);
    std::mt19937_64 rng(seed * 31 + 1);
    for (int step = 0; step < 2000; ++step) {
      uint64_t roll = rand_below(rng, 100);
      uint32_t cpu = static_cast<uint32_t>(rand_below(rng, a.v.ncpus));
      if (roll < 70)
        c_execute(st, cpu);
      else if (roll < 95)
        c_tick(st, cpu);
      else
        c_interrupt(st, cpu, rand_below(rng, 256));
      INFO("seed " << seed << " step " << step);
      REQUIRE(c_invariants(st).empty());
    }
  }
}

TEST_CASE("pmem outside the active subject's pages is preserved by execute") {
  ConcreteState st = demo_state();
  st.vmcss[0].regs.gp[1] = 0x42;
  st.vmcss[0].regs.gp[2] = 0x500010;
  poke(st, 0, 0x400000, {Opcode::Storeb, 1, 2, 0});

  std::vector<uint8_t> before = st.pmem;
  CHECK(c_execute(st, 0) == StepOutput::ok());

  std::optional<Translation> t = c_translate(st.pts[0], 0x500010);
  for (uint64_t pa = 0; pa < before.size(); ++pa)
    if (st.pmem[pa] != before[pa]) REQUIRE(pa == t->pa);
}

TEST_CASE("the concrete adapter exposes the shared machine type") {
  Policy p = testsupport::demo_policy();
  Artifacts a = generate(p, no_content());
  ConcreteMachine m(a.v, a.pts, a.image);

  MachineType t = m.machine_type();
  CHECK(t.name == "sk");
  CHECK(t.find("execute")->input == "cpu:2");
  CHECK(t.find("interrupt")->output == "routed:4|dropped");

  SECTION("run_trace steps and re-inits") {
    std::vector<OperationCall> trace{{"tick", 0, 0}, {"interrupt", 0, 33}, {"execute", 0, 0}};
    std::vector<StepOutput> out = run_trace(m, trace);
    REQUIRE(out.size() == 3);
    CHECK(out[0] == StepOutput::ok());
    CHECK(out[1] == StepOutput::routed(1));
    CHECK(out[2] == StepOutput::ok());
  }
  SECTION("re-init preserves the fault knob") {
    m.state().fault_skip_reg_save = true;
    m.apply({"init", 0, 0});
    CHECK(m.state().fault_skip_reg_save);
  }
  SECTION("snapshot carries the vt-x state") {
    nlohmann::ordered_json j = c_snapshot(m.state());
    CHECK(j["cpus"][0]["vmx_timer"] == 40);
    CHECK(j["subjects"].size() == 4);
    CHECK(j["pages"].size() > 0);
  }
}

TEST_CASE("concrete state after a trace is a pure function of inputs") {
  Policy p = gen_random_policy(23);
  Artifacts a = generate(p, no_content());
  ConcreteState s1 = c_init(a.v, a.pts, a.image);
  ConcreteState s2 = c_init(a.v, a.pts, a.image);
  std::mt19937_64 rng(99);
  std::vector<OperationCall> trace;
  for (int i = 0; i < 500; ++i) {
    uint64_t roll = rand_below(rng, 3);
    uint32_t cpu = static_cast<uint32_t>(rand_below(rng, a.v.ncpus));
    if (roll == 0)
      trace.push_back({"execute", cpu, 0});
    else if (roll == 1)
      trace.push_back({"tick", cpu, 0});
    else
      trace.push_back({"interrupt", cpu, rand_below(rng, 256)});
  }
  auto run = [&](ConcreteState& st) {
    for (const auto& c : trace) {
      if (c.op == "execute") c_execute(st, c.cpu);
      if (c.op == "tick") c_tick(st, c.cpu);
      if (c.op == "interrupt") c_interrupt(st, c.cpu, c.value);
    }
  };
  run(s1);
  run(s2);
  CHECK(s1 == s2);
}
