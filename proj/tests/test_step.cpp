#include <catch2/catch_amalgamated.hpp>

#include "skrefine/set_machine.hpp"
#include "skrefine/step.hpp"

using namespace skrefine;

namespace {

std::vector<OperationCall> calls(std::initializer_list<OperationCall> l) { return l; }

}  // namespace

TEST_CASE("run_trace returns one output per call") {
  AbsSetMachine m(AbsSetParams{4});
  auto trace = calls({{"init"}, {"add", 0, 1}, {"elem", 0, 1}, {"elem", 0, 2}});
  auto out = run_trace(m, trace);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == StepOutput::ok());
  CHECK(out[1] == StepOutput::ok());
  CHECK(out[2] == StepOutput::boolean(true));
  CHECK(out[3] == StepOutput::boolean(false));
}

TEST_CASE("run_trace prepends init when absent") {
  AbsSetMachine m(AbsSetParams{4});
  m.apply({"init"});
  m.apply({"add", 0, 3});
  auto trace = calls({{"elem", 0, 3}});
  auto out = run_trace(m, trace);
  REQUIRE(out.size() == 1);
  // the implicit init cleared the set
  CHECK(out[0] == StepOutput::boolean(false));
}

TEST_CASE("run_trace rejects unknown operations before executing anything") {
  AbsSetMachine m(AbsSetParams{4});
  m.apply({"init"});
  m.apply({"add", 0, 1});
  auto trace = calls({{"init"}, {"add", 0, 2}, {"frobnicate"}});
  CHECK_THROWS_AS(run_trace(m, trace), TraceError);
  // nothing executed: element 1 still present, element 2 never added
  CHECK(m.apply({"elem", 0, 1}) == StepOutput::boolean(true));
  CHECK(m.apply({"elem", 0, 2}) == StepOutput::boolean(false));
}

TEST_CASE("run_trace rejects out-of-domain inputs") {
  AbsSetMachine m(AbsSetParams{4});
  auto trace = calls({{"init"}, {"add", 0, 4}});
  CHECK_THROWS_AS(run_trace(m, trace), TraceError);
}

TEST_CASE("run_trace is deterministic") {
  auto trace = calls({{"init"}, {"add", 0, 2}, {"elem", 0, 2}, {"add", 0, 0}, {"elem", 0, 1}});
  AbsSetMachine m1(AbsSetParams{4}), m2(AbsSetParams{4});
  CHECK(run_trace(m1, trace) == run_trace(m2, trace));
  CHECK(m1.members() == m2.members());
}

TEST_CASE("check_lockstep requires equal machine types") {
  AbsSetMachine a(AbsSetParams{5});
  SetMachine c(SetParams{4, {1, 2, 3, 0}});
  auto trace = calls({{"init"}});
  auto v = check_lockstep(a, c, trace, set_glue);
  REQUIRE_FALSE(v.pass);
  CHECK(v.failure == LockstepVerdict::Failure::TypeMismatch);
}

TEST_CASE("check_lockstep passes for a glued pair") {
  AbsSetMachine a(AbsSetParams{4});
  SetMachine c(SetParams{4, {1, 2, 3, 0}});
  auto trace = calls({{"init"}, {"add", 0, 1}, {"elem", 0, 1}, {"elem", 0, 0}});
  auto v = check_lockstep(a, c, trace, set_glue);
  CHECK(v.pass);
}

TEST_CASE("output mismatch is reported with its 1-based step") {
  // Without a state glue, divergence surfaces where outputs differ:
  // concrete elem(1) reads S[T[1]] = S[0], which add(0) set.
  AbsSetMachine a(AbsSetParams{4});
  SetMachine c(SetParams{4, {0, 0, 2, 3}});  // non-injective
  auto trace = calls({{"init"}, {"add", 0, 0}, {"elem", 0, 1}});
  auto no_glue = [](const AbsSetMachine&, const SetMachine&) { return std::optional<std::string>{}; };
  auto v = check_lockstep(a, c, trace, no_glue);
  REQUIRE_FALSE(v.pass);
  CHECK(v.failure == LockstepVerdict::Failure::OutputMismatch);
  CHECK(v.step == 3);
}

TEST_CASE("a state glue catches the same divergence one step earlier") {
  AbsSetMachine a(AbsSetParams{4});
  SetMachine c(SetParams{4, {0, 0, 2, 3}});
  auto trace = calls({{"init"}, {"add", 0, 0}, {"elem", 0, 1}});
  auto v = check_lockstep(a, c, trace, set_glue);
  REQUIRE_FALSE(v.pass);
  CHECK(v.failure == LockstepVerdict::Failure::GlueViolation);
  CHECK(v.step == 2);
}

TEST_CASE("a passing lockstep trace passes on every prefix") {
  auto trace = calls({{"init"}, {"add", 0, 2}, {"elem", 0, 2}, {"add", 0, 3}, {"elem", 0, 0}});
  for (size_t n = 1; n <= trace.size(); ++n) {
    AbsSetMachine a(AbsSetParams{4});
    SetMachine c(SetParams{4, {3, 2, 1, 0}});
    std::vector<OperationCall> prefix(trace.begin(), trace.begin() + n);
    CHECK(check_lockstep(a, c, prefix, set_glue).pass);
  }
}
