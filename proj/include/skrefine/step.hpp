#pragma once

// Machines as deterministic total transition functions. A machine exposes
// its type (operation names plus input/output domain descriptors) and an
// apply() that consumes one labelled operation call and yields an output.
// Two machines are lock-step comparable only when their types are equal.

#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skrefine/common.hpp"

namespace skrefine {

struct OperationCall {
  std::string op;
  uint32_t cpu = 0;
  uint64_t value = 0;  // element for set ops, vector for interrupts

  bool operator==(const OperationCall&) const = default;
};

// Shared by machines that can shut down on an illegal access: once in
// ErrorHalt every operation returns halted and the state is frozen.
enum class MachineMode : uint8_t { Running, ErrorHalt };

inline const char* to_string(MachineMode m) {
  return m == MachineMode::Running ? "running" : "error_halt";
}

struct StepOutput {
  enum class Kind : uint8_t { Ok, Noop, Halted, Boolean, Routed, Dropped };
  Kind kind = Kind::Ok;
  uint64_t value = 0;  // Boolean payload or routed subject id

  bool operator==(const StepOutput&) const = default;

  static StepOutput ok() { return {Kind::Ok, 0}; }
  static StepOutput noop() { return {Kind::Noop, 0}; }
  static StepOutput halted() { return {Kind::Halted, 0}; }
  static StepOutput boolean(bool b) { return {Kind::Boolean, b ? 1u : 0u}; }
  static StepOutput routed(uint64_t subject) { return {Kind::Routed, subject}; }
  static StepOutput dropped() { return {Kind::Dropped, 0}; }
};

inline const char* to_string(StepOutput::Kind k) {
  switch (k) {
    case StepOutput::Kind::Ok: return "ok";
    case StepOutput::Kind::Noop: return "noop";
    case StepOutput::Kind::Halted: return "halted";
    case StepOutput::Kind::Boolean: return "bool";
    case StepOutput::Kind::Routed: return "routed";
    case StepOutput::Kind::Dropped: return "dropped";
  }
  return "?";
}

inline std::string to_string(const StepOutput& o) {
  std::string s = to_string(o.kind);
  if (o.kind == StepOutput::Kind::Boolean) s += o.value ? "(true)" : "(false)";
  if (o.kind == StepOutput::Kind::Routed) s += "(" + std::to_string(o.value) + ")";
  return s;
}

// One operation signature: name plus textual input/output domain
// descriptors. Descriptors make the (type) equality between an abstract and
// a concrete machine an honest check: e.g. "cpu:2" differs from "cpu:3".
struct OpSig {
  std::string name;
  std::string input;
  std::string output;

  bool operator==(const OpSig&) const = default;
};

struct MachineType {
  std::string name;
  std::vector<OpSig> ops;

  bool operator==(const MachineType&) const = default;

  const OpSig* find(std::string_view op) const {
    for (auto& s : ops)
      if (s.name == op) return &s;
    return nullptr;
  }
};

template <typename M>
concept Machine = requires(M m, const M cm, const OperationCall& call) {
  { cm.machine_type() } -> std::convertible_to<MachineType>;
  { m.apply(call) } -> std::same_as<StepOutput>;
  { cm.in_domain(call) } -> std::same_as<bool>;
};

struct TraceError : std::runtime_error {
  size_t step;  // 1-based position of the offending call
  TraceError(const std::string& msg, size_t step_)
      : std::runtime_error(msg + " at step " + std::to_string(step_)), step(step_) {}
};

namespace detail {

// Validates every call name/domain up front: a bad trace is rejected before
// any operation executes.
template <Machine M>
void validate_trace(const M& m, std::span<const OperationCall> trace) {
  const MachineType t = m.machine_type();
  for (size_t i = 0; i < trace.size(); ++i) {
    if (!t.find(trace[i].op))
      throw TraceError("unknown operation '" + trace[i].op + "'", i + 1);
    if (!m.in_domain(trace[i]))
      throw TraceError("operation '" + trace[i].op + "' input out of domain", i + 1);
  }
}

inline bool begins_with_init(std::span<const OperationCall> trace) {
  return !trace.empty() && trace.front().op == "init";
}

}  // namespace detail

// Runs a trace from a fresh init, returning one output per call. If the
// trace does not begin with init, an init call is performed first (its
// output is not part of the returned sequence in that case).
template <Machine M>
std::vector<StepOutput> run_trace(M& m, std::span<const OperationCall> trace) {
  detail::validate_trace(m, trace);
  std::vector<StepOutput> out;
  out.reserve(trace.size());
  if (!detail::begins_with_init(trace)) m.apply(OperationCall{"init"});
  for (const auto& call : trace) out.push_back(m.apply(call));
  return out;
}

struct LockstepVerdict {
  enum class Failure : uint8_t { None, TypeMismatch, OutputMismatch, GlueViolation };
  bool pass = true;
  Failure failure = Failure::None;
  size_t step = 0;  // 1-based over the executed calls (init included)
  std::string detail;

  static LockstepVerdict passed() { return {}; }
  static LockstepVerdict failed(Failure f, size_t step, std::string detail) {
    return {false, f, step, std::move(detail)};
  }
};

inline const char* to_string(LockstepVerdict::Failure f) {
  switch (f) {
    case LockstepVerdict::Failure::None: return "none";
    case LockstepVerdict::Failure::TypeMismatch: return "type mismatch";
    case LockstepVerdict::Failure::OutputMismatch: return "output mismatch";
    case LockstepVerdict::Failure::GlueViolation: return "glue violation";
  }
  return "?";
}

// Drives both machines through the same trace, asserting equal outputs at
// every step and the gluing predicate after init and after every step.
// The glue callable returns an empty optional on success, else a reason.
template <Machine A, Machine C, typename Glue>
  requires std::invocable<Glue, const A&, const C&>
LockstepVerdict check_lockstep(A& abs, C& conc, std::span<const OperationCall> trace, Glue&& glue) {
  if (!(abs.machine_type() == conc.machine_type()))
    return LockstepVerdict::failed(LockstepVerdict::Failure::TypeMismatch, 0,
                                   "machine types differ");
  detail::validate_trace(abs, trace);

  std::vector<OperationCall> full;
  if (!detail::begins_with_init(trace)) full.push_back(OperationCall{"init"});
  full.insert(full.end(), trace.begin(), trace.end());

  for (size_t i = 0; i < full.size(); ++i) {
    StepOutput oa = abs.apply(full[i]);
    StepOutput oc = conc.apply(full[i]);
    size_t step = i + 1;
    if (!(oa == oc))
      return LockstepVerdict::failed(
          LockstepVerdict::Failure::OutputMismatch, step,
          full[i].op + ": abstract=" + to_string(oa) + " concrete=" + to_string(oc));
    std::optional<std::string> g = glue(std::as_const(abs), std::as_const(conc));
    if (g)
      return LockstepVerdict::failed(LockstepVerdict::Failure::GlueViolation, step,
                                     full[i].op + ": " + *g);
  }
  return LockstepVerdict::passed();
}

}  // namespace skrefine
