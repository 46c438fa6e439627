#pragma once

// Worked example: a pair of machines maintaining a set of numbers below
// Usize. The abstract machine stores membership directly; the concrete one
// stores it through a translation table T, so element x lives at slot T[x].
// They are glued by  forall x: S[T[x]] = absS[x], which holds for every
// trace exactly when the parameter condition (equal sizes, T injective)
// does.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "skrefine/step.hpp"

namespace skrefine {

struct SetParams {
  uint64_t usize = 0;
  std::vector<uint64_t> t;  // slot table, one entry per element
};

struct AbsSetParams {
  uint64_t usize = 0;
};

namespace detail {
inline MachineType set_machine_type(uint64_t usize) {
  std::string univ = "univ:" + std::to_string(usize);
  return MachineType{"set",
                     {OpSig{"init", "", "ok"},
                      OpSig{"add", univ, "ok"},
                      OpSig{"elem", univ, "bool"}}};
}
}  // namespace detail

class SetMachine {
 public:
  explicit SetMachine(SetParams p) : p_(std::move(p)), s_(p_.usize, false) {
    if (p_.t.size() != p_.usize) throw std::invalid_argument("T size != Usize");
    for (uint64_t slot : p_.t)
      if (slot >= p_.usize) throw std::invalid_argument("T entry out of range");
  }

  MachineType machine_type() const { return detail::set_machine_type(p_.usize); }

  bool in_domain(const OperationCall& c) const {
    if (c.op == "init") return true;
    return c.value < p_.usize;
  }

  StepOutput apply(const OperationCall& c) {
    if (c.op == "init") {
      s_.assign(p_.usize, false);
      return StepOutput::ok();
    }
    if (c.op == "add") {
      s_[p_.t[c.value]] = true;
      return StepOutput::ok();
    }
    if (c.op == "elem") return StepOutput::boolean(s_[p_.t[c.value]]);
    throw std::invalid_argument("unknown set op " + c.op);
  }

  const std::vector<bool>& slots() const { return s_; }
  const SetParams& params() const { return p_; }

 private:
  SetParams p_;
  std::vector<bool> s_;
};

class AbsSetMachine {
 public:
  explicit AbsSetMachine(AbsSetParams p) : p_(p), s_(p_.usize, false) {}

  MachineType machine_type() const { return detail::set_machine_type(p_.usize); }

  bool in_domain(const OperationCall& c) const {
    if (c.op == "init") return true;
    return c.value < p_.usize;
  }

  StepOutput apply(const OperationCall& c) {
    if (c.op == "init") {
      s_.assign(p_.usize, false);
      return StepOutput::ok();
    }
    if (c.op == "add") {
      s_[c.value] = true;
      return StepOutput::ok();
    }
    if (c.op == "elem") return StepOutput::boolean(s_[c.value]);
    throw std::invalid_argument("unknown set op " + c.op);
  }

  const std::vector<bool>& members() const { return s_; }
  const AbsSetParams& params() const { return p_; }

 private:
  AbsSetParams p_;
  std::vector<bool> s_;
};

// The parameter condition sufficient for refinement: equal universe sizes
// and an injective, in-range slot table.
inline bool check_set_condition(const SetParams& v, const AbsSetParams& u) {
  if (v.usize != u.usize) return false;
  if (v.t.size() != v.usize) return false;
  std::vector<bool> seen(v.usize, false);
  for (uint64_t slot : v.t) {
    if (slot >= v.usize) return false;
    if (seen[slot]) return false;
    seen[slot] = true;
  }
  return true;
}

// Gluing relation for the pair: S[T[x]] = absS[x] for all x.
inline std::optional<std::string> set_glue(const AbsSetMachine& a, const SetMachine& c) {
  if (a.params().usize != c.params().usize) return "universe sizes differ";
  for (uint64_t x = 0; x < a.params().usize; ++x)
    if (c.slots()[c.params().t[x]] != a.members()[x])
      return "S[T[" + std::to_string(x) + "]] != absS[" + std::to_string(x) + "]";
  return std::nullopt;
}

}  // namespace skrefine
