#pragma once

// Condition checks R1..R5 over generated artifacts: the efficient
// algorithms used by the CLI, and a brute-force per-address oracle for
// cross-validation at small address-space bounds.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "skrefine/paging.hpp"
#include "skrefine/toolchain.hpp"

namespace skrefine {

inline constexpr uint64_t kNaiveBoundLimit = 1ULL << 25;

struct Finding {
  int condition = 0;  // 1..5
  std::string message;
  std::string subject;
  std::string component;
  std::optional<uint64_t> address;  // byte address, la, or entry index

  bool operator==(const Finding&) const = default;
};

struct ConditionStatus {
  bool pass = true;
  bool evaluated = true;
  double millis = 0.0;
};

struct ConditionReport {
  std::vector<Finding> findings;
  std::array<ConditionStatus, 5> conditions{};

  bool pass(int condition) const { return conditions[condition - 1].pass; }
  bool all_pass() const {
    for (const auto& c : conditions)
      if (!c.pass) return false;
    return true;
  }
};

namespace detail {

inline void settle_verdicts(ConditionReport& r) {
  for (int c = 1; c <= 5; ++c) r.conditions[c - 1].pass = true;
  for (const auto& f : r.findings) r.conditions[f.condition - 1].pass = false;
}

// sort-by-base sweep over half-open intervals; calls pair_fn(a, b) for every
// intersecting pair, a before b in (lo, index) order
struct IntervalRef {
  uint64_t lo = 0;
  uint64_t hi = 0;
  size_t idx = 0;
};

template <typename PairFn>
void sweep_overlaps(std::vector<IntervalRef> spans, PairFn&& pair_fn) {
  std::sort(spans.begin(), spans.end(), [](const IntervalRef& a, const IntervalRef& b) {
    return a.lo != b.lo ? a.lo < b.lo : a.idx < b.idx;
  });
  std::vector<size_t> active;  // indices into spans
  for (size_t i = 0; i < spans.size(); ++i) {
    std::erase_if(active, [&](size_t j) { return spans[j].hi <= spans[i].lo; });
    for (size_t j : active) pair_fn(spans[j], spans[i]);
    active.push_back(i);
  }
}

}  // namespace detail

inline std::vector<Finding> check_phys_overlap(const BPolicy& b) {
  std::vector<detail::IntervalRef> spans;
  for (size_t i = 0; i < b.phys.size(); ++i)
    if (b.phys[i].size > 0) spans.push_back({b.phys[i].address, b.phys[i].address + b.phys[i].size, i});
  std::vector<Finding> out;
  detail::sweep_overlaps(std::move(spans), [&](const detail::IntervalRef& a,
                                               const detail::IntervalRef& c) {
    out.push_back({1, "Illegal sharing detected.", "",
                   b.phys[a.idx].name + ", " + b.phys[c.idx].name, std::max(a.lo, c.lo)});
  });
  return out;
}

inline std::vector<Finding> check_virt_overlap(const BPolicy& b) {
  struct VEntry {
    const BSubject* s;
    const BVirtComponent* v;
  };
  std::vector<VEntry> entries;
  std::vector<detail::IntervalRef> spans;
  for (const auto& s : b.subjects)
    for (const auto& v : s.virt) {
      const PhysComponent* phys = b.phys_named(v.physical);
      if (!phys) throw std::invalid_argument("dangling physical reference '" + v.physical + "'");
      if (v.size == 0) continue;
      spans.push_back({phys->address, phys->address + v.size, entries.size()});
      entries.push_back({&s, &v});
    }
  std::vector<Finding> out;
  detail::sweep_overlaps(std::move(spans), [&](const detail::IntervalRef& a,
                                               const detail::IntervalRef& c) {
    const VEntry& A = entries[a.idx];
    const VEntry& B = entries[c.idx];
    if (A.v->channel && B.v->channel) return;      // declared sharing
    if (!A.v->rwe.w && !B.v->rwe.w) return;        // read-only sharing
    out.push_back({1, "Illegal sharing detected.", A.s->name + ", " + B.s->name,
                   A.v->logical + ", " + B.v->logical, std::max(a.lo, c.lo)});
  });
  return out;
}

inline std::vector<Finding> check_pt_match(const BPolicy& b,
                                           const std::vector<PagingStructureFile>& pts) {
  std::vector<Finding> out;
  for (size_t si = 0; si < b.subjects.size(); ++si) {
    const BSubject& s = b.subjects[si];
    for (const auto& v : s.virt) {
      const PhysComponent* phys = b.phys_named(v.physical);
      if (!phys) throw std::invalid_argument("dangling physical reference '" + v.physical + "'");
      for (uint64_t off = 0; off < v.size; off += kPageSize) {
        Walk w = walk_va(pts[si], v.la + off);
        if (w.status != Walk::Status::Mapped || w.t.pa != phys->address + off)
          out.push_back({1, "Address mismatch", s.name, v.logical, v.la + off});
      }
    }
  }
  return out;
}

inline std::vector<Finding> check_permissions(const BPolicy& b,
                                              const std::vector<PagingStructureFile>& pts) {
  std::vector<Finding> out;
  for (size_t si = 0; si < b.subjects.size(); ++si) {
    const BSubject& s = b.subjects[si];
    for (const auto& v : s.virt)
      for (uint64_t off = 0; off < v.size; off += kPageSize) {
        Walk w = walk_va(pts[si], v.la + off);
        if (w.status == Walk::Status::Mapped && w.t.perms != v.rwe)
          out.push_back({2, "Rd/Write/Exec mismatch.", s.name, v.logical, v.la + off});
      }
  }
  return out;
}

inline std::vector<Finding> check_validity(const BPolicy& b,
                                           const std::vector<PagingStructureFile>& pts) {
  std::vector<Finding> out;
  for (size_t si = 0; si < b.subjects.size(); ++si) {
    const BSubject& s = b.subjects[si];
    const PagingStructureFile& f = pts[si];
    std::vector<uint8_t> marked(f.words.size(), 0);
    for (const auto& v : s.virt)
      for (uint64_t off = 0; off < v.size; off += kPageSize) {
        Walk w = walk_va(f, v.la + off);
        for (int i = 0; i < w.depth; ++i) marked[w.touched[i]] = 1;
      }
    for (size_t i = 0; i < f.words.size(); ++i)
      if (PTEntry{f.words[i]}.present() && !marked[i])
        out.push_back({3, "Invalid Page Table Entry", s.name, "", i});
  }
  return out;
}

inline std::vector<Finding> check_content(const BPolicy& b, const Image& image,
                                          const ContentResolver& resolve) {
  std::vector<Finding> out;
  for (const auto& c : b.phys) {
    if (c.size == 0) continue;
    if (c.address + c.size > image.size()) {
      out.push_back({4, "Content mismatch", "", c.name, c.address});
      continue;
    }
    std::vector<uint8_t> want;
    try {
      want = resolve_content(c.content, c.size, resolve);
    } catch (const std::exception& e) {
      out.push_back({4, std::string("Content source unavailable: ") + e.what(), "", c.name,
                     c.address});
      continue;
    }
    for (uint64_t off = 0; off < c.size; ++off)
      if (image.bytes[c.address + off] != want[off]) {
        out.push_back({4, "Content mismatch", "", c.name, c.address + off});
        break;  // first mismatching offset per component
      }
  }
  return out;
}

inline std::vector<Finding> check_structures(const Policy& p, const ParamsConcrete& v) {
  std::vector<Finding> out;
  auto flag = [&](std::string where) {
    out.push_back({5, "Parameter structure mismatch", "", std::move(where), std::nullopt});
  };

  if (v.nsubs != p.subjects.size()) flag("nsubs");
  if (v.ncpus != p.ncpus) flag("ncpus");

  SchedDerived want = derive_sched(p);
  if (v.sched.cycle_length != want.cycle_length) flag("cycle_length");
  if (v.sched.major_frames.size() != want.major_frames.size()) {
    flag("major_frames");
  } else {
    for (size_t i = 0; i < want.major_frames.size(); ++i)
      if (v.sched.major_frames[i] != want.major_frames[i])
        flag("major_frames[" + std::to_string(i) + "]");
    for (size_t i = 0; i < want.major_frame_ends.size(); ++i)
      if (v.sched.major_frame_ends[i] != want.major_frame_ends[i])
        flag("major_frame_ends[" + std::to_string(i) + "]");
  }
  if (v.sched.sched_plans.size() != want.sched_plans.size()) {
    flag("sched_plans");
  } else {
    for (size_t c = 0; c < want.sched_plans.size(); ++c) {
      if (v.sched.sched_plans[c].size() != want.sched_plans[c].size()) {
        flag("sched_plans[" + std::to_string(c) + "]");
        continue;
      }
      for (size_t f = 0; f < want.sched_plans[c].size(); ++f) {
        if (v.sched.sched_plans[c][f].size() != want.sched_plans[c][f].size()) {
          flag("sched_plans[" + std::to_string(c) + "][" + std::to_string(f) + "]");
          continue;
        }
        for (size_t m = 0; m < want.sched_plans[c][f].size(); ++m)
          if (!(v.sched.sched_plans[c][f][m] == want.sched_plans[c][f][m]))
            flag("sched_plans[" + std::to_string(c) + "][" + std::to_string(f) + "][" +
                 std::to_string(m) + "]");
      }
    }
  }

  if (v.routing.size() != p.routing.size()) {
    flag("vector_routing");
  } else {
    for (size_t i = 0; i < p.routing.size(); ++i)
      if (!(v.routing[i] == p.routing[i])) flag("vector_routing[" + std::to_string(i) + "]");
  }

  if (v.subject_specs.size() != p.subjects.size()) {
    flag("subject_specs");
  } else {
    for (size_t i = 0; i < p.subjects.size(); ++i) {
      const Subject& s = p.subjects[i];
      const SubjectSpec& spec = v.subject_specs[i];
      std::string at = "subject_specs[" + std::to_string(i) + "]";
      if (spec.name != s.name) flag(at + ".name");
      if (spec.cpu != s.cpu) flag(at + ".cpu");
      if (spec.entry_ip != s.entry_ip) flag(at + ".ip");
      if (spec.entry_sp != s.entry_sp) flag(at + ".sp");
      if (spec.pt_id != i) flag(at + ".pt_id");
      if (spec.vmcs_id != i) flag(at + ".vmcs_id");
      if (spec.pt_file != pt_file_name(s.name)) flag(at + ".pt_file");
    }
  }

  return out;
}

inline ConditionReport check_all(const Policy& p, const BPolicy& b,
                                 const std::vector<PagingStructureFile>& pts, const Image& image,
                                 const ParamsConcrete& params, const ContentResolver& resolve) {
  if (pts.size() != b.subjects.size())
    throw std::invalid_argument("need one paging structure file per subject");
  ConditionReport r;
  auto timed = [&](int condition, auto&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Finding> fs = fn();
    r.conditions[condition - 1].millis +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.findings.insert(r.findings.end(), fs.begin(), fs.end());
  };
  timed(1, [&] { return check_phys_overlap(b); });
  timed(1, [&] { return check_virt_overlap(b); });
  timed(1, [&] { return check_pt_match(b, pts); });
  timed(2, [&] { return check_permissions(b, pts); });
  timed(3, [&] { return check_validity(b, pts); });
  timed(4, [&] { return check_content(b, image, resolve); });
  timed(5, [&] { return check_structures(p, params); });
  detail::settle_verdicts(r);
  return r;
}

// Brute-force oracle: visits every page-aligned va below `bound` in every
// subject and evaluates the injectivity sub-conditions, permissions,
// validity, and content directly. Structure matching (R5) is out of its
// scope and left unevaluated. Content is compared at the translated
// address, so verdicts coincide with check_all on consistent artifacts.
inline ConditionReport naive_check(const BPolicy& b, const std::vector<PagingStructureFile>& pts,
                                   const Image& image, uint64_t bound,
                                   const ContentResolver& resolve) {
  if (bound > kNaiveBoundLimit) throw std::invalid_argument("naive bound exceeded");
  if (pts.size() != b.subjects.size())
    throw std::invalid_argument("need one paging structure file per subject");

  ConditionReport r;
  auto t0 = std::chrono::steady_clock::now();

  // physical layout disjointness, byte by byte
  uint64_t max_end = 0;
  for (const auto& c : b.phys) max_end = std::max(max_end, c.address + c.size);
  std::vector<uint8_t> occupied(max_end, 0);
  for (const auto& c : b.phys) {
    bool flagged = false;
    for (uint64_t x = c.address; x < c.address + c.size; ++x) {
      if (occupied[x] && !flagged) {
        r.findings.push_back({1, "Illegal sharing detected.", "", c.name, x});
        flagged = true;
      }
      occupied[x] = 1;
    }
  }

  struct Mapping {
    size_t subject;
    uint64_t va;
    bool channel;
    bool writable;
    const PhysComponent* phys;
  };
  std::map<uint64_t, std::vector<Mapping>> by_frame;
  std::map<std::string, std::vector<uint8_t>> content_cache;
  std::set<std::string> content_flagged;

  for (size_t si = 0; si < b.subjects.size(); ++si) {
    const BSubject& s = b.subjects[si];
    std::vector<const BVirtComponent*> comps;
    for (const auto& v : s.virt) comps.push_back(&v);
    std::sort(comps.begin(), comps.end(),
              [](const BVirtComponent* a, const BVirtComponent* c) { return a->la < c->la; });

    std::set<std::string> r4_done;  // one content finding per component
    for (uint64_t va = 0; va < bound; va += kPageSize) {
      const BVirtComponent* owner = nullptr;
      for (const BVirtComponent* v : comps)
        if (va >= v->la && va < v->la + v->size) owner = v;
      Walk w = walk_va(pts[si], va);

      if (!owner) {
        if (w.status != Walk::Status::Unmapped)
          r.findings.push_back({3, "Invalid Page Table Entry", s.name, "", va});
        continue;
      }

      const PhysComponent* phys = b.phys_named(owner->physical);
      if (!phys) throw std::invalid_argument("dangling physical reference '" + owner->physical + "'");
      uint64_t expected = phys->address + (va - owner->la);
      if (w.status != Walk::Status::Mapped || w.t.pa != expected)
        r.findings.push_back({1, "Address mismatch", s.name, owner->logical, va});
      if (w.status != Walk::Status::Mapped) continue;

      if (w.t.perms != owner->rwe)
        r.findings.push_back({2, "Rd/Write/Exec mismatch.", s.name, owner->logical, va});

      if (!r4_done.count(owner->physical)) {
        if (w.t.pa + kPageSize > image.size()) {
          r.findings.push_back({4, "Content mismatch", s.name, owner->logical, va});
          r4_done.insert(owner->physical);
        } else {
          auto cached = content_cache.find(owner->physical);
          if (cached == content_cache.end()) {
            try {
              cached = content_cache
                           .emplace(owner->physical,
                                    resolve_content(phys->content, phys->size, resolve))
                           .first;
            } catch (const std::exception& e) {
              if (!content_flagged.count(owner->physical)) {
                r.findings.push_back({4, std::string("Content source unavailable: ") + e.what(),
                                      s.name, owner->logical, va});
                content_flagged.insert(owner->physical);
              }
              r4_done.insert(owner->physical);
            }
          }
          if (cached != content_cache.end())
            for (uint64_t i = 0; i < kPageSize; ++i)
              if (image.bytes[w.t.pa + i] != cached->second[va - owner->la + i]) {
                r.findings.push_back({4, "Content mismatch", s.name, owner->logical, va + i});
                r4_done.insert(owner->physical);
                break;
              }
        }
      }

      by_frame[w.t.pa >> kPageShift].push_back(
          {si, va, owner->channel, owner->rwe.w, phys});
    }
  }

  // injectivity over the pa -> mappings table
  for (const auto& [frame, maps] : by_frame) {
    for (size_t i = 0; i < maps.size(); ++i)
      for (size_t j = i + 1; j < maps.size(); ++j) {
        const Mapping& A = maps[i];
        const Mapping& B = maps[j];
        // same channel cell reached from both sides is declared sharing
        if (A.channel && B.channel && A.phys == B.phys) continue;
        if (!A.writable && !B.writable) continue;
        r.findings.push_back({1, "Illegal sharing detected.",
                              b.subjects[A.subject].name + ", " + b.subjects[B.subject].name, "",
                              frame << kPageShift});
      }
  }

  // one pass computes R1..R4 together; the split is not observable
  double total =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  for (int c = 1; c <= 4; ++c) r.conditions[c - 1].millis = total;
  r.conditions[4].evaluated = false;
  detail::settle_verdicts(r);
  return r;
}

inline std::string report_to_json(const ConditionReport& r) {
  nlohmann::ordered_json out;
  for (int c = 1; c <= 5; ++c) {
    nlohmann::ordered_json findings = nlohmann::ordered_json::array();
    for (const auto& f : r.findings) {
      if (f.condition != c) continue;
      nlohmann::ordered_json jf{{"message", f.message}};
      if (!f.subject.empty()) jf["subject"] = f.subject;
      if (!f.component.empty()) jf["component"] = f.component;
      if (f.address) jf["address"] = hex(*f.address);
      findings.push_back(jf);
    }
    const ConditionStatus& st = r.conditions[c - 1];
    out["r" + std::to_string(c)] = {{"pass", st.pass},
                                    {"evaluated", st.evaluated},
                                    {"millis", st.millis},
                                    {"findings", findings}};
  }
  return out.dump(2) + "\n";
}

}  // namespace skrefine
