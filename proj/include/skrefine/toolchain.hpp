#pragma once

// Desk-scale generator: lays out physical memory from a policy, emits
// page-table files and the boot image, and produces the abstract and
// concrete parameter bundles. Also hosts the fault-injection switches used
// to exercise the checker.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skrefine/paging.hpp"
#include "skrefine/policy.hpp"

namespace skrefine {

inline constexpr uint64_t kDefaultImageCap = 64ull << 20;
inline constexpr uint64_t kFirstUsableAddress = 0x1000;  // page 0 is a null guard

struct ToolchainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Image {
  std::vector<uint8_t> bytes;  // physical address = file offset

  uint64_t size() const { return bytes.size(); }
};

struct AbsVmemEntry {
  uint64_t la = 0;
  uint64_t size = 0;
  Permissions rwe;
  bool channel = false;
  uint64_t chmem_offset = 0;  // meaningful when channel
  ContentSource content;      // meaningful when !channel

  bool operator==(const AbsVmemEntry&) const = default;
};

struct AbsSubjectParams {
  std::string name;
  uint32_t cpu = 0;
  uint64_t entry_ip = 0;
  uint64_t entry_sp = 0;
  std::vector<AbsVmemEntry> vmem;

  bool operator==(const AbsSubjectParams&) const = default;
};

struct ParamsAbstract {
  uint32_t nsubs = 0;
  uint32_t ncpus = 0;
  uint64_t chmem_size = 0;
  std::vector<AbsSubjectParams> subjects;
  SchedDerived sched;
  std::vector<VectorRoutingEntry> routing;

  bool operator==(const ParamsAbstract&) const = default;
};

struct SubjectSpec {
  std::string name;
  uint32_t cpu = 0;
  uint64_t entry_ip = 0;
  uint64_t entry_sp = 0;
  uint32_t pt_id = 0;
  uint32_t vmcs_id = 0;
  uint64_t pt_base = 0;
  std::string pt_file;

  bool operator==(const SubjectSpec&) const = default;
};

struct ParamsConcrete {
  uint32_t nsubs = 0;
  uint32_t ncpus = 0;
  std::vector<SubjectSpec> subject_specs;
  SchedDerived sched;
  std::vector<VectorRoutingEntry> routing;
  std::string image_file;

  bool operator==(const ParamsConcrete&) const = default;
};

inline std::string phys_name(const std::string& subject, const std::string& logical) {
  return subject + "|" + logical;
}

inline std::string pt_file_name(const std::string& subject) { return "pts/" + subject + ".pt"; }

namespace detail {

// The three index sets that determine which paging structures a subject
// needs; ordering is ascending covered virtual range.
struct PtShape {
  std::set<uint32_t> pdpts;                                // pml4 index
  std::set<std::pair<uint32_t, uint32_t>> pds;             // (pml4, pdpt)
  std::set<std::tuple<uint32_t, uint32_t, uint32_t>> pts;  // (pml4, pdpt, pd)

  size_t structures() const { return 1 + pdpts.size() + pds.size() + pts.size(); }

  size_t pdpt_struct(uint32_t i1) const {
    return 1 + std::distance(pdpts.begin(), pdpts.find(i1));
  }
  size_t pd_struct(uint32_t i1, uint32_t i2) const {
    return 1 + pdpts.size() + std::distance(pds.begin(), pds.find({i1, i2}));
  }
  size_t pt_struct(uint32_t i1, uint32_t i2, uint32_t i3) const {
    return 1 + pdpts.size() + pds.size() + std::distance(pts.begin(), pts.find({i1, i2, i3}));
  }
};

inline PtShape pt_shape(const BSubject& s) {
  PtShape shape;
  for (const auto& v : s.virt) {
    if (v.la >= kVaLimit || v.size > kVaLimit - v.la)
      throw ToolchainError("subject '" + s.name + "' component '" + v.logical +
                           "' exceeds the 4-level paging limit");
    for (uint64_t la = v.la; la < v.la + v.size; la += kPageSize) {
      VaParts ix = split_va(la);
      shape.pdpts.insert(ix.pml4);
      shape.pds.insert({ix.pml4, ix.pdpt});
      shape.pts.insert({ix.pml4, ix.pdpt, ix.pd});
    }
  }
  return shape;
}

}  // namespace detail

inline BPolicy layout(const Policy& p, uint64_t cap = kDefaultImageCap) {
  BPolicy b;
  uint64_t cursor = kFirstUsableAddress;
  auto place = [&](std::string name, uint64_t size, ContentSource content) {
    PhysComponent c{std::move(name), cursor, size, std::move(content), 0};
    cursor += size;
    if (cursor > cap)
      throw ToolchainError("physical memory cap exceeded: need " + hex(cursor) + ", cap " +
                           hex(cap));
    b.phys.push_back(std::move(c));
    return b.phys.back().address;
  };

  // content components in (subject id, declaration order)
  for (const auto& s : p.subjects) {
    BSubject bs;
    bs.name = s.name;
    for (const auto& v : s.vmem) {
      if (v.is_channel) continue;
      place(phys_name(s.name, v.logical), v.size, v.content);
      bs.virt.push_back({v.logical, v.la, v.size, v.rwe, phys_name(s.name, v.logical), false, 0});
    }
    b.subjects.push_back(std::move(bs));
  }

  // channels, declaration order, zero-filled
  for (const auto& c : p.channels) place(c.name, c.size, ContentSource::fill_byte(0));
  for (const auto& s : p.subjects) {
    auto& bs = b.subjects[s.id];
    // attachments keep their position in the subject's declaration order
    std::vector<BVirtComponent> ordered;
    size_t private_idx = 0;
    for (const auto& v : s.vmem) {
      if (v.is_channel)
        ordered.push_back({v.logical, v.la, v.size, v.rwe, v.channel, true, 0});
      else
        ordered.push_back(bs.virt[private_idx++]);
    }
    bs.virt = std::move(ordered);
  }

  // per-subject paging structures, subject order
  for (const auto& s : p.subjects) {
    auto& bs = b.subjects[s.id];
    uint64_t size = detail::pt_shape(bs).structures() * kPageSize;
    bs.pt_base = place(phys_name(s.name, "pt"), size, ContentSource::file(pt_file_name(s.name)));
  }

  return b;
}

inline PagingStructureFile gen_page_tables(const BPolicy& b, uint32_t subject) {
  const BSubject& s = b.subjects.at(subject);
  detail::PtShape shape = detail::pt_shape(s);

  PagingStructureFile f;
  f.pt_base = s.pt_base;
  f.words.assign(shape.structures() * kEntriesPerStruct, 0);

  auto set_entry = [&](size_t struct_idx, uint32_t entry, PTEntry e) {
    uint64_t& slot = f.words[struct_idx * kEntriesPerStruct + entry];
    if (slot != 0 && slot != e.raw)
      throw ToolchainError("subject '" + s.name + "' maps one page twice with different targets");
    slot = e.raw;
  };

  for (const auto& v : s.virt) {
    const PhysComponent* phys = b.phys_named(v.physical);
    if (!phys) throw ToolchainError("dangling physical reference '" + v.physical + "'");
    if (!v.rwe.r && v.size > 0)
      throw ToolchainError("component '" + v.logical +
                           "' is unreadable yet mapped; present pages are always readable");
    for (uint64_t off = 0; off < v.size; off += kPageSize) {
      VaParts ix = split_va(v.la + off);
      size_t pdpt = shape.pdpt_struct(ix.pml4);
      size_t pd = shape.pd_struct(ix.pml4, ix.pdpt);
      size_t pt = shape.pt_struct(ix.pml4, ix.pdpt, ix.pd);
      set_entry(0, ix.pml4, encode_entry(f.pt_base + pdpt * kPageSize, true, true, false));
      set_entry(pdpt, ix.pdpt, encode_entry(f.pt_base + pd * kPageSize, true, true, false));
      set_entry(pd, ix.pd, encode_entry(f.pt_base + pt * kPageSize, true, true, false));
      set_entry(pt, ix.pt, encode_entry(phys->address + off, true, v.rwe.w, !v.rwe.x));
    }
  }

  return f;
}

inline Image build_image(const BPolicy& b, const ContentResolver& resolve,
                         uint64_t cap = kDefaultImageCap) {
  uint64_t length = 0;
  for (const auto& c : b.phys) length = std::max(length, c.address + c.size);
  if (length > cap)
    throw ToolchainError("image length " + hex(length) + " exceeds cap " + hex(cap));
  Image img;
  img.bytes.assign(length, 0);
  for (const auto& c : b.phys) {
    std::vector<uint8_t> content = resolve_content(c.content, c.size, resolve);
    std::copy(content.begin(), content.end(), img.bytes.begin() + static_cast<long>(c.address));
  }
  return img;
}

inline std::pair<ParamsAbstract, ParamsConcrete> gen_parameters(const Policy& p, const BPolicy& b) {
  ParamsAbstract u;
  ParamsConcrete v;
  u.nsubs = static_cast<uint32_t>(p.subjects.size());
  v.nsubs = u.nsubs;
  u.ncpus = p.ncpus;
  v.ncpus = p.ncpus;
  u.sched = derive_sched(p);
  v.sched = u.sched;
  u.routing = p.routing;
  v.routing = p.routing;
  v.image_file = "image.bin";

  std::map<std::string, uint64_t> chmem_offset;
  for (const auto& c : p.channels) {
    chmem_offset[c.name] = u.chmem_size;
    u.chmem_size += c.size;
  }

  for (const auto& s : p.subjects) {
    AbsSubjectParams as;
    as.name = s.name;
    as.cpu = s.cpu;
    as.entry_ip = s.entry_ip;
    as.entry_sp = s.entry_sp;
    for (const auto& m : s.vmem) {
      AbsVmemEntry e;
      e.la = m.la;
      e.size = m.size;
      e.rwe = m.rwe;
      e.channel = m.is_channel;
      if (m.is_channel)
        e.chmem_offset = chmem_offset.at(m.channel);
      else
        e.content = m.content;
      as.vmem.push_back(e);
    }
    u.subjects.push_back(std::move(as));

    const BSubject& bs = b.subjects.at(s.id);
    v.subject_specs.push_back({s.name, s.cpu, s.entry_ip, s.entry_sp, s.id, s.id, bs.pt_base,
                               pt_file_name(s.name)});
  }

  return {std::move(u), std::move(v)};
}

// ---------------------------------------------------------------- params.json

namespace detail {

using json = nlohmann::ordered_json;

inline json sched_to_json(const SchedDerived& d) {
  json plans = json::array();
  for (const auto& cpu : d.sched_plans) {
    json majors = json::array();
    for (const auto& mf : cpu) {
      json minors = json::array();
      for (const auto& m : mf) minors.push_back({{"subject", m.subject}, {"deadline", m.deadline}});
      majors.push_back(minors);
    }
    plans.push_back(majors);
  }
  return {{"sched_plans", plans},
          {"major_frames", d.major_frames},
          {"major_frame_ends", d.major_frame_ends},
          {"cycle_length", d.cycle_length}};
}

inline SchedDerived sched_from_json(const json& j) {
  SchedDerived d;
  for (const auto& cpu : j.at("sched_plans")) {
    d.sched_plans.emplace_back();
    for (const auto& mf : cpu) {
      d.sched_plans.back().emplace_back();
      for (const auto& m : mf)
        d.sched_plans.back().back().push_back(
            {m.at("subject").get<uint32_t>(), m.at("deadline").get<uint64_t>()});
    }
  }
  d.major_frames = j.at("major_frames").get<std::vector<uint64_t>>();
  d.major_frame_ends = j.at("major_frame_ends").get<std::vector<uint64_t>>();
  d.cycle_length = j.at("cycle_length").get<uint64_t>();
  return d;
}

inline json routing_to_json(const std::vector<VectorRoutingEntry>& routing) {
  json out = json::array();
  for (const auto& r : routing)
    out.push_back({{"vector", r.vector}, {"subject", r.subject}, {"dest_vector", r.dest_vector}});
  return out;
}

inline std::vector<VectorRoutingEntry> routing_from_json(const json& j) {
  std::vector<VectorRoutingEntry> out;
  for (const auto& r : j)
    out.push_back({r.at("vector").get<uint32_t>(), r.at("subject").get<uint32_t>(),
                   r.at("dest_vector").get<uint32_t>(), 0});
  return out;
}

}  // namespace detail

inline std::string params_to_json(const ParamsAbstract& u, const ParamsConcrete& v) {
  using detail::json;
  json ju;
  ju["nsubs"] = u.nsubs;
  ju["ncpus"] = u.ncpus;
  ju["chmem_size"] = u.chmem_size;
  ju["subjects"] = json::array();
  for (const auto& s : u.subjects) {
    json js{{"name", s.name},
            {"cpu", s.cpu},
            {"ip", hex(s.entry_ip)},
            {"sp", hex(s.entry_sp)},
            {"vmem", json::array()}};
    for (const auto& e : s.vmem) {
      json je{{"la", hex(e.la)}, {"size", hex(e.size)}, {"rwe", to_string(e.rwe)},
              {"channel", e.channel}};
      if (e.channel)
        je["chmem_offset"] = hex(e.chmem_offset);
      else
        je["content"] = to_string(e.content);
      js["vmem"].push_back(je);
    }
    ju["subjects"].push_back(js);
  }
  ju["sched"] = detail::sched_to_json(u.sched);
  ju["routing"] = detail::routing_to_json(u.routing);

  json jv;
  jv["nsubs"] = v.nsubs;
  jv["ncpus"] = v.ncpus;
  jv["subject_specs"] = json::array();
  for (const auto& s : v.subject_specs)
    jv["subject_specs"].push_back({{"name", s.name},
                                   {"cpu", s.cpu},
                                   {"ip", hex(s.entry_ip)},
                                   {"sp", hex(s.entry_sp)},
                                   {"pt_id", s.pt_id},
                                   {"vmcs_id", s.vmcs_id},
                                   {"pt_base", hex(s.pt_base)},
                                   {"pt_file", s.pt_file}});
  jv["sched"] = detail::sched_to_json(v.sched);
  jv["routing"] = detail::routing_to_json(v.routing);
  jv["image"] = v.image_file;

  return json{{"abstract", ju}, {"concrete", jv}}.dump(2) + "\n";
}

inline std::pair<ParamsAbstract, ParamsConcrete> params_from_json(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("params.json: ") + e.what());
  }
  try {
    const json& ju = root.at("abstract");
    ParamsAbstract u;
    u.nsubs = ju.at("nsubs").get<uint32_t>();
    u.ncpus = ju.at("ncpus").get<uint32_t>();
    u.chmem_size = ju.at("chmem_size").get<uint64_t>();
    for (const auto& js : ju.at("subjects")) {
      AbsSubjectParams s;
      s.name = js.at("name").get<std::string>();
      s.cpu = js.at("cpu").get<uint32_t>();
      s.entry_ip = require_u64(js.at("ip").get<std::string>(), "ip");
      s.entry_sp = require_u64(js.at("sp").get<std::string>(), "sp");
      for (const auto& je : js.at("vmem")) {
        AbsVmemEntry e;
        e.la = require_u64(je.at("la").get<std::string>(), "la");
        e.size = require_u64(je.at("size").get<std::string>(), "size");
        auto rwe = parse_rwe(je.at("rwe").get<std::string>());
        if (!rwe) throw ParseError("params.json: bad rwe");
        e.rwe = *rwe;
        e.channel = je.at("channel").get<bool>();
        if (e.channel) {
          e.chmem_offset = require_u64(je.at("chmem_offset").get<std::string>(), "chmem_offset");
        } else {
          auto c = parse_content_source(je.at("content").get<std::string>());
          if (!c) throw ParseError("params.json: bad content");
          e.content = *c;
        }
        s.vmem.push_back(e);
      }
      u.subjects.push_back(std::move(s));
    }
    u.sched = detail::sched_from_json(ju.at("sched"));
    u.routing = detail::routing_from_json(ju.at("routing"));

    const json& jv = root.at("concrete");
    ParamsConcrete v;
    v.nsubs = jv.at("nsubs").get<uint32_t>();
    v.ncpus = jv.at("ncpus").get<uint32_t>();
    for (const auto& js : jv.at("subject_specs"))
      v.subject_specs.push_back({js.at("name").get<std::string>(),
                                 js.at("cpu").get<uint32_t>(),
                                 require_u64(js.at("ip").get<std::string>(), "ip"),
                                 require_u64(js.at("sp").get<std::string>(), "sp"),
                                 js.at("pt_id").get<uint32_t>(),
                                 js.at("vmcs_id").get<uint32_t>(),
                                 require_u64(js.at("pt_base").get<std::string>(), "pt_base"),
                                 js.at("pt_file").get<std::string>()});
    v.sched = detail::sched_from_json(jv.at("sched"));
    v.routing = detail::routing_from_json(jv.at("routing"));
    v.image_file = jv.at("image").get<std::string>();

    return {std::move(u), std::move(v)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("params.json: ") + e.what());
  }
}

// ------------------------------------------------------------------ pipeline

struct Artifacts {
  Policy policy;
  BPolicy bpolicy;
  std::vector<PagingStructureFile> pts;  // indexed by subject id
  Image image;
  ParamsAbstract u;
  ParamsConcrete v;
};

// Serves the generated pt files from memory, everything else from `base`.
// Holds a reference: `a` must outlive the resolver.
inline ContentResolver artifact_resolver(const Artifacts& a, ContentResolver base) {
  return [&a, base = std::move(base)](const std::string& rel) -> std::vector<uint8_t> {
    for (uint32_t s = 0; s < a.policy.subjects.size(); ++s)
      if (rel == pt_file_name(a.policy.subjects[s].name)) return write_pt_file(a.pts[s]);
    return base(rel);
  };
}

// Full generation pipeline. The resolver serves the policy's file content;
// generated page tables are fed into the image internally.
inline Artifacts generate(const Policy& p, const ContentResolver& resolve,
                          uint64_t cap = kDefaultImageCap) {
  Artifacts a;
  a.policy = p;
  a.bpolicy = layout(p, cap);
  for (uint32_t s = 0; s < p.subjects.size(); ++s) {
    a.pts.push_back(gen_page_tables(a.bpolicy, s));
    uint64_t declared = a.bpolicy.phys_named(phys_name(p.subjects[s].name, "pt"))->size;
    if (a.pts.back().size_bytes() != declared)
      throw ToolchainError("paging structure size for '" + p.subjects[s].name +
                           "' does not match its layout reservation");
  }
  a.image = build_image(a.bpolicy, artifact_resolver(a, resolve), cap);
  std::tie(a.u, a.v) = gen_parameters(p, a.bpolicy);
  return a;
}

inline void write_artifacts(const Artifacts& a, const std::filesystem::path& outdir) {
  std::filesystem::create_directories(outdir / "pts");
  write_text_file(outdir / "bpolicy.xml", serialize_bpolicy(a.bpolicy));
  for (uint32_t s = 0; s < a.pts.size(); ++s)
    write_file(outdir / pt_file_name(a.policy.subjects[s].name), write_pt_file(a.pts[s]));
  write_file(outdir / "image.bin", a.image.bytes);
  write_text_file(outdir / "params.json", params_to_json(a.u, a.v));
}

// ------------------------------------------------------------ fault switches

enum class FaultKind : uint8_t {
  Overlap,     // relocate a channel onto a zero-filled component  -> R1
  ChanFlag,    // drop the channel flag on a shared attachment     -> R1
  PtAddr,      // flip one writable PT leaf to a wrong PA          -> R1
  PtPresent,   // set one spurious present bit                     -> R3
  ImageByte,   // corrupt one image byte inside a component        -> R4
  Deadline,    // perturb one concrete sched_plans deadline        -> R5
};

inline const char* to_string(FaultKind k) {
  switch (k) {
    case FaultKind::Overlap: return "overlap";
    case FaultKind::ChanFlag: return "chanflag";
    case FaultKind::PtAddr: return "ptaddr";
    case FaultKind::PtPresent: return "ptpresent";
    case FaultKind::ImageByte: return "imgbyte";
    case FaultKind::Deadline: return "deadline";
  }
  return "?";
}

inline std::optional<FaultKind> parse_fault_kind(std::string_view s) {
  for (FaultKind k : {FaultKind::Overlap, FaultKind::ChanFlag, FaultKind::PtAddr,
                      FaultKind::PtPresent, FaultKind::ImageByte, FaultKind::Deadline})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

struct FaultReport {
  FaultKind kind;
  int expected_condition;  // 1..5
  std::string description;
};

// Mutates generated artifacts to violate exactly one condition. The
// injected inconsistencies model generator bugs: artifacts stay internally
// consistent except along the intended axis.
inline FaultReport apply_fault(Artifacts& a, FaultKind kind, uint64_t seed,
                               const ContentResolver& resolve) {
  std::mt19937_64 rng(seed);
  switch (kind) {
    case FaultKind::Overlap: {
      // move a channel's physical component onto a zero-filled private one;
      // both regions are zero so only the overlap itself is inconsistent.
      // overlapping two channels would be exempt from sharing detection, and
      // a victim smaller than the channel would leak a content mismatch, so
      // the victim must be a non-channel region at least as large.
      std::string chan_name;
      for (auto& s : a.bpolicy.subjects) {
        for (auto& v : s.virt)
          if (v.channel && v.rwe.w) {
            chan_name = v.physical;
            break;
          }
        if (!chan_name.empty()) break;
      }
      if (chan_name.empty()) throw ToolchainError("overlap fault needs a writable channel");
      PhysComponent* chan = nullptr;
      for (auto& c : a.bpolicy.phys)
        if (c.name == chan_name) chan = &c;
      std::set<std::string> channel_names;
      for (auto& s : a.bpolicy.subjects)
        for (auto& v : s.virt)
          if (v.channel) channel_names.insert(v.physical);
      std::vector<const PhysComponent*> victims;
      for (const auto& c : a.bpolicy.phys)
        if (!channel_names.count(c.name) && c.content == ContentSource::fill_byte(0) &&
            c.size >= chan->size)
          victims.push_back(&c);
      if (victims.empty())
        throw ToolchainError("overlap fault needs a zero-filled component of channel size");
      const PhysComponent* victim = victims[rand_below(rng, victims.size())];
      uint64_t old = chan->address;
      chan->address = victim->address;
      // regenerate downstream artifacts from the mutated layout
      for (uint32_t s = 0; s < a.bpolicy.subjects.size(); ++s)
        a.pts[s] = gen_page_tables(a.bpolicy, s);
      a.image = build_image(a.bpolicy, artifact_resolver(a, resolve));
      std::tie(a.u, a.v) = gen_parameters(a.policy, a.bpolicy);
      return {kind, 1,
              "moved channel '" + chan->name + "' from " + hex(old) + " onto '" + victim->name +
                  "' at " + hex(victim->address)};
    }
    case FaultKind::ChanFlag: {
      std::vector<BVirtComponent*> candidates;
      for (auto& s : a.bpolicy.subjects)
        for (auto& v : s.virt)
          if (v.channel && v.rwe.w) candidates.push_back(&v);
      if (candidates.empty()) throw ToolchainError("chanflag fault needs a writable attachment");
      BVirtComponent* v = candidates[rand_below(rng, candidates.size())];
      v->channel = false;
      return {kind, 1, "dropped channel flag on attachment '" + v->logical + "' at " + hex(v->la)};
    }
    case FaultKind::PtAddr: {
      // pick a writable private page of one subject, redirect its leaf
      struct Pick { uint32_t subject; uint64_t la; };
      std::vector<Pick> picks;
      for (uint32_t si = 0; si < a.bpolicy.subjects.size(); ++si)
        for (auto& v : a.bpolicy.subjects[si].virt)
          if (!v.channel && v.rwe.w)
            for (uint64_t off = 0; off < v.size; off += kPageSize)
              picks.push_back({si, v.la + off});
      if (picks.empty()) throw ToolchainError("ptaddr fault needs a writable private page");
      Pick pick = picks[rand_below(rng, picks.size())];
      // victim: a mapped page of a different subject, else unmapped space
      uint64_t target = 0;
      bool found = false;
      for (uint32_t si = 0; si < a.bpolicy.subjects.size() && !found; ++si) {
        if (si == pick.subject) continue;
        for (auto& v : a.bpolicy.subjects[si].virt) {
          if (v.channel) continue;
          target = a.bpolicy.phys_named(v.physical)->address;
          found = true;
          break;
        }
      }
      if (!found) {
        auto t = translate(a.pts[pick.subject], pick.la);
        target = t->pa + 0x1000;  // single subject: point into free space
      }
      PagingStructureFile& f = a.pts[pick.subject];
      Walk w = walk_va(f, pick.la);
      if (w.status != Walk::Status::Mapped) throw ToolchainError("ptaddr fault walk failed");
      size_t leaf = w.touched[3];
      PTEntry old = decode_entry(f.words[leaf]);
      uint64_t raw = (old.raw & ~kPtAddrMask) | (target & kPtAddrMask);
      f.words[leaf] = raw;
      // keep the image's copy of the paging structures consistent
      uint64_t img_off = f.pt_base + leaf * 8;
      for (int i = 0; i < 8; ++i)
        a.image.bytes[img_off + i] = static_cast<uint8_t>(raw >> (8 * i));
      return {kind, 1,
              "redirected leaf for la " + hex(pick.la) + " of subject " +
                  std::to_string(pick.subject) + " from " + hex(old.addr()) + " to " + hex(target)};
    }
    case FaultKind::PtPresent: {
      // spurious present leaf in an unused last-level slot
      uint32_t subject = static_cast<uint32_t>(rand_below(rng, a.pts.size()));
      PagingStructureFile& f = a.pts[subject];
      // find a leaf structure: walk any mapped page; fall back to the PML4
      size_t target_word = SIZE_MAX;
      for (auto& v : a.bpolicy.subjects[subject].virt) {
        Walk w = walk_va(f, v.la);
        if (w.status == Walk::Status::Mapped) {
          size_t pt_struct = w.touched[3] / kEntriesPerStruct;
          for (size_t e = 0; e < kEntriesPerStruct; ++e)
            if (f.words[pt_struct * kEntriesPerStruct + e] == 0) {
              target_word = pt_struct * kEntriesPerStruct + e;
              break;
            }
        }
        if (target_word != SIZE_MAX) break;
      }
      if (target_word == SIZE_MAX) {
        for (size_t e = 0; e < kEntriesPerStruct && target_word == SIZE_MAX; ++e)
          if (f.words[e] == 0) target_word = e;  // empty subject: a PML4 slot
      }
      if (target_word == SIZE_MAX) throw ToolchainError("ptpresent fault found no free slot");
      uint64_t raw = 1;  // present, target 0
      f.words[target_word] = raw;
      uint64_t img_off = f.pt_base + target_word * 8;
      for (int i = 0; i < 8; ++i)
        a.image.bytes[img_off + i] = static_cast<uint8_t>(raw >> (8 * i));
      return {kind, 3,
              "set spurious present bit at word " + std::to_string(target_word) + " of subject " +
                  std::to_string(subject) + "'s paging structures"};
    }
    case FaultKind::ImageByte: {
      std::vector<const PhysComponent*> nonempty;
      for (const auto& c : a.bpolicy.phys)
        if (c.size > 0) nonempty.push_back(&c);
      if (nonempty.empty()) throw ToolchainError("imgbyte fault needs a nonempty component");
      const PhysComponent& c = *nonempty[rand_below(rng, nonempty.size())];
      uint64_t off = c.address + rand_below(rng, c.size);
      a.image.bytes[off] ^= 0xff;
      return {kind, 4, "corrupted image byte at " + hex(off) + " inside '" + c.name + "'"};
    }
    case FaultKind::Deadline: {
      uint32_t cpu = static_cast<uint32_t>(rand_below(rng, a.v.sched.sched_plans.size()));
      auto& majors = a.v.sched.sched_plans[cpu];
      uint32_t mf = static_cast<uint32_t>(rand_below(rng, majors.size()));
      auto& minors = majors[mf];
      uint32_t m = static_cast<uint32_t>(rand_below(rng, minors.size()));
      minors[m].deadline += 1;
      return {kind, 5,
              "perturbed deadline of cpu " + std::to_string(cpu) + " major " + std::to_string(mf) +
                  " minor " + std::to_string(m)};
    }
  }
  throw ToolchainError("unknown fault kind");
}

}  // namespace skrefine
