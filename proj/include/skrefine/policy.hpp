#pragma once

// Input policy and B-policy: parsing, validation, serialization, and the
// derived scheduling structures shared by the toolchain, the checker, and
// both machines. All addresses in the textual formats are 0x-prefixed hex.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skrefine/paging.hpp"
#include "skrefine/xml.hpp"

namespace skrefine {

inline constexpr uint64_t kMaxMinorTicks = (1ULL << 32) - 1;

struct ContentSource {
  enum class Kind : uint8_t { Fill, File };
  Kind kind = Kind::Fill;
  uint8_t fill = 0;
  std::string path;

  bool operator==(const ContentSource&) const = default;

  static ContentSource fill_byte(uint8_t b) { return {Kind::Fill, b, {}}; }
  static ContentSource file(std::string p) { return {Kind::File, 0, std::move(p)}; }
};

inline std::string to_string(const ContentSource& c) {
  if (c.kind == ContentSource::Kind::File) return "file:" + c.path;
  char buf[3];
  static const char* digits = "0123456789abcdef";
  buf[0] = digits[c.fill >> 4];
  buf[1] = digits[c.fill & 15];
  buf[2] = 0;
  return std::string("fill:0x") + buf;
}

inline std::optional<ContentSource> parse_content_source(std::string_view s) {
  if (s.rfind("file:", 0) == 0) {
    auto path = s.substr(5);
    if (path.empty()) return std::nullopt;
    return ContentSource::file(std::string(path));
  }
  if (s.rfind("fill:", 0) == 0) {
    auto v = parse_u64(s.substr(5));
    if (!v || *v > 0xff) return std::nullopt;
    return ContentSource::fill_byte(static_cast<uint8_t>(*v));
  }
  return std::nullopt;
}

// Maps a file: content path to its bytes. Callers decide where content
// lives (a directory on disk, generated buffers, test fixtures).
using ContentResolver = std::function<std::vector<uint8_t>(const std::string&)>;

inline ContentResolver dir_resolver(std::filesystem::path base) {
  return [base = std::move(base)](const std::string& rel) { return read_file(base / rel); };
}

inline std::vector<uint8_t> resolve_content(const ContentSource& c, uint64_t size,
                                            const ContentResolver& resolve) {
  if (c.kind == ContentSource::Kind::Fill) return std::vector<uint8_t>(size, c.fill);
  std::vector<uint8_t> bytes = resolve(c.path);
  if (bytes.size() > size)
    throw IoError("content '" + c.path + "' (" + std::to_string(bytes.size()) +
                  " bytes) larger than its component (" + std::to_string(size) + ")");
  bytes.resize(size, 0);  // zero-padded
  return bytes;
}

// One entry of a subject's virtual memory: either a private component with
// a content source, or an attachment of a named channel.
struct VirtComponentSpec {
  std::string logical;
  uint64_t la = 0;
  uint64_t size = 0;
  Permissions rwe;
  ContentSource content;
  bool is_channel = false;
  std::string channel;  // channel name when is_channel
  int line = 0;

  bool operator==(const VirtComponentSpec& o) const {
    return logical == o.logical && la == o.la && size == o.size && rwe == o.rwe &&
           content == o.content && is_channel == o.is_channel && channel == o.channel;
  }
};

struct Subject {
  std::string name;
  uint32_t id = 0;  // dense, declaration order
  uint32_t cpu = 0;
  uint64_t entry_ip = 0;
  uint64_t entry_sp = 0;
  std::vector<VirtComponentSpec> vmem;
  int line = 0;

  bool operator==(const Subject& o) const {
    return name == o.name && id == o.id && cpu == o.cpu && entry_ip == o.entry_ip &&
           entry_sp == o.entry_sp && vmem == o.vmem;
  }
};

struct ChannelAttachment {
  uint32_t subject = 0;
  uint64_t la = 0;
  bool writable = false;
  int line = 0;

  bool operator==(const ChannelAttachment& o) const {
    return subject == o.subject && la == o.la && writable == o.writable;
  }
};

struct ChannelSpec {
  std::string name;
  uint64_t size = 0;
  std::vector<ChannelAttachment> attachments;
  int line = 0;

  bool operator==(const ChannelSpec& o) const {
    return name == o.name && size == o.size && attachments == o.attachments;
  }
};

struct MinorFrameSpec {
  uint32_t subject = 0;
  uint64_t ticks = 0;
  int line = 0;

  bool operator==(const MinorFrameSpec& o) const {
    return subject == o.subject && ticks == o.ticks;
  }
};

struct MajorFrameSpec {
  std::vector<std::vector<MinorFrameSpec>> per_cpu;  // indexed by cpu id
  int line = 0;

  bool operator==(const MajorFrameSpec& o) const { return per_cpu == o.per_cpu; }
};

struct VectorRoutingEntry {
  uint32_t vector = 0;       // source, 0..255
  uint32_t subject = 0;      // destination subject id
  uint32_t dest_vector = 0;  // 0..63
  int line = 0;

  bool operator==(const VectorRoutingEntry& o) const {
    return vector == o.vector && subject == o.subject && dest_vector == o.dest_vector;
  }
};

struct Policy {
  uint64_t tick_rate = 0;
  uint32_t ncpus = 0;
  std::vector<Subject> subjects;
  std::vector<ChannelSpec> channels;
  std::vector<MajorFrameSpec> schedule;
  std::vector<VectorRoutingEntry> routing;

  bool operator==(const Policy&) const = default;

  const Subject* subject_named(std::string_view n) const {
    for (auto& s : subjects)
      if (s.name == n) return &s;
    return nullptr;
  }
  const ChannelSpec* channel_named(std::string_view n) const {
    for (auto& c : channels)
      if (c.name == n) return &c;
    return nullptr;
  }
};

struct MinorFrame {
  uint32_t subject = 0;
  uint64_t deadline = 0;  // cumulative ticks from major frame start

  bool operator==(const MinorFrame&) const = default;
};

struct SchedDerived {
  std::vector<std::vector<std::vector<MinorFrame>>> sched_plans;  // [cpu][major][minor]
  std::vector<uint64_t> major_frames;      // per-frame length in ticks
  std::vector<uint64_t> major_frame_ends;  // cumulative
  uint64_t cycle_length = 0;

  bool operator==(const SchedDerived&) const = default;

  uint64_t end_before(size_t major) const {  // ends(major-1), 0 for the first frame
    return major == 0 ? 0 : major_frame_ends[major - 1];
  }
};

struct PhysComponent {
  std::string name;
  uint64_t address = 0;
  uint64_t size = 0;
  ContentSource content;
  int line = 0;

  bool operator==(const PhysComponent& o) const {
    return name == o.name && address == o.address && size == o.size && content == o.content;
  }
};

struct BVirtComponent {
  std::string logical;
  uint64_t la = 0;
  uint64_t size = 0;
  Permissions rwe;
  std::string physical;
  bool channel = false;
  int line = 0;

  bool operator==(const BVirtComponent& o) const {
    return logical == o.logical && la == o.la && size == o.size && rwe == o.rwe &&
           physical == o.physical && channel == o.channel;
  }
};

struct BSubject {
  std::string name;
  uint64_t pt_base = 0;
  std::vector<BVirtComponent> virt;
  int line = 0;

  bool operator==(const BSubject& o) const {
    return name == o.name && pt_base == o.pt_base && virt == o.virt;
  }
};

struct BPolicy {
  std::vector<PhysComponent> phys;
  std::vector<BSubject> subjects;

  bool operator==(const BPolicy&) const = default;

  const PhysComponent* phys_named(std::string_view n) const {
    for (auto& c : phys)
      if (c.name == n) return &c;
    return nullptr;
  }
};

namespace detail {

inline uint64_t attr_u64(const XmlNode& n, std::string_view key) {
  return require_u64(n.require_attr(key), "<" + n.name + "> " + std::string(key), n.line);
}

inline bool attr_bool(const XmlNode& n, std::string_view key) {
  const std::string& v = n.require_attr(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ParseError("<" + n.name + "> " + std::string(key) + " must be 'true' or 'false'", n.line);
}

inline Permissions attr_rwe(const XmlNode& n) {
  const std::string& v = n.require_attr("rwe");
  auto p = parse_rwe(v);
  if (!p) throw ParseError("bad rwe '" + v + "'", n.line);
  return *p;
}

inline void reject_unknown_children(const XmlNode& n, std::initializer_list<std::string_view> allowed) {
  for (auto& c : n.children) {
    bool ok = false;
    for (auto a : allowed)
      if (c.name == a) ok = true;
    if (!ok) throw ParseError("unexpected element <" + c.name + "> inside <" + n.name + ">", c.line);
  }
}

}  // namespace detail

inline Policy parse_policy(std::string_view xml_text) {
  using namespace detail;
  XmlNode root = xml_parse(xml_text);
  if (root.name != "system") throw ParseError("root element must be <system>", root.line);
  reject_unknown_children(root, {"subject", "channels", "scheduling", "routing"});

  Policy p;
  p.tick_rate = attr_u64(root, "tick_rate");
  p.ncpus = static_cast<uint32_t>(attr_u64(root, "ncpus"));

  // channels first: subjects resolve channel_ref names against them
  if (auto* chs = root.child("channels")) {
    reject_unknown_children(*chs, {"channel"});
    for (auto* ch : chs->children_named("channel")) {
      ChannelSpec c;
      c.name = ch->require_attr("name");
      c.size = attr_u64(*ch, "size");
      c.line = ch->line;
      if (p.channel_named(c.name)) throw ParseError("duplicate channel name '" + c.name + "'", ch->line);
      p.channels.push_back(std::move(c));
    }
  }

  for (auto* sn : root.children_named("subject")) {
    Subject s;
    s.name = sn->require_attr("name");
    s.id = static_cast<uint32_t>(p.subjects.size());
    s.cpu = static_cast<uint32_t>(attr_u64(*sn, "cpu"));
    s.entry_ip = attr_u64(*sn, "ip");
    s.entry_sp = attr_u64(*sn, "sp");
    s.line = sn->line;
    if (p.subject_named(s.name)) throw ParseError("duplicate subject name '" + s.name + "'", sn->line);
    reject_unknown_children(*sn, {"memory", "channel_ref"});
    for (auto& child : sn->children) {
      VirtComponentSpec v;
      v.line = child.line;
      if (child.name == "memory") {
        v.logical = child.require_attr("logical");
        v.la = attr_u64(child, "virtual_address");
        v.size = attr_u64(child, "size");
        v.rwe = attr_rwe(child);
        auto cs = parse_content_source(child.require_attr("content"));
        if (!cs) throw ParseError("bad content '" + child.require_attr("content") + "'", child.line);
        v.content = *cs;
      } else {  // channel_ref
        std::string cname = child.require_attr("name");
        ChannelSpec* ch = nullptr;
        for (auto& c : p.channels)
          if (c.name == cname) ch = &c;
        if (!ch) throw ParseError("channel_ref to unknown channel '" + cname + "'", child.line);
        v.logical = cname;
        v.la = attr_u64(child, "virtual_address");
        v.size = ch->size;
        bool writable = attr_bool(child, "writable");
        v.rwe = Permissions{true, writable, false};
        v.is_channel = true;
        v.channel = cname;
        ch->attachments.push_back({s.id, v.la, writable, child.line});
      }
      s.vmem.push_back(std::move(v));
    }
    p.subjects.push_back(std::move(s));
  }

  const XmlNode* sched = root.child("scheduling");
  if (!sched) throw ParseError("missing <scheduling>", root.line);
  if (auto* tr = sched->attr("tick_rate")) {
    if (require_u64(*tr, "tick_rate", sched->line) != p.tick_rate)
      throw ParseError("<scheduling> tick_rate disagrees with <system>", sched->line);
  }
  reject_unknown_children(*sched, {"major_frame"});
  auto frames = sched->children_named("major_frame");
  if (frames.empty()) throw ParseError("no major frames", sched->line);
  for (auto* mf : frames) {
    MajorFrameSpec spec;
    spec.line = mf->line;
    spec.per_cpu.resize(p.ncpus);
    reject_unknown_children(*mf, {"cpu"});
    std::set<uint64_t> seen;
    for (auto* cpu : mf->children_named("cpu")) {
      uint64_t id = attr_u64(*cpu, "id");
      if (id >= p.ncpus) throw ParseError("cpu id " + std::to_string(id) + " out of range", cpu->line);
      if (!seen.insert(id).second)
        throw ParseError("duplicate cpu " + std::to_string(id) + " in major frame", cpu->line);
      reject_unknown_children(*cpu, {"minor_fr"});
      for (auto* mfr : cpu->children_named("minor_fr")) {
        uint64_t sub_id = attr_u64(*mfr, "sub_id");  // 1-based in the XML
        if (sub_id < 1 || sub_id > p.subjects.size())
          throw ParseError("minor frame references unknown subject id " + std::to_string(sub_id),
                           mfr->line);
        spec.per_cpu[id].push_back(
            {static_cast<uint32_t>(sub_id - 1), attr_u64(*mfr, "ticks"), mfr->line});
      }
    }
    p.schedule.push_back(std::move(spec));
  }

  if (auto* routing = root.child("routing")) {
    reject_unknown_children(*routing, {"irq"});
    for (auto* irq : routing->children_named("irq")) {
      VectorRoutingEntry e;
      e.vector = static_cast<uint32_t>(attr_u64(*irq, "vector"));
      std::string sname = irq->require_attr("subject");
      const Subject* s = p.subject_named(sname);
      if (!s) throw ParseError("routing to unknown subject '" + sname + "'", irq->line);
      e.subject = s->id;
      e.dest_vector = static_cast<uint32_t>(attr_u64(*irq, "dest_vector"));
      e.line = irq->line;
      p.routing.push_back(e);
    }
  }

  return p;
}

inline std::vector<Diagnostic> validate_policy(const Policy& p) {
  std::vector<Diagnostic> out;
  auto flag = [&](std::string msg, int line = 0) { out.push_back({std::move(msg), line}); };

  if (p.ncpus == 0) flag("ncpus must be positive");
  if (p.tick_rate == 0) flag("tick_rate must be positive");

  std::set<std::string> names;
  for (auto& s : p.subjects) {
    if (!names.insert(s.name).second) flag("duplicate subject name '" + s.name + "'", s.line);
    if (s.cpu >= p.ncpus) flag("subject '" + s.name + "' cpu out of range", s.line);
    for (auto& v : s.vmem) {
      if (v.la % kPageSize || v.size % kPageSize || v.size == 0)
        flag("component '" + v.logical + "' of subject '" + s.name + "' not page-aligned", v.line);
      if (v.la >= kVaLimit || v.size > kVaLimit - v.la)
        flag("component '" + v.logical + "' of subject '" + s.name + "' beyond canonical range",
             v.line);
    }
    for (size_t i = 0; i < s.vmem.size(); ++i)
      for (size_t j = i + 1; j < s.vmem.size(); ++j) {
        const auto& a = s.vmem[i];
        const auto& b = s.vmem[j];
        if (a.la < b.la + b.size && b.la < a.la + a.size)
          flag("components '" + a.logical + "' and '" + b.logical + "' of subject '" + s.name +
                   "' overlap in virtual memory",
               b.line);
      }
  }

  std::set<std::string> chnames;
  for (auto& c : p.channels) {
    if (!chnames.insert(c.name).second) flag("duplicate channel name '" + c.name + "'", c.line);
    if (c.size % kPageSize || c.size == 0)
      flag("channel '" + c.name + "' size not page-aligned", c.line);
    if (c.attachments.size() < 2)
      flag("channel '" + c.name + "' needs at least 2 attachments", c.line);
    for (auto& a : c.attachments)
      if (a.subject >= p.subjects.size())
        flag("channel '" + c.name + "' attached to unknown subject", a.line);
  }

  if (p.schedule.empty()) flag("no major frames");
  for (size_t f = 0; f < p.schedule.size(); ++f) {
    const auto& mf = p.schedule[f];
    if (mf.per_cpu.size() != p.ncpus) {
      flag("major frame " + std::to_string(f) + " does not cover all cpus", mf.line);
      continue;
    }
    std::vector<uint64_t> totals(p.ncpus, 0);
    for (uint32_t cpu = 0; cpu < p.ncpus; ++cpu) {
      if (mf.per_cpu[cpu].empty())
        flag("major frame " + std::to_string(f) + " missing cpu " + std::to_string(cpu), mf.line);
      for (auto& m : mf.per_cpu[cpu]) {
        if (m.ticks == 0 || m.ticks > kMaxMinorTicks) flag("ticks out of range", m.line);
        if (m.subject >= p.subjects.size())
          flag("minor frame references unknown subject", m.line);
        else if (p.subjects[m.subject].cpu != cpu)
          flag("minor frame subject '" + p.subjects[m.subject].name + "' not on cpu " +
                   std::to_string(cpu),
               m.line);
        totals[cpu] += m.ticks;
      }
    }
    for (uint32_t cpu = 1; cpu < p.ncpus; ++cpu)
      if (totals[cpu] != totals[0]) {
        flag("major frame length mismatch in frame " + std::to_string(f), mf.line);
        break;
      }
  }

  std::set<uint32_t> vectors;
  for (auto& r : p.routing) {
    if (!vectors.insert(r.vector).second)
      flag("duplicate routing vector " + std::to_string(r.vector), r.line);
    if (r.vector > 255) flag("routing vector out of range", r.line);
    if (r.dest_vector > 63) flag("dest vector out of range", r.line);
    if (r.subject >= p.subjects.size()) flag("routing to unknown subject", r.line);
  }

  return out;
}

inline SchedDerived derive_sched(const Policy& p) {
  SchedDerived d;
  d.sched_plans.assign(p.ncpus, {});
  for (uint32_t cpu = 0; cpu < p.ncpus; ++cpu) d.sched_plans[cpu].resize(p.schedule.size());
  for (size_t f = 0; f < p.schedule.size(); ++f) {
    uint64_t length = 0;
    for (uint32_t cpu = 0; cpu < p.ncpus; ++cpu) {
      uint64_t acc = 0;
      for (auto& m : p.schedule[f].per_cpu[cpu]) {
        acc += m.ticks;
        d.sched_plans[cpu][f].push_back({m.subject, acc});
      }
      length = acc;  // equal across cpus for a validated policy
    }
    d.major_frames.push_back(length);
    d.major_frame_ends.push_back((f ? d.major_frame_ends.back() : 0) + length);
  }
  d.cycle_length = d.major_frame_ends.back();
  return d;
}

inline BPolicy parse_bpolicy(std::string_view xml_text) {
  using namespace detail;
  XmlNode root = xml_parse(xml_text);
  if (root.name != "bpolicy") throw ParseError("root element must be <bpolicy>", root.line);
  reject_unknown_children(root, {"physical", "subject"});

  BPolicy b;
  for (auto* pn : root.children_named("physical")) {
    PhysComponent c;
    c.name = pn->require_attr("name");
    c.address = attr_u64(*pn, "address");
    c.size = attr_u64(*pn, "size");
    auto cs = parse_content_source(pn->require_attr("content"));
    if (!cs) throw ParseError("bad content '" + pn->require_attr("content") + "'", pn->line);
    c.content = *cs;
    c.line = pn->line;
    if (b.phys_named(c.name)) throw ParseError("duplicate physical name '" + c.name + "'", pn->line);
    if (c.address % kPageSize || c.size % kPageSize || c.size == 0)
      throw ParseError("physical component '" + c.name + "' not page-aligned", pn->line);
    b.phys.push_back(std::move(c));
  }

  for (auto* sn : root.children_named("subject")) {
    BSubject s;
    s.name = sn->require_attr("name");
    s.pt_base = attr_u64(*sn, "pt_base");
    s.line = sn->line;
    reject_unknown_children(*sn, {"virt"});
    for (auto* vn : sn->children_named("virt")) {
      BVirtComponent v;
      v.logical = vn->require_attr("logical");
      v.la = attr_u64(*vn, "virtual_address");
      v.size = attr_u64(*vn, "size");
      v.rwe = attr_rwe(*vn);
      v.physical = vn->require_attr("physical");
      v.channel = attr_bool(*vn, "channel");
      v.line = vn->line;
      const PhysComponent* phys = b.phys_named(v.physical);
      if (!phys)
        throw ParseError("virt component '" + v.logical + "' references unknown physical '" +
                             v.physical + "'",
                         vn->line);
      if (phys->size != v.size)
        throw ParseError("virt component '" + v.logical + "' size " + hex(v.size) +
                             " != physical '" + v.physical + "' size " + hex(phys->size),
                         vn->line);
      s.virt.push_back(std::move(v));
    }
    b.subjects.push_back(std::move(s));
  }

  return b;
}

inline std::string serialize_policy(const Policy& p) {
  std::ostringstream o;
  o << "<?xml version=\"1.0\"?>\n";
  o << "<system tick_rate=\"" << p.tick_rate << "\" ncpus=\"" << p.ncpus << "\">\n";
  for (auto& s : p.subjects) {
    o << "  <subject name=\"" << xml_escape(s.name) << "\" cpu=\"" << s.cpu << "\" ip=\""
      << hex(s.entry_ip) << "\" sp=\"" << hex(s.entry_sp) << "\">\n";
    for (auto& v : s.vmem) {
      if (v.is_channel) {
        o << "    <channel_ref name=\"" << xml_escape(v.channel) << "\" virtual_address=\""
          << hex(v.la) << "\" writable=\"" << (v.rwe.w ? "true" : "false") << "\"/>\n";
      } else {
        o << "    <memory logical=\"" << xml_escape(v.logical) << "\" virtual_address=\""
          << hex(v.la) << "\" size=\"" << hex(v.size) << "\" rwe=\"" << to_string(v.rwe)
          << "\" content=\"" << xml_escape(to_string(v.content)) << "\"/>\n";
      }
    }
    o << "  </subject>\n";
  }
  o << "  <channels>\n";
  for (auto& c : p.channels)
    o << "    <channel name=\"" << xml_escape(c.name) << "\" size=\"" << hex(c.size) << "\"/>\n";
  o << "  </channels>\n";
  o << "  <scheduling>\n";
  for (auto& mf : p.schedule) {
    o << "    <major_frame>\n";
    for (size_t cpu = 0; cpu < mf.per_cpu.size(); ++cpu) {
      o << "      <cpu id=\"" << cpu << "\">\n";
      for (auto& m : mf.per_cpu[cpu])
        o << "        <minor_fr sub_id=\"" << m.subject + 1 << "\" ticks=\"" << m.ticks << "\"/>\n";
      o << "      </cpu>\n";
    }
    o << "    </major_frame>\n";
  }
  o << "  </scheduling>\n";
  if (!p.routing.empty()) {
    o << "  <routing>\n";
    for (auto& r : p.routing)
      o << "    <irq vector=\"" << r.vector << "\" subject=\""
        << xml_escape(p.subjects[r.subject].name) << "\" dest_vector=\"" << r.dest_vector
        << "\"/>\n";
    o << "  </routing>\n";
  }
  o << "</system>\n";
  return o.str();
}

inline std::string serialize_bpolicy(const BPolicy& b) {
  std::ostringstream o;
  o << "<?xml version=\"1.0\"?>\n";
  o << "<bpolicy>\n";
  for (auto& c : b.phys)
    o << "  <physical name=\"" << xml_escape(c.name) << "\" address=\"" << hex(c.address)
      << "\" size=\"" << hex(c.size) << "\" content=\"" << xml_escape(to_string(c.content))
      << "\"/>\n";
  for (auto& s : b.subjects) {
    o << "  <subject name=\"" << xml_escape(s.name) << "\" pt_base=\"" << hex(s.pt_base) << "\">\n";
    for (auto& v : s.virt)
      o << "    <virt logical=\"" << xml_escape(v.logical) << "\" virtual_address=\"" << hex(v.la)
        << "\" size=\"" << hex(v.size) << "\" rwe=\"" << to_string(v.rwe) << "\" physical=\""
        << xml_escape(v.physical) << "\" channel=\"" << (v.channel ? "true" : "false") << "\"/>\n";
    o << "  </subject>\n";
  }
  o << "</bpolicy>\n";
  return o.str();
}

}  // namespace skrefine
