#pragma once

// x86-64 four-level paging: entry codec, address split, translation walk,
// and the binary page-table file format. Files hold raw little-endian
// 64-bit words in 4096-byte structures, level order PML4, PDPT*, PD*, PT*.
// Only 4 KiB leaf pages exist; the subject table models the composed
// guest+host translation as a single stage.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skrefine/common.hpp"

namespace skrefine {

inline constexpr uint64_t kPtAddrMask = 0x000F'FFFF'FFFF'F000ULL;  // bits 12..51
inline constexpr size_t kEntriesPerStruct = 512;

struct Permissions {
  bool r = false;
  bool w = false;
  bool x = false;

  bool operator==(const Permissions&) const = default;
};

inline std::string to_string(const Permissions& p) {
  return std::string{p.r ? 'r' : '-', p.w ? 'w' : '-', p.x ? 'x' : '-'};
}

// "rwe" strings as written in policies: exactly three chars from {r,-}{w,-}{x,-}.
inline std::optional<Permissions> parse_rwe(std::string_view s) {
  if (s.size() != 3) return std::nullopt;
  Permissions p;
  if (s[0] == 'r') p.r = true;
  else if (s[0] != '-') return std::nullopt;
  if (s[1] == 'w') p.w = true;
  else if (s[1] != '-') return std::nullopt;
  if (s[2] == 'x') p.x = true;
  else if (s[2] != '-') return std::nullopt;
  if (p.w && !p.r) return std::nullopt;  // w implies r
  return p;
}

struct VaParts {
  uint32_t pml4 = 0, pdpt = 0, pd = 0, pt = 0, offset = 0;

  bool operator==(const VaParts&) const = default;
  uint32_t index(int level) const {
    switch (level) {
      case 0: return pml4;
      case 1: return pdpt;
      case 2: return pd;
      default: return pt;
    }
  }
};

inline VaParts split_va(uint64_t va) {
  if (va >= kVaLimit) throw std::domain_error("non-canonical virtual address " + hex(va));
  return VaParts{
      static_cast<uint32_t>(va >> 39 & 0x1ff), static_cast<uint32_t>(va >> 30 & 0x1ff),
      static_cast<uint32_t>(va >> 21 & 0x1ff), static_cast<uint32_t>(va >> 12 & 0x1ff),
      static_cast<uint32_t>(va & 0xfff)};
}

struct PTEntry {
  uint64_t raw = 0;

  bool present() const { return raw & 1; }
  bool writable() const { return raw >> 1 & 1; }
  bool no_execute() const { return raw >> 63 & 1; }
  uint64_t addr() const { return raw & kPtAddrMask; }

  bool operator==(const PTEntry&) const = default;
};

inline PTEntry encode_entry(uint64_t pa, bool present, bool writable, bool no_execute) {
  if (!present) return PTEntry{0};  // generation convention: absent entries are all-zero
  if (pa & (kPageSize - 1)) throw std::invalid_argument("entry target not 4 KiB aligned: " + hex(pa));
  if (pa >= 1ULL << 52) throw std::invalid_argument("entry target beyond bit 51: " + hex(pa));
  uint64_t raw = pa | 1;
  if (writable) raw |= 2;
  if (no_execute) raw |= 1ULL << 63;
  return PTEntry{raw};
}

inline PTEntry decode_entry(uint64_t raw) { return PTEntry{raw}; }

struct PagingStructureFile {
  uint64_t pt_base = 0;             // physical address of the file's first byte
  std::vector<uint64_t> words;      // length a multiple of 512, at least 512

  size_t structures() const { return words.size() / kEntriesPerStruct; }
  uint64_t size_bytes() const { return words.size() * 8; }

  bool operator==(const PagingStructureFile&) const = default;
};

struct PtFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structural corruption found during a walk: a present non-leaf entry whose
// target does not name a structure inside the file.
struct PtCorruption : std::runtime_error {
  size_t word_index;
  PtCorruption(const std::string& msg, size_t word_index_)
      : std::runtime_error(msg), word_index(word_index_) {}
};

struct Translation {
  uint64_t pa = 0;
  Permissions perms;

  bool operator==(const Translation&) const = default;
};

// Low-level walk used by translate and the validity checker: reports the
// word indices it examined so used entries can be marked.
struct Walk {
  enum class Status : uint8_t { Mapped, Unmapped, Corrupt };
  Status status = Status::Unmapped;
  Translation t;                   // meaningful when Mapped
  std::array<size_t, 4> touched{};  // word indices, [0..depth)
  int depth = 0;
  size_t corrupt_word = 0;         // meaningful when Corrupt
};

inline Walk walk_va(const PagingStructureFile& f, uint64_t va) {
  VaParts ix = split_va(va);
  Walk w;
  uint64_t struct_idx = 0;
  bool writable = true;
  bool nx = false;
  for (int level = 0; level < 4; ++level) {
    size_t word = struct_idx * kEntriesPerStruct + ix.index(level);
    w.touched[w.depth++] = word;
    PTEntry e = decode_entry(f.words[word]);
    if (!e.present()) {
      w.status = Walk::Status::Unmapped;
      return w;
    }
    writable = writable && e.writable();
    nx = nx || e.no_execute();
    if (level == 3) {
      w.status = Walk::Status::Mapped;
      w.t = Translation{e.addr() | ix.offset, Permissions{true, writable, !nx}};
      return w;
    }
    uint64_t target = e.addr();
    if (target < f.pt_base || target >= f.pt_base + f.size_bytes() ||
        (target - f.pt_base) % kPageSize != 0) {
      w.status = Walk::Status::Corrupt;
      w.corrupt_word = word;
      return w;
    }
    struct_idx = (target - f.pt_base) / kPageSize;
  }
  return w;  // unreachable
}

inline std::optional<Translation> translate(const PagingStructureFile& f, uint64_t va) {
  Walk w = walk_va(f, va);
  switch (w.status) {
    case Walk::Status::Mapped: return w.t;
    case Walk::Status::Unmapped: return std::nullopt;
    case Walk::Status::Corrupt: break;
  }
  throw PtCorruption("non-leaf entry at word " + std::to_string(w.corrupt_word) +
                         " points outside the paging structure file",
                     w.corrupt_word);
}

inline PagingStructureFile read_pt_file(std::span<const uint8_t> bytes, uint64_t pt_base) {
  if (bytes.size() < kPageSize || bytes.size() % kPageSize != 0)
    throw PtFormatError("paging structure file length " + std::to_string(bytes.size()) +
                        " is not a positive multiple of 4096");
  if (pt_base % kPageSize != 0)
    throw PtFormatError("pt_base " + hex(pt_base) + " is not 4 KiB aligned");
  PagingStructureFile f;
  f.pt_base = pt_base;
  f.words.resize(bytes.size() / 8);
  for (size_t i = 0; i < f.words.size(); ++i) {
    uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = v << 8 | bytes[i * 8 + b];
    f.words[i] = v;
  }
  return f;
}

inline std::vector<uint8_t> write_pt_file(const PagingStructureFile& f) {
  std::vector<uint8_t> bytes(f.words.size() * 8);
  for (size_t i = 0; i < f.words.size(); ++i)
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<uint8_t>(f.words[i] >> (8 * b));
  return bytes;
}

inline PagingStructureFile load_pt_file(const std::filesystem::path& p, uint64_t pt_base) {
  return read_pt_file(read_file(p), pt_base);
}

inline void save_pt_file(const std::filesystem::path& p, const PagingStructureFile& f) {
  write_file(p, write_pt_file(f));
}

// Checks the level-region invariant: structure 0 is the PML4 and each
// level's structures form a contiguous band in level order, with every
// present non-leaf entry naming a structure of the next band.
inline std::vector<std::string> validate_pt_layout(const PagingStructureFile& f) {
  std::vector<std::string> problems;
  size_t n = f.structures();
  std::vector<int> level(n, -1);
  level[0] = 0;
  std::vector<size_t> frontier{0};
  for (int lv = 0; lv < 3; ++lv) {
    std::vector<size_t> next;
    for (size_t s : frontier) {
      for (size_t e = 0; e < kEntriesPerStruct; ++e) {
        PTEntry entry = decode_entry(f.words[s * kEntriesPerStruct + e]);
        if (!entry.present()) continue;
        uint64_t target = entry.addr();
        if (target < f.pt_base || target >= f.pt_base + f.size_bytes() ||
            (target - f.pt_base) % kPageSize != 0) {
          problems.push_back("level " + std::to_string(lv) + " entry at word " +
                             std::to_string(s * kEntriesPerStruct + e) + " points outside the file");
          continue;
        }
        size_t child = (target - f.pt_base) / kPageSize;
        if (level[child] != -1 && level[child] != lv + 1) {
          problems.push_back("structure " + std::to_string(child) + " referenced at two levels");
          continue;
        }
        if (level[child] == -1) {
          level[child] = lv + 1;
          next.push_back(child);
        }
      }
    }
    frontier = std::move(next);
  }
  // contiguous bands in level order
  int prev = 0;
  for (size_t s = 0; s < n; ++s) {
    if (level[s] == -1) {
      problems.push_back("structure " + std::to_string(s) + " unreachable from the PML4");
      continue;
    }
    if (level[s] < prev)
      problems.push_back("structure " + std::to_string(s) + " out of level order");
    prev = level[s];
  }
  return problems;
}

}  // namespace skrefine
