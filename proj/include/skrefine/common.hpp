#pragma once

#include <cstdint>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skrefine {

inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint64_t kPageShift = 12;
inline constexpr uint64_t kVaLimit = 1ULL << 48;

// Thrown by parsers; carries a source position when one is known.
struct ParseError : std::runtime_error {
  int line = 0;
  int col = 0;
  ParseError(const std::string& msg, int line_ = 0, int col_ = 0)
      : std::runtime_error(line_ ? msg + " (line " + std::to_string(line_) + ")" : msg),
        line(line_), col(col_) {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A validation finding with an optional source line.
struct Diagnostic {
  std::string message;
  int line = 0;
};

inline std::string hex(uint64_t v) {
  char buf[19];
  auto r = std::to_chars(buf + 2, buf + sizeof buf, v, 16);
  buf[0] = '0';
  buf[1] = 'x';
  return std::string(buf, r.ptr - buf);
}

// Accepts 0x-prefixed hex or plain decimal, the convention used by every
// textual format in this toolkit.
inline std::optional<uint64_t> parse_u64(std::string_view s) {
  if (s.empty()) return std::nullopt;
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    base = 16;
  }
  uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline uint64_t require_u64(std::string_view s, const std::string& what, int line = 0) {
  auto v = parse_u64(s);
  if (!v) throw ParseError("bad number for " + what + ": '" + std::string(s) + "'", line);
  return *v;
}

// FNV-1a, used for page digests in snapshots.
inline uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::vector<uint8_t> out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& p, const uint8_t* data, size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw IoError("write failed: " + p.string());
}

inline void write_file(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  write_file(p, bytes.data(), bytes.size());
}

inline void write_text_file(const std::filesystem::path& p, std::string_view text) {
  write_file(p, reinterpret_cast<const uint8_t*>(text.data()), text.size());
}

// Deterministic xorshift-based PRNG helpers on top of std::mt19937_64.
// Distribution classes are not bit-stable across standard libraries, so all
// bounded draws go through these.
template <typename Rng>
uint64_t rand_below(Rng& rng, uint64_t bound) {
  // bound must be > 0
  uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

template <typename Rng>
uint64_t rand_range(Rng& rng, uint64_t lo, uint64_t hi) {  // inclusive
  return lo + rand_below(rng, hi - lo + 1);
}

}  // namespace skrefine
