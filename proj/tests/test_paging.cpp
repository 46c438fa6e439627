#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "skrefine/paging.hpp"

using namespace skrefine;

namespace {

// Independent naive walker: reads raw words step by step, no shared code
// with translate(). Returns (pa, w, nx) or nothing; corrupt -> throws.
std::optional<std::tuple<uint64_t, bool, bool>> naive_walk(const std::vector<uint64_t>& words,
                                                           uint64_t base, uint64_t va) {
  uint64_t idx[4] = {va >> 39 & 511, va >> 30 & 511, va >> 21 & 511, va >> 12 & 511};
  uint64_t cur = 0;  // byte offset of current structure
  bool w = true, nx = false;
  for (int lv = 0; lv < 4; ++lv) {
    uint64_t raw = words.at(cur / 8 + idx[lv]);
    if ((raw & 1) == 0) return std::nullopt;
    w = w && (raw & 2);
    nx = nx || (raw >> 63);
    uint64_t target = raw & 0x000F'FFFF'FFFF'F000ULL;
    if (lv == 3) return std::make_tuple(target + (va & 4095), w, nx);
    if (target < base || target >= base + words.size() * 8) throw std::runtime_error("corrupt");
    cur = target - base;
  }
  return std::nullopt;
}

// pt_base 0x8000, maps LA 0x40_0000 -> PA 0x10_0000 rw-
PagingStructureFile sample_file() {
  PagingStructureFile f;
  f.pt_base = 0x8000;
  f.words.assign(4 * 512, 0);
  f.words[0 * 512 + 0] = encode_entry(0x9000, true, true, false).raw;   // PML4[0] -> PDPT
  f.words[1 * 512 + 0] = encode_entry(0xa000, true, true, false).raw;   // PDPT[0] -> PD
  f.words[2 * 512 + 2] = encode_entry(0xb000, true, true, false).raw;   // PD[2]   -> PT
  f.words[3 * 512 + 0] = encode_entry(0x100000, true, true, true).raw;  // leaf, rw-
  return f;
}

}  // namespace

TEST_CASE("split_va extracts the 9-9-9-9-12 fields") {
  CHECK(split_va(0x0000'0000'0040'1000ULL) == VaParts{0, 0, 2, 1, 0});
  CHECK(split_va(0) == VaParts{0, 0, 0, 0, 0});
  CHECK(split_va(0x0000'7FFF'FFFF'FFFFULL) == VaParts{255, 511, 511, 511, 4095});
  CHECK_THROWS_AS(split_va(1ULL << 48), std::domain_error);
}

TEST_CASE("entry codec matches the fixed bit layout") {
  CHECK(encode_entry(0x2000, true, true, false).raw == 0x2003);
  CHECK(encode_entry(0x5000, true, false, true).raw == 0x8000'0000'0000'5001ULL);
  CHECK(encode_entry(0x123000, false, true, true).raw == 0);  // not-present is all zero
  CHECK_THROWS_AS(encode_entry(0x2001, true, false, false), std::invalid_argument);
  CHECK_THROWS_AS(encode_entry(1ULL << 52, true, false, false), std::invalid_argument);

  PTEntry e = decode_entry(0x8000'0000'0000'5001ULL);
  CHECK(e.present());
  CHECK_FALSE(e.writable());
  CHECK(e.no_execute());
  CHECK(e.addr() == 0x5000);
}

TEST_CASE("reserved bits are excluded from the target address") {
  PTEntry e = decode_entry(0xFFF0'0000'0000'0FFFULL);
  CHECK(e.addr() == 0);
  e = decode_entry(0x000F'FFFF'FFFF'F000ULL);
  CHECK(e.addr() == 0x000F'FFFF'FFFF'F000ULL);
}

TEST_CASE("translate walks four levels and composes permissions") {
  auto f = sample_file();
  auto t = translate(f, 0x40'0123);
  REQUIRE(t.has_value());
  CHECK(t->pa == 0x10'0123);
  CHECK(t->perms == Permissions{true, true, false});

  CHECK_FALSE(translate(f, 0x80'0000).has_value());  // PD entry absent
  CHECK_FALSE(translate(f, 0x0).has_value());        // PT entry absent
  CHECK_FALSE(translate(f, 1ULL << 39).has_value()); // PML4 entry absent
}

TEST_CASE("read-only and executable permission composition") {
  auto f = sample_file();
  f.words[3 * 512 + 1] = encode_entry(0x101000, true, false, false).raw;  // r-x leaf
  auto t = translate(f, 0x40'1000);
  REQUIRE(t.has_value());
  CHECK(t->perms == Permissions{true, false, true});

  // a non-writable non-leaf masks writability of the whole subtree
  f.words[0] = encode_entry(0x9000, true, false, false).raw;
  t = translate(f, 0x40'0000);
  REQUIRE(t.has_value());
  CHECK(t->perms.w == false);
}

TEST_CASE("non-leaf entries pointing outside the file are corruption, not none") {
  auto f = sample_file();
  f.words[2 * 512 + 2] = encode_entry(0x1000, true, true, false).raw;  // below pt_base
  CHECK_THROWS_AS(translate(f, 0x40'0000), PtCorruption);
  f.words[2 * 512 + 2] = encode_entry(f.pt_base + f.size_bytes(), true, true, false).raw;
  CHECK_THROWS_AS(translate(f, 0x40'0000), PtCorruption);
}

TEST_CASE("walk_va reports the words it touched") {
  auto f = sample_file();
  Walk w = walk_va(f, 0x40'0123);
  CHECK(w.status == Walk::Status::Mapped);
  REQUIRE(w.depth == 4);
  CHECK(w.touched[0] == 0);
  CHECK(w.touched[1] == 512);
  CHECK(w.touched[2] == 2 * 512 + 2);
  CHECK(w.touched[3] == 3 * 512);

  w = walk_va(f, 0x80'0000);
  CHECK(w.status == Walk::Status::Unmapped);
  CHECK(w.depth == 3);  // stopped at the absent PD entry
}

TEST_CASE("pt file io round-trips and validates length") {
  auto f = sample_file();
  auto bytes = write_pt_file(f);
  CHECK(bytes.size() == 4 * 4096);
  auto g = read_pt_file(bytes, f.pt_base);
  CHECK(g.words == f.words);
  CHECK(write_pt_file(g) == bytes);

  std::vector<uint8_t> zeros(4096, 0);
  auto z = read_pt_file(zeros, 0);
  CHECK(z.structures() == 1);
  for (auto w : z.words) CHECK(w == 0);

  std::vector<uint8_t> bad(4100, 0);
  CHECK_THROWS_AS(read_pt_file(bad, 0), PtFormatError);
  CHECK_THROWS_AS(read_pt_file(std::vector<uint8_t>{}, 0), PtFormatError);
  CHECK_THROWS_AS(read_pt_file(zeros, 0x123), PtFormatError);  // misaligned base
}

TEST_CASE("entries are serialized little endian") {
  PagingStructureFile f;
  f.pt_base = 0;
  f.words.assign(512, 0);
  f.words[0] = 0x8000'0000'0010'0003ULL;
  auto bytes = write_pt_file(f);
  CHECK(bytes[0] == 0x03);
  CHECK(bytes[2] == 0x10);
  CHECK(bytes[7] == 0x80);
}

TEST_CASE("translate agrees with the naive walker on random addresses") {
  auto f = sample_file();
  // add a few more mappings at scattered spots
  f.words[0 * 512 + 1] = encode_entry(0x9000, true, true, false).raw;  // second pml4e, shared pdpt
  f.words[3 * 512 + 7] = encode_entry(0x107000, true, false, false).raw;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100000; ++i) {
    uint64_t va = rng() & (kVaLimit - 1);
    auto got = translate(f, va);
    auto want = naive_walk(f.words, f.pt_base, va);
    if (!want) {
      CHECK_FALSE(got.has_value());
    } else {
      REQUIRE(got.has_value());
      auto [pa, w, nx] = *want;
      CHECK(got->pa == pa);
      CHECK(got->perms.w == w);
      CHECK(got->perms.x == !nx);
    }
  }
}

TEST_CASE("validate_pt_layout accepts the sample and flags broken files") {
  auto f = sample_file();
  CHECK(validate_pt_layout(f).empty());

  auto bad = f;
  bad.words[2 * 512 + 2] = encode_entry(0x100000, true, true, false).raw;  // PD -> outside
  CHECK_FALSE(validate_pt_layout(bad).empty());

  bad = f;
  bad.words[0] = encode_entry(0xb000, true, true, false).raw;  // PML4 -> PT structure
  CHECK_FALSE(validate_pt_layout(bad).empty());
}

TEST_CASE("rwe strings parse both ways") {
  CHECK(parse_rwe("rwx") == Permissions{true, true, true});
  CHECK(parse_rwe("r--") == Permissions{true, false, false});
  CHECK(parse_rwe("---") == Permissions{false, false, false});
  CHECK(parse_rwe("rw-") == Permissions{true, true, false});
  CHECK_FALSE(parse_rwe("-w-").has_value());  // w implies r
  CHECK_FALSE(parse_rwe("rw").has_value());
  CHECK_FALSE(parse_rwe("rwz").has_value());
  CHECK(to_string(Permissions{true, true, false}) == "rw-");
  CHECK(to_string(Permissions{true, false, true}) == "r-x");
}
