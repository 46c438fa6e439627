#include <catch2/catch_amalgamated.hpp>

#include "skrefine/isa.hpp"

using namespace skrefine;

TEST_CASE("MOVI R1, 7 encodes to the fixed byte layout") {
  Instruction i{Opcode::Movi, 1, 0, 7};
  auto b = encode(i);
  std::array<uint8_t, 8> want{0x01, 0x01, 0x00, 0x00, 0x07, 0x00, 0x00, 0x00};
  CHECK(b == want);
}

TEST_CASE("decode is the inverse of encode") {
  std::vector<Instruction> all{
      {Opcode::Movi, 3, 0, 0xdeadbeef}, {Opcode::Loadb, 1, 2, 0},
      {Opcode::Storeb, 0, 3, 0},        {Opcode::Add, 2, 2, 0},
      {Opcode::Jmp, 0, 0, 0x400000},    {Opcode::Rdir, 1, 0, 0},
      {Opcode::Vmcall, 0, 0, 0},        {Opcode::Hlt, 0, 0, 0},
  };
  for (const auto& i : all) {
    auto d = decode(encode(i));
    REQUIRE(d.has_value());
    CHECK(*d == i);
  }
}

TEST_CASE("imm is little endian") {
  auto b = encode({Opcode::Jmp, 0, 0, 0x12345678});
  CHECK(b[4] == 0x78);
  CHECK(b[5] == 0x56);
  CHECK(b[6] == 0x34);
  CHECK(b[7] == 0x12);
}

TEST_CASE("unknown opcodes do not decode") {
  std::array<uint8_t, 8> b{0x00, 0, 0, 0, 0, 0, 0, 0};
  CHECK_FALSE(decode(b).has_value());
  b[0] = 0x09;
  CHECK_FALSE(decode(b).has_value());
  b[0] = 0xff;
  CHECK_FALSE(decode(b).has_value());
}

TEST_CASE("out-of-range register indices do not decode") {
  auto b = encode({Opcode::Add, 1, 1, 0});
  b[1] = 4;
  CHECK_FALSE(decode(b).has_value());
  b[1] = 1;
  b[2] = 200;
  CHECK_FALSE(decode(b).has_value());
}

TEST_CASE("pad byte is ignored on decode") {
  auto b = encode({Opcode::Movi, 1, 0, 7});
  b[3] = 0xaa;
  auto d = decode(b);
  REQUIRE(d.has_value());
  CHECK(*d == Instruction{Opcode::Movi, 1, 0, 7});
}
