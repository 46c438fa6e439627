#pragma once

// Subject instruction set: eight fixed-width instructions, 8 bytes each.
// Encoding: opcode(1) reg1(1) reg2(1) pad(1) imm(4, little endian).
// The pad byte is written as zero and ignored on decode.

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "skrefine/common.hpp"

namespace skrefine {

inline constexpr size_t kInstrSize = 8;
inline constexpr int kNumGpRegs = 4;

enum class Opcode : uint8_t {
  Movi = 0x01,    // reg1 := imm (zero-extended)
  Loadb = 0x02,   // low byte of reg1 := mem[reg2], upper bits preserved
  Storeb = 0x03,  // mem[reg2] := low byte of reg1
  Add = 0x04,     // reg1 := reg1 + reg2 (mod 2^64)
  Jmp = 0x05,     // ip := imm
  Rdir = 0x06,    // reg1 := ir; ir := 0
  Vmcall = 0x07,  // hypercall, no architectural effect
  Hlt = 0x08,     // idle: ip does not advance
};

struct Instruction {
  Opcode op = Opcode::Hlt;
  uint8_t reg1 = 0;  // 0..3
  uint8_t reg2 = 0;  // 0..3
  uint32_t imm = 0;

  bool operator==(const Instruction&) const = default;
};

struct RegisterFile {
  std::array<uint64_t, kNumGpRegs> gp{};
  uint64_t ip = 0;
  uint64_t sp = 0;
  uint64_t ir = 0;  // pending interrupt vector + 1; 0 means none

  bool operator==(const RegisterFile&) const = default;
};

inline std::array<uint8_t, kInstrSize> encode(const Instruction& i) {
  std::array<uint8_t, kInstrSize> b{};
  b[0] = static_cast<uint8_t>(i.op);
  b[1] = i.reg1;
  b[2] = i.reg2;
  b[3] = 0;
  b[4] = static_cast<uint8_t>(i.imm);
  b[5] = static_cast<uint8_t>(i.imm >> 8);
  b[6] = static_cast<uint8_t>(i.imm >> 16);
  b[7] = static_cast<uint8_t>(i.imm >> 24);
  return b;
}

// Returns nullopt for an unknown opcode or an out-of-range register index;
// callers signal an illegal-instruction condition.
inline std::optional<Instruction> decode(const uint8_t* b) {
  if (b[0] < 0x01 || b[0] > 0x08) return std::nullopt;
  if (b[1] >= kNumGpRegs || b[2] >= kNumGpRegs) return std::nullopt;
  Instruction i;
  i.op = static_cast<Opcode>(b[0]);
  i.reg1 = b[1];
  i.reg2 = b[2];
  i.imm = static_cast<uint32_t>(b[4]) | static_cast<uint32_t>(b[5]) << 8 |
          static_cast<uint32_t>(b[6]) << 16 | static_cast<uint32_t>(b[7]) << 24;
  return i;
}

inline std::optional<Instruction> decode(const std::array<uint8_t, kInstrSize>& b) {
  return decode(b.data());
}

inline const char* mnemonic(Opcode op) {
  switch (op) {
    case Opcode::Movi: return "MOVI";
    case Opcode::Loadb: return "LOADB";
    case Opcode::Storeb: return "STOREB";
    case Opcode::Add: return "ADD";
    case Opcode::Jmp: return "JMP";
    case Opcode::Rdir: return "RDIR";
    case Opcode::Vmcall: return "VMCALL";
    case Opcode::Hlt: return "HLT";
  }
  return "?";
}

}  // namespace skrefine
