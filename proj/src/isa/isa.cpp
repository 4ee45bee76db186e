#include "kpac/isa.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <vector>

#include "kpac/error.hpp"

namespace kpac {
namespace {

struct SysRegInfo {
  SysReg reg;
  const char* name;
  uint32_t crn, crm, op2;
};

// All live in op0=3, op1=0.
constexpr std::array<SysRegInfo, 11> kSysRegs{{
    {SysReg::ApiaKeyLo, "apiakeylo_el1", 2, 1, 0},
    {SysReg::ApiaKeyHi, "apiakeyhi_el1", 2, 1, 1},
    {SysReg::ApibKeyLo, "apibkeylo_el1", 2, 1, 2},
    {SysReg::ApibKeyHi, "apibkeyhi_el1", 2, 1, 3},
    {SysReg::ApdaKeyLo, "apdakeylo_el1", 2, 2, 0},
    {SysReg::ApdaKeyHi, "apdakeyhi_el1", 2, 2, 1},
    {SysReg::ApdbKeyLo, "apdbkeylo_el1", 2, 2, 2},
    {SysReg::ApdbKeyHi, "apdbkeyhi_el1", 2, 2, 3},
    {SysReg::ApgaKeyLo, "apgakeylo_el1", 2, 3, 0},
    {SysReg::ApgaKeyHi, "apgakeyhi_el1", 2, 3, 1},
    {SysReg::Sctlr, "sctlr_el1", 1, 0, 0},
}};

const SysRegInfo& info(SysReg r) { return kSysRegs[static_cast<size_t>(r)]; }

constexpr uint32_t sysreg_bits(const SysRegInfo& s) {
  return (1u << 19) | (s.crn << 12) | (s.crm << 8) | (s.op2 << 5);
}

int64_t sext(uint64_t v, int bits) {
  const uint64_t m = uint64_t{1} << (bits - 1);
  v &= (uint64_t{1} << bits) - 1;
  return static_cast<int64_t>((v ^ m) - m);
}

void check_reg(uint8_t r) {
  if (r > 31) throw ParamError("register number out of range: " + std::to_string(r));
}

void check_range(int64_t v, int64_t lo, int64_t hi, int64_t align, const char* what) {
  if (v < lo || v > hi || v % align != 0)
    throw ParamError(std::string(what) + " out of range: " + std::to_string(v));
}

uint32_t pac_key_bits(KeyClass k) {
  if (k == KeyClass::GA) throw ParamError("GA is not a pointer key");
  return static_cast<uint32_t>(k);
}

Instruction make(Opcode op) {
  Instruction i;
  i.op = op;
  return i;
}

Instruction mem_form(Opcode op, uint8_t rt, uint8_t rn, int64_t offset, AddrMode mode) {
  check_reg(rt);
  check_reg(rn);
  if (mode == AddrMode::RegScaled) throw ParamError("use ldr_reg/str_reg for register offsets");
  if (mode == AddrMode::Offset)
    check_range(offset, 0, 4095 * 8, 8, "ldr/str offset");
  else
    check_range(offset, -256, 255, 1, "ldr/str index");
  Instruction i = make(op);
  i.rd = rt;
  i.rn = rn;
  i.imm = offset;
  i.mode = mode;
  return i;
}

Instruction pair_form(Opcode op, uint8_t rt, uint8_t rt2, uint8_t rn, int64_t offset, AddrMode mode) {
  check_reg(rt);
  check_reg(rt2);
  check_reg(rn);
  if (mode == AddrMode::RegScaled) throw ParamError("ldp/stp have no register-offset form");
  check_range(offset, -512, 504, 8, "ldp/stp offset");
  Instruction i = make(op);
  i.rd = rt;
  i.rm = rt2;
  i.rn = rn;
  i.imm = offset;
  i.mode = mode;
  return i;
}

Instruction wide_move(Opcode op, uint8_t rd, uint16_t imm, int shift) {
  check_reg(rd);
  if (shift != 0 && shift != 16 && shift != 32 && shift != 48) throw ParamError("movz/movk shift must be 0/16/32/48");
  Instruction i = make(op);
  i.rd = rd;
  i.imm = imm;
  i.shift = static_cast<uint8_t>(shift);
  return i;
}

Instruction arith(Opcode op, uint8_t rd, uint8_t rn, uint32_t imm, bool lsl12) {
  check_reg(rd);
  check_reg(rn);
  check_range(imm, 0, 4095, 1, "add/sub immediate");
  Instruction i = make(op);
  i.rd = rd;
  i.rn = rn;
  i.imm = imm;
  i.shift = lsl12 ? 12 : 0;
  return i;
}

Instruction branch_rel(Opcode op, int64_t offset, int bits) {
  const int64_t lim = (int64_t{1} << (bits + 1));
  check_range(offset, -lim, lim - 4, 4, "branch offset");
  Instruction i = make(op);
  i.imm = offset;
  return i;
}

Instruction reg_branch(Opcode op, uint8_t rn) {
  check_reg(rn);
  Instruction i = make(op);
  i.rn = rn;
  return i;
}

Instruction exc(Opcode op, uint16_t imm) {
  Instruction i = make(op);
  i.imm = imm;
  return i;
}

}  // namespace

std::string_view to_string(SysReg r) { return info(r).name; }

namespace ins {
Instruction nop() { return make(Opcode::Nop); }
Instruction movz(uint8_t rd, uint16_t imm, int shift) { return wide_move(Opcode::Movz, rd, imm, shift); }
Instruction movk(uint8_t rd, uint16_t imm, int shift) { return wide_move(Opcode::Movk, rd, imm, shift); }

Instruction mov(uint8_t rd, uint8_t rm) {
  check_reg(rd);
  check_reg(rm);
  Instruction i = make(Opcode::MovReg);
  i.rd = rd;
  i.rm = rm;
  return i;
}

Instruction mov_from_sp(uint8_t rd) { return arith(Opcode::AddImm, rd, kSp, 0, false); }
Instruction mov_to_sp(uint8_t rn) { return arith(Opcode::AddImm, kSp, rn, 0, false); }
Instruction add_imm(uint8_t rd, uint8_t rn, uint32_t imm, bool lsl12) { return arith(Opcode::AddImm, rd, rn, imm, lsl12); }
Instruction sub_imm(uint8_t rd, uint8_t rn, uint32_t imm, bool lsl12) { return arith(Opcode::SubImm, rd, rn, imm, lsl12); }

Instruction adr(uint8_t rd, int64_t offset) {
  check_reg(rd);
  check_range(offset, -(int64_t{1} << 20), (int64_t{1} << 20) - 1, 1, "adr offset");
  Instruction i = make(Opcode::Adr);
  i.rd = rd;
  i.imm = offset;
  return i;
}

Instruction bfi(uint8_t rd, uint8_t rn, int lsb, int width) {
  check_reg(rd);
  check_reg(rn);
  // lsb 0 encodes as BFXIL, which is not part of the subset.
  check_range(lsb, 1, 63, 1, "bfi lsb");
  check_range(width, 1, 64 - lsb, 1, "bfi width");
  Instruction i = make(Opcode::Bfi);
  i.rd = rd;
  i.rn = rn;
  i.shift = static_cast<uint8_t>(lsb);
  i.width = static_cast<uint8_t>(width);
  return i;
}

Instruction ldr(uint8_t rt, uint8_t rn, int64_t offset, AddrMode mode) { return mem_form(Opcode::Ldr, rt, rn, offset, mode); }
Instruction str(uint8_t rt, uint8_t rn, int64_t offset, AddrMode mode) { return mem_form(Opcode::Str, rt, rn, offset, mode); }

Instruction ldr_reg(uint8_t rt, uint8_t rn, uint8_t rm) {
  Instruction i = mem_form(Opcode::Ldr, rt, rn, 0, AddrMode::Offset);
  check_reg(rm);
  i.rm = rm;
  i.mode = AddrMode::RegScaled;
  return i;
}

Instruction str_reg(uint8_t rt, uint8_t rn, uint8_t rm) {
  Instruction i = ldr_reg(rt, rn, rm);
  i.op = Opcode::Str;
  return i;
}

Instruction ldp(uint8_t rt, uint8_t rt2, uint8_t rn, int64_t offset, AddrMode mode) {
  return pair_form(Opcode::Ldp, rt, rt2, rn, offset, mode);
}
Instruction stp(uint8_t rt, uint8_t rt2, uint8_t rn, int64_t offset, AddrMode mode) {
  return pair_form(Opcode::Stp, rt, rt2, rn, offset, mode);
}

Instruction pac(KeyClass key, uint8_t rd, uint8_t rn) {
  check_reg(rd);
  check_reg(rn);
  pac_key_bits(key);
  Instruction i = make(Opcode::Pac);
  i.key = key;
  i.rd = rd;
  i.rn = rn;
  return i;
}

Instruction aut(KeyClass key, uint8_t rd, uint8_t rn) {
  Instruction i = pac(key, rd, rn);
  i.op = Opcode::Aut;
  return i;
}

Instruction xpaci(uint8_t rd) {
  check_reg(rd);
  Instruction i = make(Opcode::Xpaci);
  i.rd = rd;
  return i;
}

Instruction xpacd(uint8_t rd) {
  Instruction i = xpaci(rd);
  i.op = Opcode::Xpacd;
  return i;
}

Instruction pacga(uint8_t rd, uint8_t rn, uint8_t rm) {
  check_reg(rd);
  check_reg(rn);
  check_reg(rm);
  Instruction i = make(Opcode::Pacga);
  i.rd = rd;
  i.rn = rn;
  i.rm = rm;
  return i;
}

Instruction pacia1716() { return make(Opcode::Pacia1716); }
Instruction pacib1716() { return make(Opcode::Pacib1716); }
Instruction autia1716() { return make(Opcode::Autia1716); }
Instruction autib1716() { return make(Opcode::Autib1716); }
Instruction b(int64_t offset) { return branch_rel(Opcode::B, offset, 26); }
Instruction bl(int64_t offset) { return branch_rel(Opcode::Bl, offset, 26); }
Instruction br(uint8_t rn) { return reg_branch(Opcode::Br, rn); }
Instruction blr(uint8_t rn) { return reg_branch(Opcode::Blr, rn); }

Instruction blraa(uint8_t rn, uint8_t rm) {
  Instruction i = reg_branch(Opcode::Blraa, rn);
  check_reg(rm);
  i.rm = rm;
  return i;
}

Instruction blrab(uint8_t rn, uint8_t rm) {
  Instruction i = blraa(rn, rm);
  i.op = Opcode::Blrab;
  return i;
}

Instruction ret(uint8_t rn) { return reg_branch(Opcode::Ret, rn); }

Instruction cbz(uint8_t rt, int64_t offset) {
  check_reg(rt);
  Instruction i = branch_rel(Opcode::Cbz, offset, 19);
  i.rd = rt;
  return i;
}

Instruction cbnz(uint8_t rt, int64_t offset) {
  Instruction i = cbz(rt, offset);
  i.op = Opcode::Cbnz;
  return i;
}

Instruction svc(uint16_t imm) { return exc(Opcode::Svc, imm); }
Instruction eret() { return make(Opcode::Eret); }

Instruction msr(SysReg reg, uint8_t rt) {
  check_reg(rt);
  Instruction i = make(Opcode::Msr);
  i.sysreg = reg;
  i.rd = rt;
  return i;
}

Instruction mrs(uint8_t rt, SysReg reg) {
  Instruction i = msr(reg, rt);
  i.op = Opcode::Mrs;
  return i;
}

Instruction daifset(uint8_t imm) {
  check_range(imm, 0, 15, 1, "daif immediate");
  return exc(Opcode::DaifSet, imm);
}

Instruction daifclr(uint8_t imm) {
  check_range(imm, 0, 15, 1, "daif immediate");
  return exc(Opcode::DaifClr, imm);
}

Instruction brk(uint16_t imm) { return exc(Opcode::Brk, imm); }
Instruction hlt(uint16_t imm) { return exc(Opcode::Hlt, imm); }
}  // namespace ins

uint32_t encode(const Instruction& i) {
  const uint32_t rd = i.rd, rn = i.rn, rm = i.rm;
  const auto imm = static_cast<uint64_t>(i.imm);
  switch (i.op) {
    case Opcode::Nop: return 0xD503201F;
    case Opcode::Movz: return 0xD2800000 | (uint32_t{i.shift} / 16) << 21 | (imm & 0xFFFF) << 5 | rd;
    case Opcode::Movk: return 0xF2800000 | (uint32_t{i.shift} / 16) << 21 | (imm & 0xFFFF) << 5 | rd;
    case Opcode::MovReg: return 0xAA0003E0 | rm << 16 | rd;
    case Opcode::AddImm:
    case Opcode::SubImm:
      return (i.op == Opcode::AddImm ? 0x91000000u : 0xD1000000u) | (i.shift == 12 ? 1u << 22 : 0u) |
             static_cast<uint32_t>(imm & 0xFFF) << 10 | rn << 5 | rd;
    case Opcode::Adr:
      return 0x10000000 | static_cast<uint32_t>(imm & 3) << 29 | static_cast<uint32_t>((imm >> 2) & 0x7FFFF) << 5 | rd;
    case Opcode::Bfi: {
      const uint32_t immr = (64u - i.shift) & 63, imms = i.width - 1u;
      return 0xB3400000 | immr << 16 | imms << 10 | rn << 5 | rd;
    }
    case Opcode::Ldr:
    case Opcode::Str: {
      const bool load = i.op == Opcode::Ldr;
      switch (i.mode) {
        case AddrMode::Offset:
          return (load ? 0xF9400000u : 0xF9000000u) | static_cast<uint32_t>(imm / 8) << 10 | rn << 5 | rd;
        case AddrMode::PreIndex:
        case AddrMode::PostIndex:
          return (load ? 0xF8400000u : 0xF8000000u) | (i.mode == AddrMode::PreIndex ? 0xC00u : 0x400u) |
                 static_cast<uint32_t>(imm & 0x1FF) << 12 | rn << 5 | rd;
        case AddrMode::RegScaled: return (load ? 0xF8607800u : 0xF8207800u) | rm << 16 | rn << 5 | rd;
      }
      break;
    }
    case Opcode::Ldp:
    case Opcode::Stp: {
      uint32_t base = i.mode == AddrMode::Offset ? 0xA9000000u : i.mode == AddrMode::PreIndex ? 0xA9800000u : 0xA8800000u;
      if (i.op == Opcode::Ldp) base |= 0x00400000;
      return base | static_cast<uint32_t>((i.imm / 8) & 0x7F) << 15 | rm << 10 | rn << 5 | rd;
    }
    case Opcode::Pac: return 0xDAC10000 | pac_key_bits(i.key) << 10 | rn << 5 | rd;
    case Opcode::Aut: return 0xDAC11000 | pac_key_bits(i.key) << 10 | rn << 5 | rd;
    case Opcode::Xpaci: return 0xDAC143E0 | rd;
    case Opcode::Xpacd: return 0xDAC147E0 | rd;
    case Opcode::Pacga: return 0x9AC03000 | rm << 16 | rn << 5 | rd;
    case Opcode::Pacia1716: return 0xD503211F;
    case Opcode::Pacib1716: return 0xD503215F;
    case Opcode::Autia1716: return 0xD503219F;
    case Opcode::Autib1716: return 0xD50321DF;
    case Opcode::B: return 0x14000000 | static_cast<uint32_t>((i.imm / 4) & 0x3FFFFFF);
    case Opcode::Bl: return 0x94000000 | static_cast<uint32_t>((i.imm / 4) & 0x3FFFFFF);
    case Opcode::Br: return 0xD61F0000 | rn << 5;
    case Opcode::Blr: return 0xD63F0000 | rn << 5;
    case Opcode::Blraa: return 0xD73F0800 | rn << 5 | rm;
    case Opcode::Blrab: return 0xD73F0C00 | rn << 5 | rm;
    case Opcode::Ret: return 0xD65F0000 | rn << 5;
    case Opcode::Cbz: return 0xB4000000 | static_cast<uint32_t>((i.imm / 4) & 0x7FFFF) << 5 | rd;
    case Opcode::Cbnz: return 0xB5000000 | static_cast<uint32_t>((i.imm / 4) & 0x7FFFF) << 5 | rd;
    case Opcode::Svc: return 0xD4000001 | static_cast<uint32_t>(imm & 0xFFFF) << 5;
    case Opcode::Eret: return 0xD69F03E0;
    case Opcode::Msr: return 0xD5100000 | sysreg_bits(info(i.sysreg)) | rd;
    case Opcode::Mrs: return 0xD5300000 | sysreg_bits(info(i.sysreg)) | rd;
    case Opcode::DaifSet: return 0xD50340DF | static_cast<uint32_t>(imm & 0xF) << 8;
    case Opcode::DaifClr: return 0xD50340FF | static_cast<uint32_t>(imm & 0xF) << 8;
    case Opcode::Brk: return 0xD4200000 | static_cast<uint32_t>(imm & 0xFFFF) << 5;
    case Opcode::Hlt: return 0xD4400000 | static_cast<uint32_t>(imm & 0xFFFF) << 5;
  }
  throw ParamError("unencodable instruction");
}

std::optional<Instruction> decode(uint32_t w) {
  const auto rd = static_cast<uint8_t>(w & 31);
  const auto rn = static_cast<uint8_t>((w >> 5) & 31);
  const auto rm = static_cast<uint8_t>((w >> 16) & 31);

  switch (w) {
    case 0xD503201F: return ins::nop();
    case 0xD503211F: return ins::pacia1716();
    case 0xD503215F: return ins::pacib1716();
    case 0xD503219F: return ins::autia1716();
    case 0xD50321DF: return ins::autib1716();
    case 0xD69F03E0: return ins::eret();
    default: break;
  }

  switch (w & 0xFF800000) {
    case 0xD2800000: return ins::movz(rd, (w >> 5) & 0xFFFF, static_cast<int>((w >> 21) & 3) * 16);
    case 0xF2800000: return ins::movk(rd, (w >> 5) & 0xFFFF, static_cast<int>((w >> 21) & 3) * 16);
    case 0x91000000: return ins::add_imm(rd, rn, (w >> 10) & 0xFFF, (w >> 22) & 1);
    case 0xD1000000: return ins::sub_imm(rd, rn, (w >> 10) & 0xFFF, (w >> 22) & 1);
    default: break;
  }
  if ((w & 0xFFE0FFE0) == 0xAA0003E0) return ins::mov(rd, rm);
  if ((w & 0x9F000000) == 0x10000000)
    return ins::adr(rd, sext(((w >> 5) & 0x7FFFF) << 2 | ((w >> 29) & 3), 21));
  if ((w & 0xFFC00000) == 0xB3400000) {
    const uint32_t immr = (w >> 16) & 63, imms = (w >> 10) & 63;
    if (imms >= immr) return std::nullopt;
    return ins::bfi(rd, rn, static_cast<int>(64 - immr), static_cast<int>(imms + 1));
  }

  switch (w & 0xFFC00000) {
    case 0xF9400000: return ins::ldr(rd, rn, ((w >> 10) & 0xFFF) * 8);
    case 0xF9000000: return ins::str(rd, rn, ((w >> 10) & 0xFFF) * 8);
    default: break;
  }
  {
    const int64_t imm9 = sext((w >> 12) & 0x1FF, 9);
    switch (w & 0xFFE00C00) {
      case 0xF8400400: return ins::ldr(rd, rn, imm9, AddrMode::PostIndex);
      case 0xF8400C00: return ins::ldr(rd, rn, imm9, AddrMode::PreIndex);
      case 0xF8000400: return ins::str(rd, rn, imm9, AddrMode::PostIndex);
      case 0xF8000C00: return ins::str(rd, rn, imm9, AddrMode::PreIndex);
      default: break;
    }
  }
  if ((w & 0xFFE0FC00) == 0xF8607800) return ins::ldr_reg(rd, rn, rm);
  if ((w & 0xFFE0FC00) == 0xF8207800) return ins::str_reg(rd, rn, rm);
  {
    const int64_t imm7 = sext((w >> 15) & 0x7F, 7) * 8;
    const auto rt2 = static_cast<uint8_t>((w >> 10) & 31);
    switch (w & 0xFFC00000) {
      case 0xA9000000: return ins::stp(rd, rt2, rn, imm7, AddrMode::Offset);
      case 0xA9800000: return ins::stp(rd, rt2, rn, imm7, AddrMode::PreIndex);
      case 0xA8800000: return ins::stp(rd, rt2, rn, imm7, AddrMode::PostIndex);
      case 0xA9400000: return ins::ldp(rd, rt2, rn, imm7, AddrMode::Offset);
      case 0xA9C00000: return ins::ldp(rd, rt2, rn, imm7, AddrMode::PreIndex);
      case 0xA8C00000: return ins::ldp(rd, rt2, rn, imm7, AddrMode::PostIndex);
      default: break;
    }
  }

  if ((w & 0xFFFF8000) == 0xDAC10000) {
    const uint32_t opc = (w >> 10) & 31;
    if (opc < 4) return ins::pac(static_cast<KeyClass>(opc), rd, rn);
    if (opc < 8) return ins::aut(static_cast<KeyClass>(opc - 4), rd, rn);
    if (opc == 16 && rn == 31) return ins::xpaci(rd);
    if (opc == 17 && rn == 31) return ins::xpacd(rd);
    return std::nullopt;
  }
  if ((w & 0xFFE0FC00) == 0x9AC03000) return ins::pacga(rd, rn, rm);

  switch (w & 0xFC000000) {
    case 0x14000000: return ins::b(sext(w & 0x3FFFFFF, 26) * 4);
    case 0x94000000: return ins::bl(sext(w & 0x3FFFFFF, 26) * 4);
    default: break;
  }
  switch (w & 0xFFFFFC1F) {
    case 0xD61F0000: return ins::br(rn);
    case 0xD63F0000: return ins::blr(rn);
    case 0xD65F0000: return ins::ret(rn);
    default: break;
  }
  switch (w & 0xFFFFFC00) {
    case 0xD73F0800: return ins::blraa(rn, rd);
    case 0xD73F0C00: return ins::blrab(rn, rd);
    default: break;
  }
  switch (w & 0xFF000000) {
    case 0xB4000000: return ins::cbz(rd, sext((w >> 5) & 0x7FFFF, 19) * 4);
    case 0xB5000000: return ins::cbnz(rd, sext((w >> 5) & 0x7FFFF, 19) * 4);
    default: break;
  }
  switch (w & 0xFFE0001F) {
    case 0xD4000001: return ins::svc((w >> 5) & 0xFFFF);
    case 0xD4200000: return ins::brk((w >> 5) & 0xFFFF);
    case 0xD4400000: return ins::hlt((w >> 5) & 0xFFFF);
    default: break;
  }
  switch (w & 0xFFFFF0FF) {
    case 0xD50340DF: return ins::daifset((w >> 8) & 0xF);
    case 0xD50340FF: return ins::daifclr((w >> 8) & 0xF);
    default: break;
  }
  const uint32_t sys = w & 0x000FFFE0;
  const bool is_msr = (w & 0xFFF00000) == 0xD5100000, is_mrs = (w & 0xFFF00000) == 0xD5300000;
  if (is_msr || is_mrs) {
    for (const auto& s : kSysRegs) {
      if (sysreg_bits(s) == sys) return is_msr ? ins::msr(s.reg, rd) : ins::mrs(rd, s.reg);
    }
  }
  return std::nullopt;
}

bool is_pauth(const Instruction& i) {
  switch (i.op) {
    case Opcode::Pac:
    case Opcode::Aut:
    case Opcode::Xpaci:
    case Opcode::Xpacd:
    case Opcode::Pacga:
    case Opcode::Pacia1716:
    case Opcode::Pacib1716:
    case Opcode::Autia1716:
    case Opcode::Autib1716:
    case Opcode::Blraa:
    case Opcode::Blrab: return true;
    default: return false;
  }
}

bool is_pauth_hint(const Instruction& i) {
  switch (i.op) {
    case Opcode::Pacia1716:
    case Opcode::Pacib1716:
    case Opcode::Autia1716:
    case Opcode::Autib1716: return true;
    default: return false;
  }
}

// ---------------------------------------------------------------------------
// Text form

namespace {

std::string xreg(uint8_t r, bool sp) {
  if (r == 31) return sp ? "sp" : "xzr";
  return "x" + std::to_string(r);
}

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string simm(int64_t v) {
  return v < 0 ? "#-" + std::to_string(-v) : "#" + std::to_string(v);
}

std::string target(uint64_t pc, int64_t off, const SymbolNamer& namer) {
  const uint64_t t = pc + static_cast<uint64_t>(off);
  if (namer) {
    if (auto n = namer(t)) return *n;
  }
  return hex(t);
}

std::string mem_operand(const Instruction& i) {
  const std::string base = xreg(i.rn, true);
  switch (i.mode) {
    case AddrMode::Offset: return "[" + base + ", " + simm(i.imm) + "]";
    case AddrMode::PreIndex: return "[" + base + ", " + simm(i.imm) + "]!";
    case AddrMode::PostIndex: return "[" + base + "], " + simm(i.imm);
    case AddrMode::RegScaled: return "[" + base + ", " + xreg(i.rm, false) + ", lsl #3]";
  }
  return {};
}

std::string key_suffix(KeyClass k) {
  std::string s(to_string(k));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::string format(const Instruction& i, uint64_t pc, const SymbolNamer& namer) {
  switch (i.op) {
    case Opcode::Nop: return "nop";
    case Opcode::Movz:
    case Opcode::Movk: {
      std::string s = std::string(i.op == Opcode::Movz ? "movz " : "movk ") + xreg(i.rd, false) + ", #" + hex(static_cast<uint64_t>(i.imm));
      if (i.shift) s += ", lsl #" + std::to_string(i.shift);
      return s;
    }
    case Opcode::MovReg: return "mov " + xreg(i.rd, false) + ", " + xreg(i.rm, false);
    case Opcode::AddImm:
    case Opcode::SubImm: {
      if (i.op == Opcode::AddImm && i.imm == 0 && i.shift == 0 && (i.rd == 31 || i.rn == 31))
        return "mov " + xreg(i.rd, true) + ", " + xreg(i.rn, true);
      std::string s = std::string(i.op == Opcode::AddImm ? "add " : "sub ") + xreg(i.rd, true) + ", " + xreg(i.rn, true) +
                      ", #" + std::to_string(i.imm);
      if (i.shift) s += ", lsl #12";
      return s;
    }
    case Opcode::Adr: return "adr " + xreg(i.rd, false) + ", " + target(pc, i.imm, namer);
    case Opcode::Bfi:
      return "bfi " + xreg(i.rd, false) + ", " + xreg(i.rn, false) + ", #" + std::to_string(i.shift) + ", #" +
             std::to_string(i.width);
    case Opcode::Ldr: return "ldr " + xreg(i.rd, false) + ", " + mem_operand(i);
    case Opcode::Str: return "str " + xreg(i.rd, false) + ", " + mem_operand(i);
    case Opcode::Ldp:
    case Opcode::Stp:
      return std::string(i.op == Opcode::Ldp ? "ldp " : "stp ") + xreg(i.rd, false) + ", " + xreg(i.rm, false) + ", " +
             mem_operand(i);
    case Opcode::Pac: return "pac" + key_suffix(i.key) + " " + xreg(i.rd, false) + ", " + xreg(i.rn, true);
    case Opcode::Aut: return "aut" + key_suffix(i.key) + " " + xreg(i.rd, false) + ", " + xreg(i.rn, true);
    case Opcode::Xpaci: return "xpaci " + xreg(i.rd, false);
    case Opcode::Xpacd: return "xpacd " + xreg(i.rd, false);
    case Opcode::Pacga: return "pacga " + xreg(i.rd, false) + ", " + xreg(i.rn, false) + ", " + xreg(i.rm, true);
    case Opcode::Pacia1716: return "pacia1716";
    case Opcode::Pacib1716: return "pacib1716";
    case Opcode::Autia1716: return "autia1716";
    case Opcode::Autib1716: return "autib1716";
    case Opcode::B: return "b " + target(pc, i.imm, namer);
    case Opcode::Bl: return "bl " + target(pc, i.imm, namer);
    case Opcode::Br: return "br " + xreg(i.rn, false);
    case Opcode::Blr: return "blr " + xreg(i.rn, false);
    case Opcode::Blraa: return "blraa " + xreg(i.rn, false) + ", " + xreg(i.rm, true);
    case Opcode::Blrab: return "blrab " + xreg(i.rn, false) + ", " + xreg(i.rm, true);
    case Opcode::Ret: return i.rn == kLr ? "ret" : "ret " + xreg(i.rn, false);
    case Opcode::Cbz: return "cbz " + xreg(i.rd, false) + ", " + target(pc, i.imm, namer);
    case Opcode::Cbnz: return "cbnz " + xreg(i.rd, false) + ", " + target(pc, i.imm, namer);
    case Opcode::Svc: return "svc #" + std::to_string(i.imm);
    case Opcode::Eret: return "eret";
    case Opcode::Msr: return "msr " + std::string(to_string(i.sysreg)) + ", " + xreg(i.rd, false);
    case Opcode::Mrs: return "mrs " + xreg(i.rd, false) + ", " + std::string(to_string(i.sysreg));
    case Opcode::DaifSet: return "msr daifset, #" + std::to_string(i.imm);
    case Opcode::DaifClr: return "msr daifclr, #" + std::to_string(i.imm);
    case Opcode::Brk: return "brk #" + std::to_string(i.imm);
    case Opcode::Hlt: return "hlt #" + std::to_string(i.imm);
  }
  return "?";
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Operand list split on top-level commas; a bracketed memory operand stays whole.
std::vector<std::string> split_operands(std::string_view s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.emplace_back(trim(cur));
  return out;
}

class OperandParser {
 public:
  OperandParser(std::string_view mnemonic, uint64_t pc, const SymbolResolver& resolve)
      : mnem_(mnemonic), pc_(pc), resolve_(resolve) {}

  [[noreturn]] void fail(const std::string& why) const { throw ParseError(mnem_ + ": " + why); }

  // `sp` selects whether register 31 is spelled sp (true) or xzr (false).
  uint8_t reg(std::string_view t, bool sp) const {
    t = trim(t);
    if (t == "sp") {
      if (!sp) fail("sp not allowed here");
      return 31;
    }
    if (t == "xzr") {
      if (sp) fail("xzr not allowed here");
      return 31;
    }
    if (t == "fp") return kFp;
    if (t == "lr") return kLr;
    if (t == "ip0") return kIp0;
    if (t == "ip1") return kIp1;
    if (t.size() >= 2 && t[0] == 'x') {
      unsigned v = 0;
      auto [p, ec] = std::from_chars(t.data() + 1, t.data() + t.size(), v);
      if (ec == std::errc() && p == t.data() + t.size() && v <= 30) return static_cast<uint8_t>(v);
    }
    fail("bad register '" + std::string(t) + "'");
  }

  static std::optional<int64_t> number(std::string_view t) {
    t = trim(t);
    bool neg = false;
    if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
      neg = t[0] == '-';
      t.remove_prefix(1);
    }
    int base = 10;
    if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
      base = 16;
      t.remove_prefix(2);
    }
    if (t.empty()) return std::nullopt;
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v, base);
    if (ec != std::errc() || p != t.data() + t.size()) return std::nullopt;
    return neg ? -static_cast<int64_t>(v) : static_cast<int64_t>(v);
  }

  int64_t imm(std::string_view t) const {
    t = trim(t);
    if (!t.empty() && t[0] == '#') t.remove_prefix(1);
    auto v = number(t);
    if (!v) fail("bad immediate '" + std::string(t) + "'");
    return *v;
  }

  int64_t rel(std::string_view t) const {
    t = trim(t);
    if (auto v = number(t)) return static_cast<int64_t>(static_cast<uint64_t>(*v) - pc_);
    if (resolve_) {
      if (auto a = resolve_(t)) return static_cast<int64_t>(*a - pc_);
    }
    fail("unresolved target '" + std::string(t) + "'");
  }

  SysReg sysreg(std::string_view t) const {
    t = trim(t);
    for (const auto& s : kSysRegs) {
      if (t == s.name) return s.reg;
    }
    fail("unknown system register '" + std::string(t) + "'");
  }

  // Memory operand "[base, #off]" / "[base, #off]!" / "[base]" (+ trailing "#off" for post-index) /
  // "[base, xm, lsl #3]". Returns {base, offset, mode, rm}.
  struct Mem {
    uint8_t base;
    int64_t off;
    AddrMode mode;
    uint8_t rm;
  };

  Mem mem(const std::vector<std::string>& ops, size_t at) const {
    if (at >= ops.size()) fail("missing memory operand");
    std::string_view m = trim(ops[at]);
    bool writeback = false;
    if (!m.empty() && m.back() == '!') {
      writeback = true;
      m.remove_suffix(1);
      m = trim(m);
    }
    if (m.size() < 2 || m.front() != '[' || m.back() != ']') fail("bad memory operand");
    auto parts = split_operands(m.substr(1, m.size() - 2));
    Mem r{reg(parts.at(0), true), 0, AddrMode::Offset, 0};
    const bool post = ops.size() == at + 2;
    if (ops.size() > at + 2) fail("too many operands");
    if (parts.size() == 3) {
      if (writeback || post || trim(parts[2]) != "lsl #3") fail("register offset must be 'xm, lsl #3'");
      r.rm = reg(parts[1], false);
      r.mode = AddrMode::RegScaled;
      return r;
    }
    if (parts.size() == 2) r.off = imm(parts[1]);
    if (parts.size() > 3) fail("bad memory operand");
    if (post) {
      if (writeback || parts.size() != 1) fail("bad post-index form");
      r.off = imm(ops[at + 1]);
      r.mode = AddrMode::PostIndex;
    } else if (writeback) {
      r.mode = AddrMode::PreIndex;
    }
    return r;
  }

 private:
  std::string mnem_;
  uint64_t pc_;
  const SymbolResolver& resolve_;
};

std::optional<KeyClass> pauth_suffix(std::string_view m, std::string_view prefix) {
  if (m.size() != prefix.size() + 2 || m.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto k = parse_key_class(m.substr(prefix.size()));
  if (!k || *k == KeyClass::GA) return std::nullopt;
  return k;
}

}  // namespace

Instruction parse_instruction(std::string_view text, uint64_t pc, const SymbolResolver& resolve) {
  std::string lower(trim(text));
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const size_t sp = lower.find_first_of(" \t");
  const std::string m = lower.substr(0, sp);
  const auto ops = sp == std::string::npos ? std::vector<std::string>{} : split_operands(lower.substr(sp + 1));
  OperandParser p(m, pc, resolve);
  auto want = [&](size_t n) {
    if (ops.size() != n) p.fail("expected " + std::to_string(n) + " operand(s)");
  };
  auto u16 = [&](std::string_view t) {
    const int64_t v = p.imm(t);
    if (v < 0 || v > 0xFFFF) p.fail("immediate out of range");
    return static_cast<uint16_t>(v);
  };

  try {
    if (m == "nop") return want(0), ins::nop();
    if (m == "eret") return want(0), ins::eret();
    if (m == "pacia1716") return want(0), ins::pacia1716();
    if (m == "pacib1716") return want(0), ins::pacib1716();
    if (m == "autia1716") return want(0), ins::autia1716();
    if (m == "autib1716") return want(0), ins::autib1716();
    if (m == "movz" || m == "movk") {
      if (ops.size() != 2 && ops.size() != 3) p.fail("expected 2 or 3 operands");
      int shift = 0;
      if (ops.size() == 3) {
        std::string_view s = trim(ops[2]);
        if (s.substr(0, 3) != "lsl") p.fail("expected lsl");
        shift = static_cast<int>(p.imm(s.substr(3)));
      }
      const uint8_t rd = p.reg(ops[0], false);
      return m == "movz" ? ins::movz(rd, u16(ops[1]), shift) : ins::movk(rd, u16(ops[1]), shift);
    }
    if (m == "mov") {
      want(2);
      const bool any_sp = trim(ops[0]) == "sp" || trim(ops[1]) == "sp";
      if (any_sp) return ins::add_imm(p.reg(ops[0], true), p.reg(ops[1], true), 0);
      return ins::mov(p.reg(ops[0], false), p.reg(ops[1], false));
    }
    if (m == "add" || m == "sub") {
      if (ops.size() != 3 && ops.size() != 4) p.fail("expected 3 or 4 operands");
      bool lsl12 = false;
      if (ops.size() == 4) {
        std::string_view s = trim(ops[3]);
        if (s.substr(0, 3) != "lsl" || p.imm(s.substr(3)) != 12) p.fail("only lsl #12 allowed");
        lsl12 = true;
      }
      const int64_t v = p.imm(ops[2]);
      if (v < 0) p.fail("negative immediate");
      const uint8_t rd = p.reg(ops[0], true), rn = p.reg(ops[1], true);
      return m == "add" ? ins::add_imm(rd, rn, static_cast<uint32_t>(v), lsl12)
                        : ins::sub_imm(rd, rn, static_cast<uint32_t>(v), lsl12);
    }
    if (m == "adr") return want(2), ins::adr(p.reg(ops[0], false), p.rel(ops[1]));
    if (m == "bfi") {
      want(4);
      return ins::bfi(p.reg(ops[0], false), p.reg(ops[1], false), static_cast<int>(p.imm(ops[2])),
                      static_cast<int>(p.imm(ops[3])));
    }
    if (m == "ldr" || m == "str") {
      if (ops.size() < 2) p.fail("missing operands");
      const uint8_t rt = p.reg(ops[0], false);
      const auto a = p.mem(ops, 1);
      if (a.mode == AddrMode::RegScaled) return m == "ldr" ? ins::ldr_reg(rt, a.base, a.rm) : ins::str_reg(rt, a.base, a.rm);
      return m == "ldr" ? ins::ldr(rt, a.base, a.off, a.mode) : ins::str(rt, a.base, a.off, a.mode);
    }
    if (m == "ldp" || m == "stp") {
      if (ops.size() < 3) p.fail("missing operands");
      const uint8_t rt = p.reg(ops[0], false), rt2 = p.reg(ops[1], false);
      const auto a = p.mem(ops, 2);
      if (a.mode == AddrMode::RegScaled) p.fail("no register offset form");
      return m == "ldp" ? ins::ldp(rt, rt2, a.base, a.off, a.mode) : ins::stp(rt, rt2, a.base, a.off, a.mode);
    }
    if (auto k = pauth_suffix(m, "pac")) return want(2), ins::pac(*k, p.reg(ops[0], false), p.reg(ops[1], true));
    if (auto k = pauth_suffix(m, "aut")) return want(2), ins::aut(*k, p.reg(ops[0], false), p.reg(ops[1], true));
    if (m == "xpaci") return want(1), ins::xpaci(p.reg(ops[0], false));
    if (m == "xpacd") return want(1), ins::xpacd(p.reg(ops[0], false));
    if (m == "pacga") return want(3), ins::pacga(p.reg(ops[0], false), p.reg(ops[1], false), p.reg(ops[2], true));
    if (m == "b") return want(1), ins::b(p.rel(ops[0]));
    if (m == "bl") return want(1), ins::bl(p.rel(ops[0]));
    if (m == "br") return want(1), ins::br(p.reg(ops[0], false));
    if (m == "blr") return want(1), ins::blr(p.reg(ops[0], false));
    if (m == "blraa") return want(2), ins::blraa(p.reg(ops[0], false), p.reg(ops[1], true));
    if (m == "blrab") return want(2), ins::blrab(p.reg(ops[0], false), p.reg(ops[1], true));
    if (m == "ret") {
      if (ops.size() > 1) p.fail("expected at most 1 operand");
      return ins::ret(ops.empty() ? kLr : p.reg(ops[0], false));
    }
    if (m == "cbz") return want(2), ins::cbz(p.reg(ops[0], false), p.rel(ops[1]));
    if (m == "cbnz") return want(2), ins::cbnz(p.reg(ops[0], false), p.rel(ops[1]));
    if (m == "svc") return want(1), ins::svc(u16(ops[0]));
    if (m == "brk") return want(1), ins::brk(u16(ops[0]));
    if (m == "hlt") return want(1), ins::hlt(u16(ops[0]));
    if (m == "msr") {
      want(2);
      const std::string_view dst = trim(ops[0]);
      if (dst == "daifset" || dst == "daifclr") {
        const int64_t v = p.imm(ops[1]);
        if (v < 0 || v > 15) p.fail("daif immediate out of range");
        return dst == "daifset" ? ins::daifset(static_cast<uint8_t>(v)) : ins::daifclr(static_cast<uint8_t>(v));
      }
      return ins::msr(p.sysreg(dst), p.reg(ops[1], false));
    }
    if (m == "mrs") return want(2), ins::mrs(p.reg(ops[0], false), p.sysreg(ops[1]));
  } catch (const ParamError& e) {
    throw ParseError(m + ": " + e.what());
  }
  throw ParseError("unknown mnemonic '" + m + "'");
}

}  // namespace kpac
