#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "kpac/key_class.hpp"

namespace kpac {

/// Instruction forms understood by the machine. Each maps one-to-one onto its
/// A64 encoding and its assembly text.
enum class Opcode : uint8_t {
  Nop,
  Movz,
  Movk,
  MovReg,  // ORR Xd, XZR, Xm
  AddImm,  // also "mov Xd, sp" / "mov sp, Xn"
  SubImm,
  Adr,
  Bfi,
  Ldr,
  Str,
  Ldp,
  Stp,
  Pac,  // PACIA/PACIB/PACDA/PACDB Xd, Xn|SP
  Aut,  // AUTIA/AUTIB/AUTDA/AUTDB Xd, Xn|SP
  Xpaci,
  Xpacd,
  Pacga,
  Pacia1716,
  Pacib1716,
  Autia1716,
  Autib1716,
  B,
  Bl,
  Br,
  Blr,
  Blraa,
  Blrab,
  Ret,
  Cbz,
  Cbnz,
  Svc,
  Eret,
  Msr,
  Mrs,
  DaifSet,
  DaifClr,
  Brk,
  Hlt,
};

enum class AddrMode : uint8_t { Offset, PreIndex, PostIndex, RegScaled };

/// System registers reachable through MSR/MRS.
enum class SysReg : uint8_t {
  ApiaKeyLo, ApiaKeyHi, ApibKeyLo, ApibKeyHi,
  ApdaKeyLo, ApdaKeyHi, ApdbKeyLo, ApdbKeyHi,
  ApgaKeyLo, ApgaKeyHi,
  Sctlr,
};

inline constexpr bool is_key_register(SysReg r) { return r != SysReg::Sctlr; }
/// Key whose half `r` holds; only meaningful for key registers.
inline constexpr KeyClass key_of(SysReg r) { return static_cast<KeyClass>(static_cast<uint8_t>(r) / 2); }
inline constexpr bool is_key_hi(SysReg r) { return static_cast<uint8_t>(r) % 2 == 1; }
inline constexpr SysReg key_lo_register(KeyClass k) { return static_cast<SysReg>(static_cast<uint8_t>(k) * 2); }
inline constexpr SysReg key_hi_register(KeyClass k) { return static_cast<SysReg>(static_cast<uint8_t>(k) * 2 + 1); }

std::string_view to_string(SysReg r);

/// Register number 31 is SP or XZR depending on the operand.
inline constexpr uint8_t kFp = 29;
inline constexpr uint8_t kLr = 30;
inline constexpr uint8_t kSp = 31;
inline constexpr uint8_t kZr = 31;
inline constexpr uint8_t kIp0 = 16;
inline constexpr uint8_t kIp1 = 17;

/// Decoded instruction. Fields not used by `op` are zero so that
/// defaulted equality is exact.
struct Instruction {
  Opcode op = Opcode::Nop;
  uint8_t rd = 0;  ///< Rd or Rt
  uint8_t rn = 0;  ///< Rn or base register
  uint8_t rm = 0;  ///< Rm or Rt2
  KeyClass key = KeyClass::IA;
  AddrMode mode = AddrMode::Offset;
  SysReg sysreg = SysReg::ApiaKeyLo;
  uint8_t shift = 0;  ///< MOVZ/MOVK: 0/16/32/48; ADD/SUB: 0/12; BFI: lsb
  uint8_t width = 0;  ///< BFI field width
  int64_t imm = 0;    ///< immediate, memory offset, or pc-relative byte offset

  bool operator==(const Instruction&) const = default;
};

/// Builders for every form. Arguments are range-checked (ParamError).
namespace ins {
Instruction nop();
Instruction movz(uint8_t rd, uint16_t imm, int shift = 0);
Instruction movk(uint8_t rd, uint16_t imm, int shift = 0);
Instruction mov(uint8_t rd, uint8_t rm);  ///< picks ADD #0 when either side is SP
Instruction mov_from_sp(uint8_t rd);
Instruction mov_to_sp(uint8_t rn);
Instruction add_imm(uint8_t rd, uint8_t rn, uint32_t imm, bool lsl12 = false);
Instruction sub_imm(uint8_t rd, uint8_t rn, uint32_t imm, bool lsl12 = false);
Instruction adr(uint8_t rd, int64_t offset);
Instruction bfi(uint8_t rd, uint8_t rn, int lsb, int width);
Instruction ldr(uint8_t rt, uint8_t rn, int64_t offset, AddrMode mode = AddrMode::Offset);
Instruction str(uint8_t rt, uint8_t rn, int64_t offset, AddrMode mode = AddrMode::Offset);
Instruction ldr_reg(uint8_t rt, uint8_t rn, uint8_t rm);  ///< [Xn, Xm, LSL #3]
Instruction str_reg(uint8_t rt, uint8_t rn, uint8_t rm);
Instruction ldp(uint8_t rt, uint8_t rt2, uint8_t rn, int64_t offset, AddrMode mode = AddrMode::Offset);
Instruction stp(uint8_t rt, uint8_t rt2, uint8_t rn, int64_t offset, AddrMode mode = AddrMode::Offset);
Instruction pac(KeyClass key, uint8_t rd, uint8_t rn);
Instruction aut(KeyClass key, uint8_t rd, uint8_t rn);
Instruction xpaci(uint8_t rd);
Instruction xpacd(uint8_t rd);
Instruction pacga(uint8_t rd, uint8_t rn, uint8_t rm);
Instruction pacia1716();
Instruction pacib1716();
Instruction autia1716();
Instruction autib1716();
Instruction b(int64_t offset);
Instruction bl(int64_t offset);
Instruction br(uint8_t rn);
Instruction blr(uint8_t rn);
Instruction blraa(uint8_t rn, uint8_t rm);
Instruction blrab(uint8_t rn, uint8_t rm);
Instruction ret(uint8_t rn = kLr);
Instruction cbz(uint8_t rt, int64_t offset);
Instruction cbnz(uint8_t rt, int64_t offset);
Instruction svc(uint16_t imm);
Instruction eret();
Instruction msr(SysReg reg, uint8_t rt);
Instruction mrs(uint8_t rt, SysReg reg);
Instruction daifset(uint8_t imm);
Instruction daifclr(uint8_t imm);
Instruction brk(uint16_t imm);
Instruction hlt(uint16_t imm);
}  // namespace ins

/// A64 encoding of `inst`.
uint32_t encode(const Instruction& inst);

/// Inverse of encode; nullopt for words outside the supported subset.
std::optional<Instruction> decode(uint32_t word);

/// True for the PAuth instruction classes (PAC*, AUT*, XPAC*, PACGA, the
/// 1716 hints and the combined authenticating branches).
bool is_pauth(const Instruction& inst);

/// PAuth forms that are hints and therefore execute as NOP without PAuth.
bool is_pauth_hint(const Instruction& inst);

/// Names a code address for printing; return nullopt to print it in hex.
using SymbolNamer = std::function<std::optional<std::string>(uint64_t)>;
/// Resolves a label (possibly "name+off") to an address.
using SymbolResolver = std::function<std::optional<uint64_t>(std::string_view)>;

/// Assembly text for `inst` located at `pc`.
std::string format(const Instruction& inst, uint64_t pc, const SymbolNamer& namer = {});

/// Parses one instruction located at `pc`. Throws ParseError.
Instruction parse_instruction(std::string_view text, uint64_t pc, const SymbolResolver& resolve = {});

}  // namespace kpac
