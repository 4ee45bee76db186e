#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kpac/ir.hpp"
#include "kpac/machine.hpp"
#include "kpac/pauth.hpp"
#include "kpac/program.hpp"

namespace kpac {

/// Lowered assembly, one instruction, label ("name:") or directive per line.
using AsmLines = std::vector<std::string>;

/// 48-bit function identifier used by the PartsLike modifier.
uint64_t function_id(std::string_view name);

struct FramePair {
  AsmLines prologue;  ///< up to and including the frame record setup
  AsmLines epilogue;  ///< from the frame record teardown through RET
};

/// Prologue and epilogue of `func` under `scheme`, without stack allocation.
FramePair frame_code(std::string_view func, ModifierScheme scheme);

/// Number of instructions `scheme` adds to one call (prologue + epilogue).
int extra_instructions_per_call(ModifierScheme scheme);

/// Keys used for protected fields: data/ops pointers and function pointers.
KeyClass data_pointer_key(ModifierScheme scheme);
KeyClass code_pointer_key(ModifierScheme scheme);
/// Key-registers the kernel owns and swaps on every EL0 <-> EL1 transition.
std::vector<KeyClass> kernel_keys(ModifierScheme scheme);
/// Pointer integrity is on for every scheme except None.
inline bool protects_fields(ModifierScheme scheme) { return scheme != ModifierScheme::None; }

struct Accessors {
  AsmLines getter;  ///< leaves the authenticated pointer in x8 (x17 for Compat1716)
  AsmLines setter;  ///< signs x8 (x17) and stores it into the object
};

/// Getter/setter sequences for `field` on the object in register `obj`.
/// Unprotected fields, or scheme None, get plain load/store.
Accessors gen_accessors(const FieldDecl& field, int obj, ModifierScheme scheme);

/// Lowers one function. Emits labels `<name>.body` after the prologue and
/// `<name>.epilogue` before the epilogue. Throws ParseError on a malformed body.
AsmLines instrument_function(const IrFunction& func, const IrModule& module, ModifierScheme scheme);

/// Where the linker places things.
struct ImageLayout {
  uint64_t text = 0xffff000008000000;
  uint64_t rodata = 0xffff000009000000;
  uint64_t data = 0xffff00000a000000;
  uint64_t setter = 0xffff000008400000;  ///< key setter page (generated at boot)
  bool runtime = true;  ///< emit the exception vector, exit syscall and syscall table
  const char* prefix = "";  ///< section name prefix, distinct per loaded image
};

inline constexpr ImageLayout kModuleLayout{0xffff000008800000, 0xffff000009800000, 0xffff00000a800000,
                                           0xffff000008400000, false, ".module"};

/// Complete program text for `module`: runtime (vector, sys_exit, syscall
/// table), lowered functions, operations tables, objects and `.sign` entries.
std::string emit_image(const IrModule& module, ModifierScheme scheme, const ImageLayout& layout = {});

/// emit_image followed by assemble. Throws ParseError/LinkError.
Program build_image(const IrModule& module, ModifierScheme scheme, const ImageLayout& layout = {});

/// One entry per static initializer of a protected field, resolved against
/// `linked`. Throws LinkError for unresolved or duplicate locations.
std::vector<SigningTableEntry> build_signing_table(const IrModule& module, const Program& linked,
                                                   ModifierScheme scheme);

/// Signs every entry in place with the machine's current keys. Throws
/// BootError for unmapped locations and PreconditionError when a word is
/// already signed. No-op on a core without PAuth.
void boot_sign(Machine& m, const std::vector<SigningTableEntry>& table);
/// As above with explicit keys, for signing while user keys are live.
void boot_sign(Machine& m, const std::vector<SigningTableEntry>& table, const KeyBank& keys);

struct Finding {
  uint64_t addr = 0;
  std::string reason;
};

struct VerifyReport {
  std::vector<Finding> findings;
  bool accepted() const { return findings.empty(); }
  std::string text() const;
};

/// Rejects undecodable words in executable sections, and outside the setter
/// page any MRS of a key register or any MSR to SCTLR that may clear a PAC
/// enable bit. An MSR to SCTLR is accepted only when its source register was
/// set by a MOVZ/MOVK chain in the same basic block to a value with all four
/// enable bits set.
VerifyReport verify_image(const Program& image, uint64_t setter_base = ImageLayout{}.setter,
                          uint64_t setter_size = kPageSize);

}  // namespace kpac
