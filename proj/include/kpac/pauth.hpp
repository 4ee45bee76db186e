#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "kpac/key_class.hpp"
#include "kpac/mac.hpp"
#include "kpac/pointer.hpp"

namespace kpac {

struct KeyBank {
  std::array<PacKey, kNumKeys> keys{};

  PacKey& operator[](KeyClass k) { return keys[static_cast<size_t>(k)]; }
  const PacKey& operator[](KeyClass k) const { return keys[static_cast<size_t>(k)]; }
  bool operator==(const KeyBank&) const = default;
};

/// SCTLR_EL1-style enable flags for the four pointer keys.
struct PacControl {
  bool enable_ia = true;
  bool enable_ib = true;
  bool enable_da = true;
  bool enable_db = true;

  bool operator==(const PacControl&) const = default;

  /// GA has no enable flag and is always on.
  bool enabled(KeyClass k) const;

  static constexpr int kEnIA = 31;
  static constexpr int kEnIB = 30;
  static constexpr int kEnDA = 27;
  static constexpr int kEnDB = 13;
  static constexpr uint64_t kAllEnableBits =
      (uint64_t{1} << kEnIA) | (uint64_t{1} << kEnIB) | (uint64_t{1} << kEnDA) | (uint64_t{1} << kEnDB);

  uint64_t to_sctlr() const;
  static PacControl from_sctlr(uint64_t sctlr);
  static PacControl all_disabled() { return {false, false, false, false}; }
};

/// How return addresses are salted before signing.
enum class ModifierScheme : uint8_t {
  None,        ///< no signing at all
  SpOnly,      ///< modifier = SP
  Proposed,    ///< SP[31:0] : function address[31:0]
  PartsLike,   ///< SP[15:0] : 48-bit function id
  Compat1716,  ///< Proposed modifier via the hint-space 1716 forms, one shared key
};

std::string_view to_string(ModifierScheme s);
std::optional<ModifierScheme> parse_scheme(std::string_view s);

/// Return-address modifier. Throws ParamError for ModifierScheme::None.
uint64_t ra_modifier(ModifierScheme scheme, uint64_t sp, uint64_t func_addr, uint64_t func_id);

/// Protected-field modifier: object_addr[47:0] : type_const.
constexpr uint64_t ptr_modifier(uint64_t object_addr, uint16_t type_const) {
  return (object_addr << 16) | type_const;
}

/// PAC* with strict input checking: identity if the key is disabled,
/// otherwise insert_pac(ptr, compute_pac(...)). Throws PreconditionError
/// when `ptr` is not canonical, i.e. it is already signed.
uint64_t exec_pac(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t ptr,
                  uint64_t modifier, const PointerLayout& layout, const MacFunction& mac = default_mac());

/// PAC* as the hardware executes it: a non-canonical input is signed over its
/// stripped form and the top PAC field bit is inverted, so it never authenticates.
uint64_t exec_pac_hw(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t ptr,
                     uint64_t modifier, const PointerLayout& layout, const MacFunction& mac = default_mac());

struct AuthResult {
  uint64_t value = 0;
  bool ok = true;       ///< false only when an enabled key saw a PAC mismatch
  bool checked = true;  ///< false when the key was disabled (no-op)
};

/// AUT*: canonical pointer on match, poison(signed_ptr, key) on mismatch,
/// identity when the key is disabled.
AuthResult authenticate(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t signed_ptr,
                        uint64_t modifier, const PointerLayout& layout, const MacFunction& mac = default_mac());

inline uint64_t exec_aut(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t signed_ptr,
                         uint64_t modifier, const PointerLayout& layout, const MacFunction& mac = default_mac()) {
  return authenticate(bank, ctl, key, signed_ptr, modifier, layout, mac).value;
}

/// XPAC*: strip without checking.
inline uint64_t exec_xpac(uint64_t signed_ptr, const PointerLayout& layout) { return strip_pac(signed_ptr, layout); }

/// Operand registers of the 1716 hint forms.
struct Regs1716 {
  uint64_t x16 = 0;  ///< modifier
  uint64_t x17 = 0;  ///< pointer
};

/// PACIB1716. On a core without PAuth (`pauth_implemented` false) it is a NOP.
Regs1716 exec_pacib1716(const KeyBank& bank, const PacControl& ctl, Regs1716 regs,
                        const PointerLayout& layout, bool pauth_implemented,
                        const MacFunction& mac = default_mac());

/// AUTIB1716; sets `*ok` to false on a mismatch when provided.
Regs1716 exec_autib1716(const KeyBank& bank, const PacControl& ctl, Regs1716 regs,
                        const PointerLayout& layout, bool pauth_implemented, bool* ok = nullptr,
                        const MacFunction& mac = default_mac());

}  // namespace kpac
