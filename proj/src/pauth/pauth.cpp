#include "kpac/pauth.hpp"

#include <cctype>
#include <string>

#include "kpac/error.hpp"

namespace kpac {

bool PacControl::enabled(KeyClass k) const {
  switch (k) {
    case KeyClass::IA: return enable_ia;
    case KeyClass::IB: return enable_ib;
    case KeyClass::DA: return enable_da;
    case KeyClass::DB: return enable_db;
    case KeyClass::GA: return true;
  }
  return false;
}

uint64_t PacControl::to_sctlr() const {
  uint64_t v = 0;
  if (enable_ia) v |= uint64_t{1} << kEnIA;
  if (enable_ib) v |= uint64_t{1} << kEnIB;
  if (enable_da) v |= uint64_t{1} << kEnDA;
  if (enable_db) v |= uint64_t{1} << kEnDB;
  return v;
}

PacControl PacControl::from_sctlr(uint64_t sctlr) {
  PacControl c;
  c.enable_ia = (sctlr >> kEnIA) & 1;
  c.enable_ib = (sctlr >> kEnIB) & 1;
  c.enable_da = (sctlr >> kEnDA) & 1;
  c.enable_db = (sctlr >> kEnDB) & 1;
  return c;
}

std::string_view to_string(ModifierScheme s) {
  switch (s) {
    case ModifierScheme::None: return "none";
    case ModifierScheme::SpOnly: return "sp-only";
    case ModifierScheme::Proposed: return "proposed";
    case ModifierScheme::PartsLike: return "parts-like";
    case ModifierScheme::Compat1716: return "compat1716";
  }
  return "?";
}

std::optional<ModifierScheme> parse_scheme(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::erase(lower, '-');
  std::erase(lower, '_');
  if (lower == "none") return ModifierScheme::None;
  if (lower == "sponly" || lower == "sp") return ModifierScheme::SpOnly;
  if (lower == "proposed") return ModifierScheme::Proposed;
  if (lower == "partslike" || lower == "parts") return ModifierScheme::PartsLike;
  if (lower == "compat1716" || lower == "compat") return ModifierScheme::Compat1716;
  return std::nullopt;
}

uint64_t ra_modifier(ModifierScheme scheme, uint64_t sp, uint64_t func_addr, uint64_t func_id) {
  switch (scheme) {
    case ModifierScheme::None:
      throw ParamError("ra_modifier: scheme None signs nothing");
    case ModifierScheme::SpOnly:
      return sp;
    case ModifierScheme::Proposed:
    case ModifierScheme::Compat1716:
      return (sp << 32) | (func_addr & 0xFFFFFFFFull);
    case ModifierScheme::PartsLike:
      return (sp << 48) | (func_id & 0xFFFFFFFFFFFFull);
  }
  throw ParamError("ra_modifier: unknown scheme");
}

uint64_t exec_pac(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t ptr,
                  uint64_t modifier, const PointerLayout& layout, const MacFunction& mac) {
  if (!ctl.enabled(key)) return ptr;
  if (!is_canonical(ptr, layout)) {
    throw PreconditionError("PAC on a non-canonical pointer (already signed?)");
  }
  return insert_pac(ptr, compute_pac(bank[key], ptr, modifier, layout, mac), layout);
}

uint64_t exec_pac_hw(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t ptr,
                     uint64_t modifier, const PointerLayout& layout, const MacFunction& mac) {
  if (!ctl.enabled(key)) return ptr;
  if (is_canonical(ptr, layout)) return exec_pac(bank, ctl, key, ptr, modifier, layout, mac);
  const uint64_t base = strip_pac(ptr, layout);
  uint64_t out = insert_pac(base, compute_pac(bank[key], base, modifier, layout, mac), layout);
  const AddressClass space = space_of(base);
  const int top_field_bit = layout.tbi(space) ? 54 : 63;
  return out ^ (uint64_t{1} << top_field_bit);
}

AuthResult authenticate(const KeyBank& bank, const PacControl& ctl, KeyClass key, uint64_t signed_ptr,
                        uint64_t modifier, const PointerLayout& layout, const MacFunction& mac) {
  if (!ctl.enabled(key)) return {signed_ptr, true, false};
  const uint64_t base = strip_pac(signed_ptr, layout);
  const uint64_t expected = compute_pac(bank[key], base, modifier, layout, mac);
  if (extract_pac(signed_ptr, layout) == expected) return {base, true, true};
  return {poison(signed_ptr, key, layout), false, true};
}

Regs1716 exec_pacib1716(const KeyBank& bank, const PacControl& ctl, Regs1716 regs,
                        const PointerLayout& layout, bool pauth_implemented, const MacFunction& mac) {
  if (!pauth_implemented) return regs;
  regs.x17 = exec_pac_hw(bank, ctl, KeyClass::IB, regs.x17, regs.x16, layout, mac);
  return regs;
}

Regs1716 exec_autib1716(const KeyBank& bank, const PacControl& ctl, Regs1716 regs,
                        const PointerLayout& layout, bool pauth_implemented, bool* ok,
                        const MacFunction& mac) {
  if (ok) *ok = true;
  if (!pauth_implemented) return regs;
  const AuthResult r = authenticate(bank, ctl, KeyClass::IB, regs.x17, regs.x16, layout, mac);
  regs.x17 = r.value;
  if (ok) *ok = r.ok;
  return regs;
}

}  // namespace kpac
