#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "kpac/key_class.hpp"

namespace kpac {

/// Which translation range a 64-bit value falls in.
enum class AddressClass : uint8_t { User, Kernel, Invalid };

std::string_view to_string(AddressClass c);

/// VMSA pointer geometry. The PAC field of a range is bits 54..va_bits, plus
/// bits 63..56 when that range does not ignore its top byte. Bit 55 selects
/// the range and is never part of the PAC.
struct PointerLayout {
  int va_bits = 48;
  bool tbi_user = false;
  bool tbi_kernel = false;

  bool operator==(const PointerLayout&) const = default;

  bool tbi(AddressClass space) const { return space == AddressClass::User ? tbi_user : tbi_kernel; }

  /// Throws ParamError unless 32 <= va_bits <= 52.
  void validate() const;
};

inline constexpr int kMinVaBits = 32;
inline constexpr int kMaxVaBits = 52;

/// PAC bits available in `space`. Throws ParamError for AddressClass::Invalid.
int pac_width(const PointerLayout& layout, AddressClass space);

/// Mask of the PAC field bits of `space`.
uint64_t pac_field_mask(const PointerLayout& layout, AddressClass space);

/// Range selected by bit 55 alone (never Invalid).
inline AddressClass space_of(uint64_t ptr) {
  return (ptr >> 55) & 1 ? AddressClass::Kernel : AddressClass::User;
}

AddressClass classify(uint64_t addr, const PointerLayout& layout);

inline bool is_canonical(uint64_t addr, const PointerLayout& layout) {
  return classify(addr, layout) != AddressClass::Invalid;
}

/// Places `pac` into the PAC field of canonical `ptr`, most significant PAC
/// bit into the highest field position. Throws PreconditionError for a
/// non-canonical pointer and ParamError for a PAC wider than the field.
uint64_t insert_pac(uint64_t ptr, uint64_t pac, const PointerLayout& layout);

/// Reads the PAC field back in the same bit order insert_pac writes it.
uint64_t extract_pac(uint64_t ptr, const PointerLayout& layout);

/// Replaces the PAC field with copies of bit 55. Idempotent.
uint64_t strip_pac(uint64_t ptr, const PointerLayout& layout);

/// Architecturally invalid pointer produced by a failed authentication:
/// strip_pac(ptr) with bit 62 inverted and the key class in bits 61:60. When
/// the range ignores its top byte, bit 54 is inverted as well so the result
/// still cannot translate.
uint64_t poison(uint64_t ptr, KeyClass key, const PointerLayout& layout);

/// Recovers the key class if `addr` has exactly the shape poison() produces.
std::optional<KeyClass> poisoned_key(uint64_t addr, const PointerLayout& layout);

}  // namespace kpac
