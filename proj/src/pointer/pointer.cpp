#include "kpac/pointer.hpp"

#include <array>
#include <string>

#include "kpac/error.hpp"

namespace kpac {

std::string_view to_string(KeyClass k) {
  switch (k) {
    case KeyClass::IA: return "IA";
    case KeyClass::IB: return "IB";
    case KeyClass::DA: return "DA";
    case KeyClass::DB: return "DB";
    case KeyClass::GA: return "GA";
  }
  return "?";
}

std::optional<KeyClass> parse_key_class(std::string_view s) {
  if (s.size() != 2) return std::nullopt;
  const char a = static_cast<char>(s[0] | 0x20);
  const char b = static_cast<char>(s[1] | 0x20);
  if (a == 'i' && b == 'a') return KeyClass::IA;
  if (a == 'i' && b == 'b') return KeyClass::IB;
  if (a == 'd' && b == 'a') return KeyClass::DA;
  if (a == 'd' && b == 'b') return KeyClass::DB;
  if (a == 'g' && b == 'a') return KeyClass::GA;
  return std::nullopt;
}

std::string_view to_string(AddressClass c) {
  switch (c) {
    case AddressClass::User: return "User";
    case AddressClass::Kernel: return "Kernel";
    case AddressClass::Invalid: return "Invalid";
  }
  return "?";
}

void PointerLayout::validate() const {
  if (va_bits < kMinVaBits || va_bits > kMaxVaBits) {
    throw ParamError("va_bits must be in [32, 52], got " + std::to_string(va_bits));
  }
}

namespace {

constexpr uint64_t bits(int hi, int lo) {
  const uint64_t top = hi == 63 ? ~uint64_t{0} : ((uint64_t{1} << (hi + 1)) - 1);
  return top & ~((uint64_t{1} << lo) - 1);
}

// Field positions from most to least significant.
struct FieldPositions {
  std::array<uint8_t, 32> pos{};
  int count = 0;
};

FieldPositions positions(const PointerLayout& layout, AddressClass space) {
  FieldPositions f;
  if (!layout.tbi(space)) {
    for (int b = 63; b >= 56; --b) f.pos[f.count++] = static_cast<uint8_t>(b);
  }
  for (int b = 54; b >= layout.va_bits; --b) f.pos[f.count++] = static_cast<uint8_t>(b);
  return f;
}

}  // namespace

int pac_width(const PointerLayout& layout, AddressClass space) {
  if (space == AddressClass::Invalid) throw ParamError("pac_width: Invalid is not an address space");
  layout.validate();
  return 63 - layout.va_bits - (layout.tbi(space) ? 8 : 0);
}

uint64_t pac_field_mask(const PointerLayout& layout, AddressClass space) {
  if (space == AddressClass::Invalid) throw ParamError("pac_field_mask: Invalid is not an address space");
  uint64_t m = bits(54, layout.va_bits);
  if (!layout.tbi(space)) m |= bits(63, 56);
  return m;
}

AddressClass classify(uint64_t addr, const PointerLayout& layout) {
  const AddressClass space = space_of(addr);
  const uint64_t ext = pac_field_mask(layout, space);
  const uint64_t want = space == AddressClass::Kernel ? ext : 0;
  return (addr & ext) == want ? space : AddressClass::Invalid;
}

uint64_t insert_pac(uint64_t ptr, uint64_t pac, const PointerLayout& layout) {
  if (!is_canonical(ptr, layout)) {
    throw PreconditionError("insert_pac: pointer is not canonical (already signed?)");
  }
  const AddressClass space = space_of(ptr);
  const FieldPositions f = positions(layout, space);
  if (f.count < 64 && (pac >> f.count) != 0) {
    throw ParamError("insert_pac: PAC wider than the " + std::to_string(f.count) + "-bit field");
  }
  uint64_t out = ptr & ~pac_field_mask(layout, space);
  for (int i = 0; i < f.count; ++i) {
    const uint64_t bit = (pac >> (f.count - 1 - i)) & 1;
    out |= bit << f.pos[i];
  }
  return out;
}

uint64_t extract_pac(uint64_t ptr, const PointerLayout& layout) {
  const FieldPositions f = positions(layout, space_of(ptr));
  uint64_t pac = 0;
  for (int i = 0; i < f.count; ++i) pac = (pac << 1) | ((ptr >> f.pos[i]) & 1);
  return pac;
}

uint64_t strip_pac(uint64_t ptr, const PointerLayout& layout) {
  const AddressClass space = space_of(ptr);
  const uint64_t m = pac_field_mask(layout, space);
  return space == AddressClass::Kernel ? (ptr | m) : (ptr & ~m);
}

uint64_t poison(uint64_t ptr, KeyClass key, const PointerLayout& layout) {
  const AddressClass space = space_of(ptr);
  uint64_t out = strip_pac(ptr, layout);
  out ^= uint64_t{1} << 62;
  out = (out & ~bits(61, 60)) | (uint64_t{static_cast<uint8_t>(key) & 3u} << 60);
  if (layout.tbi(space)) out ^= uint64_t{1} << 54;
  return out;
}

std::optional<KeyClass> poisoned_key(uint64_t addr, const PointerLayout& layout) {
  const AddressClass space = space_of(addr);
  const uint64_t x = (addr >> 55) & 1;
  const uint64_t sign = x ? ~uint64_t{0} : 0;
  uint64_t must_match;
  if (layout.tbi(space)) {
    if (((addr >> 54) & 1) == x) return std::nullopt;
    must_match = bits(53, layout.va_bits);
  } else {
    if (((addr >> 62) & 1) == x) return std::nullopt;
    must_match = bits(63, 63) | bits(59, 56) | bits(54, layout.va_bits);
  }
  if ((addr & must_match) != (sign & must_match)) return std::nullopt;
  return static_cast<KeyClass>((addr >> 60) & 3);
}

}  // namespace kpac
