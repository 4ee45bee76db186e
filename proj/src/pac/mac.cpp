#include "kpac/mac.hpp"

#include "kpac/error.hpp"

namespace kpac {

QarmaMac::QarmaMac(CipherParams params) : params_(params) { validate(params_); }

uint64_t QarmaMac::operator()(const PacKey& key, uint64_t tweak, uint64_t data) const {
  return qarma64_encrypt(key, tweak, data, params_);
}

const MacFunction& default_mac() {
  static const QarmaMac mac;
  return mac;
}

uint64_t compute_pac(const PacKey& key, uint64_t canonical_pointer, uint64_t modifier,
                     const PointerLayout& layout, const MacFunction& mac) {
  if (!is_canonical(canonical_pointer, layout)) {
    throw PreconditionError("compute_pac: pointer is not canonical");
  }
  const int width = pac_width(layout, space_of(canonical_pointer));
  const uint64_t full = mac(key, modifier, canonical_pointer);
  return full & ((uint64_t{1} << width) - 1);
}

uint64_t pac_generic(const PacKey& key, uint64_t value, uint64_t modifier, const MacFunction& mac) {
  return mac(key, modifier, value) & 0xFFFFFFFF00000000ull;
}

}  // namespace kpac
