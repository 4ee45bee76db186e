#pragma once

#include <cstdint>

#include "kpac/pointer.hpp"
#include "kpac/qarma.hpp"

namespace kpac {

/// Keyed 64-bit MAC behind every PAC. Implementations must be pure.
class MacFunction {
 public:
  virtual ~MacFunction() = default;
  virtual uint64_t operator()(const PacKey& key, uint64_t tweak, uint64_t data) const = 0;
};

class QarmaMac final : public MacFunction {
 public:
  explicit QarmaMac(CipherParams params = kArchitectedQarma);
  uint64_t operator()(const PacKey& key, uint64_t tweak, uint64_t data) const override;
  const CipherParams& params() const { return params_; }

 private:
  CipherParams params_;
};

/// Process-wide architected QARMA MAC.
const MacFunction& default_mac();

/// Truncated MAC of a canonical pointer: the low pac_width bits of
/// mac(key, modifier, pointer) for the pointer's address range.
/// Throws PreconditionError if `canonical_pointer` is not canonical.
uint64_t compute_pac(const PacKey& key, uint64_t canonical_pointer, uint64_t modifier,
                     const PointerLayout& layout, const MacFunction& mac = default_mac());

/// PACGA: upper 32 bits of mac(key, modifier, value), lower half zero.
uint64_t pac_generic(const PacKey& key, uint64_t value, uint64_t modifier,
                     const MacFunction& mac = default_mac());

}  // namespace kpac
