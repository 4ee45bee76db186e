#pragma once

#include <cstdint>

namespace kpac {

/// One 128-bit PAuth key, held as the two 64-bit halves of its system registers.
/// `hi` is the whitening key half (w0), `lo` the core key half (k0).
struct PacKey {
  uint64_t hi = 0;
  uint64_t lo = 0;

  bool operator==(const PacKey&) const = default;
};

/// S-box choice of the QARMA family.
enum class Sbox : uint8_t { Sigma0, Sigma1, Sigma2 };

struct CipherParams {
  int rounds = 5;
  Sbox sbox = Sbox::Sigma2;

  bool operator==(const CipherParams&) const = default;
};

/// The PAuth-architected QARMA-64 instance.
inline constexpr CipherParams kArchitectedQarma{5, Sbox::Sigma2};

inline constexpr int kQarmaMaxRounds = 8;

/// Throws ParamError unless 1 <= rounds <= kQarmaMaxRounds.
void validate(const CipherParams& params);

/// QARMA-64 encryption of `plaintext` under `key` and `tweak`.
uint64_t qarma64_encrypt(const PacKey& key, uint64_t tweak, uint64_t plaintext,
                         const CipherParams& params = kArchitectedQarma);

/// Inverse of qarma64_encrypt for the same key, tweak and params.
uint64_t qarma64_decrypt(const PacKey& key, uint64_t tweak, uint64_t ciphertext,
                         const CipherParams& params = kArchitectedQarma);

}  // namespace kpac
