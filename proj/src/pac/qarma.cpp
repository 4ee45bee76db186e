#include "kpac/qarma.hpp"

#include <array>
#include <string>

#include "kpac/error.hpp"

namespace kpac {
namespace {

// State layout: cell i is the nibble at bits [63-4i : 60-4i], i.e. cell 0 is
// the most significant nibble, and cells form a 4x4 matrix in row-major order.

using Perm = std::array<uint8_t, 16>;

constexpr uint64_t kAlpha = 0xC0AC29B7C97C50DDull;

constexpr std::array<uint64_t, kQarmaMaxRounds> kRoundConstants = {
    0x0000000000000000ull, 0x13198A2E03707344ull, 0xA4093822299F31D0ull,
    0x082EFA98EC4E6C89ull, 0x452821E638D01377ull, 0xBE5466CF34E90C6Cull,
    0x3F84D5B5B5470917ull, 0x9216D5D98979FB1Bull};

constexpr std::array<Perm, 3> kSboxes = {{
    {0, 14, 2, 10, 9, 15, 8, 11, 6, 4, 3, 7, 13, 12, 1, 5},
    {10, 13, 14, 6, 15, 7, 3, 5, 9, 8, 0, 12, 11, 1, 2, 4},
    {11, 6, 8, 15, 12, 0, 9, 14, 3, 7, 4, 5, 13, 2, 1, 10},
}};

constexpr Perm kTau = {0, 11, 6, 13, 10, 1, 12, 7, 5, 14, 3, 8, 15, 4, 9, 2};
constexpr Perm kTweakPerm = {6, 5, 14, 15, 0, 1, 2, 3, 7, 12, 13, 4, 8, 9, 10, 11};

constexpr Perm invert(const Perm& p) {
  Perm q{};
  for (int i = 0; i < 16; ++i) q[p[i]] = static_cast<uint8_t>(i);
  return q;
}

constexpr Perm kTauInv = invert(kTau);
constexpr Perm kTweakPermInv = invert(kTweakPerm);

constexpr uint8_t cell(uint64_t x, int i) { return (x >> (60 - 4 * i)) & 0xF; }

constexpr uint64_t permute(uint64_t x, const Perm& p) {
  uint64_t out = 0;
  for (int i = 0; i < 16; ++i) out |= uint64_t{cell(x, p[i])} << (60 - 4 * i);
  return out;
}

constexpr uint8_t rotl4(uint8_t v, int n) { return ((v << n) | (v >> (4 - n))) & 0xF; }

// MixColumns with the involutory circulant circ(0, rho, rho^2, rho).
constexpr uint64_t mix_columns(uint64_t x) {
  constexpr int m[4][4] = {{0, 1, 2, 1}, {1, 0, 1, 2}, {2, 1, 0, 1}, {1, 2, 1, 0}};
  uint64_t out = 0;
  for (int row = 0; row < 4; ++row) {
    for (int col = 0; col < 4; ++col) {
      uint8_t v = 0;
      for (int k = 0; k < 4; ++k) {
        if (m[row][k] != 0) v ^= rotl4(cell(x, k * 4 + col), m[row][k]);
      }
      out |= uint64_t{v} << (60 - 4 * (row * 4 + col));
    }
  }
  return out;
}

// Byte-wide S-box tables: entry b maps both nibbles of b at once.
struct ByteSbox {
  std::array<uint8_t, 256> fwd{};
  std::array<uint8_t, 256> inv{};
};

constexpr ByteSbox make_byte_sbox(const Perm& s) {
  Perm si = invert(s);
  ByteSbox t;
  for (int b = 0; b < 256; ++b) {
    t.fwd[b] = static_cast<uint8_t>((s[b >> 4] << 4) | s[b & 0xF]);
    t.inv[b] = static_cast<uint8_t>((si[b >> 4] << 4) | si[b & 0xF]);
  }
  return t;
}

constexpr std::array<ByteSbox, 3> kByteSboxes = {
    make_byte_sbox(kSboxes[0]), make_byte_sbox(kSboxes[1]), make_byte_sbox(kSboxes[2])};

uint64_t substitute(uint64_t x, const std::array<uint8_t, 256>& table) {
  uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= uint64_t{table[(x >> (8 * i)) & 0xFF]} << (8 * i);
  return out;
}

// omega: (b3 b2 b1 b0) -> (b0^b1, b3, b2, b1)
constexpr uint8_t lfsr(uint8_t v) { return static_cast<uint8_t>((((v ^ (v >> 1)) & 1) << 3) | (v >> 1)); }
constexpr uint8_t lfsr_inv(uint8_t v) { return static_cast<uint8_t>(((v << 1) & 0xF) | (((v >> 3) ^ v) & 1)); }

// Tweak cells that pass through the LFSR on every update.
constexpr std::array<int, 7> kLfsrCells = {0, 1, 3, 4, 8, 11, 13};

template <uint8_t (*F)(uint8_t)>
constexpr uint64_t apply_lfsr(uint64_t x) {
  for (int i : kLfsrCells) {
    const int shift = 60 - 4 * i;
    const uint8_t v = F(static_cast<uint8_t>((x >> shift) & 0xF));
    x = (x & ~(uint64_t{0xF} << shift)) | (uint64_t{v} << shift);
  }
  return x;
}

constexpr uint64_t tweak_forward(uint64_t t) { return apply_lfsr<lfsr>(permute(t, kTweakPerm)); }
constexpr uint64_t tweak_backward(uint64_t t) { return permute(apply_lfsr<lfsr_inv>(t), kTweakPermInv); }

constexpr uint64_t orthomorphism(uint64_t w0) { return ((w0 >> 1) | (w0 << 63)) ^ (w0 >> 63); }

// Forward half: whitening, r rounds, forward full round. Returns the state
// entering the central reflector and leaves `tweak` at its r-th update.
uint64_t forward_half(uint64_t x, uint64_t& tweak, uint64_t k0, uint64_t w1, int rounds,
                      const ByteSbox& sb) {
  for (int i = 0; i < rounds; ++i) {
    x ^= k0 ^ tweak ^ kRoundConstants[i];
    tweak = tweak_forward(tweak);
    if (i != 0) x = mix_columns(permute(x, kTau));
    x = substitute(x, sb.fwd);
  }
  x ^= w1 ^ tweak;
  return substitute(mix_columns(permute(x, kTau)), sb.fwd);
}

uint64_t reflect(uint64_t x, uint64_t k1) {
  x = mix_columns(permute(x, kTau)) ^ k1;
  return permute(x, kTauInv);
}

uint64_t reflect_inv(uint64_t x, uint64_t k1) {
  x = permute(x, kTau) ^ k1;
  return permute(mix_columns(x), kTauInv);
}

// Exact inverse of forward_half given the tweak at its r-th update.
uint64_t forward_half_inv(uint64_t x, uint64_t tweak, uint64_t k0, uint64_t w1, int rounds,
                          const ByteSbox& sb) {
  x = permute(mix_columns(substitute(x, sb.inv)), kTauInv);
  x ^= w1 ^ tweak;
  for (int i = rounds - 1; i >= 0; --i) {
    x = substitute(x, sb.inv);
    if (i != 0) x = permute(mix_columns(x), kTauInv);
    tweak = tweak_backward(tweak);
    x ^= k0 ^ tweak ^ kRoundConstants[i];
  }
  return x;
}

uint64_t backward_half(uint64_t x, uint64_t tweak, uint64_t k0, uint64_t w0, int rounds,
                       const ByteSbox& sb) {
  x = permute(mix_columns(substitute(x, sb.inv)), kTauInv);
  x ^= w0 ^ tweak;
  for (int i = rounds - 1; i >= 0; --i) {
    tweak = tweak_backward(tweak);
    x = substitute(x, sb.inv);
    if (i != 0) x = permute(mix_columns(x), kTauInv);
    x ^= k0 ^ tweak ^ kRoundConstants[i] ^ kAlpha;
  }
  return x;
}

// Exact inverse of backward_half; `tweak` is the original tweak (update 0).
uint64_t backward_half_inv(uint64_t x, uint64_t tweak, uint64_t k0, uint64_t w0, int rounds,
                           const ByteSbox& sb) {
  for (int i = 0; i < rounds; ++i) {
    x ^= k0 ^ tweak ^ kRoundConstants[i] ^ kAlpha;
    if (i != 0) x = mix_columns(permute(x, kTau));
    x = substitute(x, sb.fwd);
    tweak = tweak_forward(tweak);
  }
  x ^= w0 ^ tweak;
  return substitute(mix_columns(permute(x, kTau)), sb.fwd);
}

uint64_t advance_tweak(uint64_t tweak, int rounds) {
  for (int i = 0; i < rounds; ++i) tweak = tweak_forward(tweak);
  return tweak;
}

}  // namespace

void validate(const CipherParams& params) {
  if (params.rounds < 1 || params.rounds > kQarmaMaxRounds) {
    throw ParamError("QARMA-64 rounds must be in [1, " + std::to_string(kQarmaMaxRounds) +
                     "], got " + std::to_string(params.rounds));
  }
  const auto s = static_cast<unsigned>(params.sbox);
  if (s > 2) throw ParamError("unknown QARMA S-box variant " + std::to_string(s));
}

uint64_t qarma64_encrypt(const PacKey& key, uint64_t tweak, uint64_t plaintext,
                         const CipherParams& params) {
  validate(params);
  const ByteSbox& sb = kByteSboxes[static_cast<size_t>(params.sbox)];
  const uint64_t w0 = key.hi;
  const uint64_t w1 = orthomorphism(w0);
  const uint64_t k0 = key.lo;

  uint64_t t = tweak;
  uint64_t x = forward_half(plaintext ^ w0, t, k0, w1, params.rounds, sb);
  x = reflect(x, k0);
  return backward_half(x, t, k0, w0, params.rounds, sb) ^ w1;
}

uint64_t qarma64_decrypt(const PacKey& key, uint64_t tweak, uint64_t ciphertext,
                         const CipherParams& params) {
  validate(params);
  const ByteSbox& sb = kByteSboxes[static_cast<size_t>(params.sbox)];
  const uint64_t w0 = key.hi;
  const uint64_t w1 = orthomorphism(w0);
  const uint64_t k0 = key.lo;

  const uint64_t t_r = advance_tweak(tweak, params.rounds);
  uint64_t x = backward_half_inv(ciphertext ^ w1, tweak, k0, w0, params.rounds, sb);
  x = reflect_inv(x, k0);
  return forward_half_inv(x, t_r, k0, w1, params.rounds, sb) ^ w0;
}

}  // namespace kpac
