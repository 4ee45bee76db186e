#include <gtest/gtest.h>

#include <random>

#include "kpac/error.hpp"
#include "kpac/mac.hpp"
#include "kpac/qarma.hpp"

using namespace kpac;

namespace {

constexpr PacKey kRefKey{0x84be85ce9804e94b, 0xec2802d4e0a488e9};
constexpr uint64_t kRefPlain = 0xfb623599da6e8127;
constexpr uint64_t kRefTweak = 0x477d469dec0b8762;

struct Published {
  Sbox sbox;
  int rounds;
  uint64_t ct;
};

// QARMA-64 reference vectors for the key/tweak/plaintext above.
constexpr Published kPublished[] = {
    {Sbox::Sigma0, 5, 0x3ee99a6c82af0c38}, {Sbox::Sigma0, 6, 0x9f5c41ec525603c9},
    {Sbox::Sigma0, 7, 0xbcaf6c89de930765}, {Sbox::Sigma1, 5, 0x544b0ab95bda7c3a},
    {Sbox::Sigma1, 6, 0xa512dd1e4e3ec582}, {Sbox::Sigma1, 7, 0xedf67ff370a483f2},
    {Sbox::Sigma2, 5, 0xc003b93999b33765}, {Sbox::Sigma2, 6, 0x270a787275c48d10},
    {Sbox::Sigma2, 7, 0x5c06a7501b63b2fd},
};

struct Frozen {
  uint64_t hi, lo, tweak, plain, ct;
};

// Produced by tests/oracles/qarma_oracle.py (architected instance), seed 20191115.
constexpr Frozen kOracle[] = {
    {0x9b23ae54f7b5b59e, 0xe101210fcbc253ce, 0x1e210a5f9db365a7, 0xf661acfeb3f2ed62, 0xbb792da3e01fb9e2},
    {0x3a37991765886b2b, 0xcd2dc489ac4000bb, 0x419fa0c3dd78b429, 0x33bbad27d7a53a11, 0x6146583ddadbb33e},
    {0xe8c883a934fd59b8, 0x8f7406503ca77b74, 0x162b52b5ba06fd7c, 0xc3478bc4f6900273, 0x95e931f31b7f3887},
    {0x8a7a9562047ec17b, 0x9df7ecd1ae51293f, 0x8600bf618740f73e, 0x3fe64b6f387271e7, 0x8ffd145854f75f3d},
    {0xc81d96704cc5dd52, 0x2536ffb643801491, 0x9fe09a015b238829, 0x4218ad2f5a1ce344, 0xf221a22e75aae4e3},
    {0x5cd8cdc5ed96da0f, 0x7b48b3d1f0378221, 0xffed72a636c3889a, 0x45a3416104065b10, 0xc9022ab0818921dc},
    {0xfbfa636bede30ae9, 0xdfb0a42baa54c0f5, 0xa25076f6d982548d, 0x26e33a65042be14c, 0x256f028f40fa7eb2},
    {0xf5c4bed1ef00b2d8, 0xbc55cda2e9fe70e0, 0x976ed4c74f26381b, 0x6c277b5211d76c54, 0x8172ab8be1367d41},
};

}  // namespace

TEST(Qarma, PublishedVectors) {
  for (const auto& v : kPublished) {
    CipherParams p{v.rounds, v.sbox};
    EXPECT_EQ(qarma64_encrypt(kRefKey, kRefTweak, kRefPlain, p), v.ct) << "rounds " << v.rounds;
    EXPECT_EQ(qarma64_decrypt(kRefKey, kRefTweak, v.ct, p), kRefPlain);
  }
}

TEST(Qarma, MatchesIndependentOracle) {
  for (const auto& v : kOracle) {
    EXPECT_EQ(qarma64_encrypt({v.hi, v.lo}, v.tweak, v.plain), v.ct);
  }
}

TEST(Qarma, DecryptInvertsEncrypt) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const PacKey k{rng(), rng()};
    const uint64_t t = rng(), p = rng();
    const CipherParams params{1 + static_cast<int>(rng() % kQarmaMaxRounds), static_cast<Sbox>(rng() % 3)};
    ASSERT_EQ(qarma64_decrypt(k, t, qarma64_encrypt(k, t, p, params), params), p);
  }
}

TEST(Qarma, TweakChangesOutput) {
  EXPECT_NE(qarma64_encrypt(kRefKey, kRefTweak, kRefPlain), qarma64_encrypt(kRefKey, kRefTweak ^ 1, kRefPlain));
}

TEST(Qarma, RejectsBadRounds) {
  EXPECT_THROW(qarma64_encrypt(kRefKey, 0, 0, {0, Sbox::Sigma2}), ParamError);
  EXPECT_THROW(qarma64_encrypt(kRefKey, 0, 0, {kQarmaMaxRounds + 1, Sbox::Sigma2}), ParamError);
  EXPECT_THROW(qarma64_decrypt(kRefKey, 0, 0, {-3, Sbox::Sigma0}), ParamError);
}

TEST(Qarma, SingleBitDiffusion) {
  std::mt19937_64 rng(7);
  const QarmaMac mac;
  for (int bit = 0; bit < 64; ++bit) {
    int changed_key = 0, changed_ptr = 0, changed_mod = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const PacKey k{rng(), rng()};
      const uint64_t m = rng(), p = rng();
      const uint64_t base = mac(k, m, p);
      changed_key += mac({k.hi ^ (uint64_t{1} << bit), k.lo}, m, p) != base;
      changed_mod += mac(k, m ^ (uint64_t{1} << bit), p) != base;
      changed_ptr += mac(k, m, p ^ (uint64_t{1} << bit)) != base;
    }
    EXPECT_GE(changed_key, 1);
    EXPECT_GE(changed_mod, 1);
    EXPECT_GE(changed_ptr, 1);
  }
}

TEST(Mac, ComputePacIsLowBitsOfCipher) {
  const PointerLayout layout;  // 48-bit VA, no TBI
  const uint64_t ptr = 0xffff000008123456, mod = 0x0800f0d008123456;
  const uint64_t full = qarma64_encrypt(kRefKey, mod, ptr);
  const uint64_t pac = compute_pac(kRefKey, ptr, mod, layout);
  EXPECT_EQ(pac, full & 0x7fff);
  EXPECT_LT(pac, 1u << 15);
  EXPECT_EQ(pac, compute_pac(kRefKey, ptr, mod, layout));
}

TEST(Mac, ComputePacRejectsNonCanonical) {
  EXPECT_THROW(compute_pac(kRefKey, 0x0001000000000000, 0, PointerLayout{}), PreconditionError);
}

TEST(Mac, PacGenericUpperHalf) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const PacKey k{rng(), rng()};
    const uint64_t v = rng(), m = rng();
    const uint64_t g = pac_generic(k, v, m);
    EXPECT_EQ(g & 0xFFFFFFFF, 0u);
    EXPECT_EQ(g, qarma64_encrypt(k, m, v) & 0xFFFFFFFF00000000);
    EXPECT_EQ(g, pac_generic(k, v, m));
  }
}
