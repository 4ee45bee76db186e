#include <gtest/gtest.h>

#include <random>

#include "kpac/error.hpp"
#include "kpac/mac.hpp"
#include "kpac/pauth.hpp"
#include "kpac/pointer.hpp"

namespace kpac {
namespace {

struct SignVector {
  uint64_t key_hi, key_lo, ptr, modifier;
  int va_bits;
  bool tbi;
  uint64_t expect;
};

// From tests/oracles/pac_oracle.py (bit-enumeration insert, independent cipher).
constexpr SignVector kSignVectors[] = {
    {0x0123456789abcdef, 0xfedcba9876543210, 0xffff000008123456, 0x0800f0d008123456, 48, false, 0x55f3000008123456},
    {0x0123456789abcdef, 0xfedcba9876543210, 0xffff000008123456, 0x0000000000000000, 48, false, 0xc6e1000008123456},
    {0x0123456789abcdef, 0xfedcba9876543210, 0x0000000000400000, 0x0000000000001234, 48, true, 0x0078000000400000},
    {0x0123456789abcdef, 0xfedcba9876543210, 0xffffffff80001000, 0x000000000000aa55, 32, false, 0x89eb89b180001000},
    {0x2f564652466de486, 0x7e5fe38183faac57, 0xffffec7d9dd8904f, 0xd04ce50b0620f087, 45, true, 0xffd28c7d9dd8904f},
    {0x06e7df8e1eb1c66e, 0x817af708207473b7, 0x000061ae92e4016e, 0x2e09e4b8245edebc, 47, true, 0x0044e1ae92e4016e},
    {0xab195b4791d5d9ef, 0x3bd43e94a114f27e, 0x000000f3b7c03984, 0x7210d3dbe88f40a2, 42, true, 0x00579cf3b7c03984},
    {0x84492cd42b1141d6, 0xac0e36d556132dfb, 0xfffffffe5622276a, 0x9b70e7695b05816f, 33, false, 0x21ba84c85622276a},
};

PointerLayout layout_for(const SignVector& v) {
  return PointerLayout{v.va_bits, v.tbi, v.tbi};
}

TEST(Pointer, WidthFollowsVaAndTbi) {
  EXPECT_EQ(pac_width({48, false, false}, AddressClass::Kernel), 15);
  EXPECT_EQ(pac_width({48, true, false}, AddressClass::User), 7);
  EXPECT_EQ(pac_width({39, false, false}, AddressClass::User), 24);
  EXPECT_EQ(pac_width({52, true, true}, AddressClass::Kernel), 3);
  EXPECT_EQ(pac_width({32, false, false}, AddressClass::Kernel), 31);
  EXPECT_THROW(pac_width({48, false, false}, AddressClass::Invalid), ParamError);
}

TEST(Pointer, FieldMaskExcludesBit55) {
  const PointerLayout l{48, false, true};
  EXPECT_EQ(pac_field_mask(l, AddressClass::User), 0xff7f000000000000ull);
  EXPECT_EQ(pac_field_mask(l, AddressClass::Kernel), 0x007f000000000000ull);
}

TEST(Pointer, Classify) {
  const PointerLayout l{48, false, false};
  EXPECT_EQ(classify(0x0000ffffffffffffull, l), AddressClass::User);
  EXPECT_EQ(classify(0xffff000000000000ull, l), AddressClass::Kernel);
  EXPECT_EQ(classify(0x0001000000000000ull, l), AddressClass::Invalid);
  EXPECT_EQ(classify(0xfffe000000000000ull, l), AddressClass::Invalid);
  const PointerLayout t{48, true, false};
  EXPECT_EQ(classify(0xab00000000400000ull, t), AddressClass::User);
  EXPECT_THROW(PointerLayout({31, false, false}).validate(), ParamError);
  EXPECT_THROW(PointerLayout({53, false, false}).validate(), ParamError);
}

TEST(Pointer, SignMatchesOracle) {
  for (const auto& v : kSignVectors) {
    const PointerLayout l = layout_for(v);
    KeyBank bank;
    bank[KeyClass::IA] = PacKey{v.key_hi, v.key_lo};
    EXPECT_EQ(exec_pac(bank, PacControl{}, KeyClass::IA, v.ptr, v.modifier, l), v.expect) << std::hex << v.ptr;
    const auto r = authenticate(bank, PacControl{}, KeyClass::IA, v.expect, v.modifier, l);
    EXPECT_TRUE(r.ok);
    EXPECT_EQ(r.value, v.ptr);
  }
}

TEST(Pointer, InsertExtractRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const PointerLayout l{static_cast<int>(32 + rng() % 21), (rng() & 1) != 0, (rng() & 1) != 0};
    const uint64_t low = rng() & ((uint64_t{1} << l.va_bits) - 1);
    const bool kernel = rng() & 1;
    const uint64_t ptr = kernel ? (low | ~((uint64_t{1} << l.va_bits) - 1)) : low;
    const auto space = kernel ? AddressClass::Kernel : AddressClass::User;
    const int w = pac_width(l, space);
    const uint64_t pac = rng() & ((uint64_t{1} << w) - 1);
    const uint64_t s = insert_pac(ptr, pac, l);
    EXPECT_EQ(extract_pac(s, l), pac);
    EXPECT_EQ(strip_pac(s, l), ptr);
    EXPECT_EQ(strip_pac(strip_pac(s, l), l), ptr);
    EXPECT_EQ(s & ~pac_field_mask(l, space), ptr & ~pac_field_mask(l, space));
  }
}

TEST(Pointer, InsertRejects) {
  const PointerLayout l{48, false, false};
  EXPECT_THROW(insert_pac(0x0001000000000000ull, 1, l), PreconditionError);
  EXPECT_THROW(insert_pac(0x1000, uint64_t{1} << 15, l), ParamError);
}

TEST(Pointer, PoisonShape) {
  const PointerLayout l{48, false, false};
  const uint64_t p = poison(0x55f3000008123456ull, KeyClass::DB, l);
  EXPECT_EQ(p, 0xbfff000008123456ull);
  EXPECT_FALSE(is_canonical(p, l));
  EXPECT_EQ(poisoned_key(p, l), KeyClass::DB);
  for (KeyClass k : {KeyClass::IA, KeyClass::IB, KeyClass::DA, KeyClass::DB}) {
    const uint64_t q = poison(0x0000000000400000ull, k, l);
    EXPECT_EQ(poisoned_key(q, l), k);
    EXPECT_FALSE(is_canonical(q, l));
  }
  const PointerLayout t{48, true, true};
  const uint64_t u = poison(0x0000000000400000ull, KeyClass::IA, t);
  EXPECT_FALSE(is_canonical(u, t));
  EXPECT_EQ(poisoned_key(u, t), KeyClass::IA);
  EXPECT_EQ(poisoned_key(0x0000000000400000ull, t), std::nullopt);
}

TEST(Pointer, PacGenericMatchesOracle) {
  struct G { uint64_t hi, lo, value, modifier, expect; };
  constexpr G kVec[] = {
      {0x6754614c64ffc604, 0xbcfdc56a522162b3, 0xc958a7924e9a430c, 0x58282d8a2af2003c, 0x586c217800000000},
      {0x8f4c6fc399f06659, 0x4498d7d67c213c12, 0x1428dfad70ce7993, 0xe144c4eecf3c3005, 0x3cf94c2200000000},
      {0xd84ae56db93ba169, 0x41b079157a6d7ff3, 0xf9c215672ac38adf, 0x2a83fb1d9c7c489a, 0x91151a7700000000},
      {0x4819dab3e928d1d5, 0x471968ce7b05bc1a, 0x159d9c16eb5c35d9, 0x19fc1a20e2110b06, 0x1c5573cf00000000},
  };
  for (const auto& g : kVec) EXPECT_EQ(pac_generic(PacKey{g.hi, g.lo}, g.value, g.modifier), g.expect);
}

}  // namespace
}  // namespace kpac
