#include <gtest/gtest.h>

#include <random>

#include "kpac/error.hpp"
#include "kpac/pauth.hpp"

namespace kpac {
namespace {

KeyBank test_bank() {
  KeyBank b;
  std::mt19937_64 rng(99);
  for (auto& k : b.keys) k = PacKey{rng(), rng()};
  return b;
}

const PointerLayout kLayout{48, false, false};
constexpr uint64_t kFn = 0xffff000008001230;

TEST(Pauth, Modifiers) {
  EXPECT_EQ(ra_modifier(ModifierScheme::SpOnly, 0xffff80001000ffe0, kFn, 7), 0xffff80001000ffe0ull);
  EXPECT_EQ(ra_modifier(ModifierScheme::Proposed, 0xffff80001000ffe0, kFn, 7), 0x1000ffe008001230ull);
  EXPECT_EQ(ra_modifier(ModifierScheme::Compat1716, 0xffff80001000ffe0, kFn, 7), 0x1000ffe008001230ull);
  EXPECT_EQ(ra_modifier(ModifierScheme::PartsLike, 0xffff80001000ffe0, kFn, 0x1234), 0xffe0000000001234ull);
  EXPECT_THROW(ra_modifier(ModifierScheme::None, 0, 0, 0), ParamError);
  static_assert(ptr_modifier(0xffff00000a000040, 0xf0d0) == 0x00000a000040f0d0ull);
}

TEST(Pauth, SchemeNames) {
  for (auto s : {ModifierScheme::None, ModifierScheme::SpOnly, ModifierScheme::Proposed, ModifierScheme::PartsLike,
                 ModifierScheme::Compat1716}) {
    EXPECT_EQ(parse_scheme(to_string(s)), s);
  }
  EXPECT_EQ(parse_scheme("bogus"), std::nullopt);
  EXPECT_EQ(parse_key_class("IB"), KeyClass::IB);
  EXPECT_EQ(parse_key_class("db"), KeyClass::DB);
  EXPECT_EQ(parse_key_class("xx"), std::nullopt);
}

TEST(Pauth, SignAuthRoundTripAndMismatch) {
  const KeyBank bank = test_bank();
  const PacControl ctl;
  const uint64_t mod = 0x1000ffe008001230;
  for (KeyClass k : {KeyClass::IA, KeyClass::IB, KeyClass::DA, KeyClass::DB}) {
    const uint64_t s = exec_pac(bank, ctl, k, kFn, mod, kLayout);
    EXPECT_NE(s, kFn);
    auto ok = authenticate(bank, ctl, k, s, mod, kLayout);
    EXPECT_TRUE(ok.ok);
    EXPECT_EQ(ok.value, kFn);
    auto bad = authenticate(bank, ctl, k, s, mod ^ 1, kLayout);
    EXPECT_FALSE(bad.ok);
    EXPECT_EQ(bad.value, poison(s, k, kLayout));
    EXPECT_FALSE(is_canonical(bad.value, kLayout));
    EXPECT_EQ(exec_xpac(s, kLayout), kFn);
  }
}

TEST(Pauth, KeysAreIndependent) {
  const KeyBank bank = test_bank();
  const uint64_t a = exec_pac(bank, PacControl{}, KeyClass::IA, kFn, 5, kLayout);
  const uint64_t b = exec_pac(bank, PacControl{}, KeyClass::IB, kFn, 5, kLayout);
  EXPECT_NE(a, b);
  EXPECT_FALSE(authenticate(bank, PacControl{}, KeyClass::IB, a, 5, kLayout).ok);
}

TEST(Pauth, DisabledKeyIsIdentity) {
  const KeyBank bank = test_bank();
  PacControl ctl;
  ctl.enable_ib = false;
  EXPECT_EQ(exec_pac(bank, ctl, KeyClass::IB, kFn, 5, kLayout), kFn);
  auto r = authenticate(bank, ctl, KeyClass::IB, 0x1234000008001230, 5, kLayout);
  EXPECT_FALSE(r.checked);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.value, 0x1234000008001230ull);
}

TEST(Pauth, SctlrBits) {
  EXPECT_EQ(PacControl{}.to_sctlr(), PacControl::kAllEnableBits);
  EXPECT_EQ(PacControl::from_sctlr(0), PacControl::all_disabled());
  PacControl c = PacControl::from_sctlr(uint64_t{1} << PacControl::kEnDB);
  EXPECT_TRUE(c.enable_db);
  EXPECT_FALSE(c.enable_ia);
  EXPECT_TRUE(c.enabled(KeyClass::GA));
}

TEST(Pauth, StrictPacRejectsSignedInput) {
  const KeyBank bank = test_bank();
  const uint64_t s = exec_pac(bank, PacControl{}, KeyClass::IA, kFn, 5, kLayout);
  EXPECT_THROW(exec_pac(bank, PacControl{}, KeyClass::IA, s, 5, kLayout), PreconditionError);
  const uint64_t hw = exec_pac_hw(bank, PacControl{}, KeyClass::IA, s, 5, kLayout);
  EXPECT_FALSE(authenticate(bank, PacControl{}, KeyClass::IA, hw, 5, kLayout).ok);
}

TEST(Pauth, Hint1716) {
  const KeyBank bank = test_bank();
  Regs1716 r{0x1000ffe008001230, kFn};
  const Regs1716 signed_regs = exec_pacib1716(bank, PacControl{}, r, kLayout, true);
  EXPECT_EQ(signed_regs.x17, exec_pac(bank, PacControl{}, KeyClass::IB, kFn, r.x16, kLayout));
  bool ok = false;
  EXPECT_EQ(exec_autib1716(bank, PacControl{}, signed_regs, kLayout, true, &ok).x17, kFn);
  EXPECT_TRUE(ok);
  Regs1716 tampered = signed_regs;
  tampered.x16 ^= 0x10;
  exec_autib1716(bank, PacControl{}, tampered, kLayout, true, &ok);
  EXPECT_FALSE(ok);
  // Pre-8.3 cores execute the hint space as NOP.
  EXPECT_EQ(exec_pacib1716(bank, PacControl{}, r, kLayout, false).x17, kFn);
  EXPECT_EQ(exec_autib1716(bank, PacControl{}, tampered, kLayout, false).x17, tampered.x17);
}

}  // namespace
}  // namespace kpac
