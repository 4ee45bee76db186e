#include <gtest/gtest.h>

#include <random>

#include "kpac/error.hpp"
#include "kpac/isa.hpp"

namespace kpac {
namespace {

struct Vec {
  const char* text;
  uint32_t word;
};

// From tests/oracles/a64_oracle.py (clang integrated assembler, armv8.3-a).
constexpr Vec kVectors[] = {
    {"movz x9, #0xf0d0", 0xd29e1a09},
    {"movk x17, #0x1234, lsl #48", 0xf2e24691},
    {"mov x29, sp", 0x910003fd},
    {"add x0, x1, #40", 0x9100a020},
    {"sub sp, sp, #0x110", 0xd10443ff},
    {"bfi x9, x0, #16, #48", 0xb370bc09},
    {"ldr x8, [x0, #40]", 0xf9401408},
    {"str x30, [sp, #-16]!", 0xf81f0ffe},
    {"ldr x30, [sp], #16", 0xf84107fe},
    {"ldr x8, [x8, x1, lsl #3]", 0xf8617908},
    {"stp x29, x30, [sp, #-16]!", 0xa9bf7bfd},
    {"ldp x29, x30, [sp], #16", 0xa8c17bfd},
    {"pacib x30, x16", 0xdac1061e},
    {"autib x30, x16", 0xdac1161e},
    {"pacia x30, sp", 0xdac103fe},
    {"autdb x8, x9", 0xdac11d28},
    {"pacdb x8, x9", 0xdac10d28},
    {"xpaci x0", 0xdac143e0},
    {"pacga x0, x1, x2", 0x9ac23020},
    {"pacib1716", 0xd503215f},
    {"autib1716", 0xd50321df},
    {"blraa x8, x9", 0xd73f0909},
    {"blr x8", 0xd63f0100},
    {"br x17", 0xd61f0220},
    {"ret", 0xd65f03c0},
    {"svc #0", 0xd4000001},
    {"eret", 0xd69f03e0},
    {"msr apibkeyhi_el1, x17", 0xd5182171},
    {"msr apdbkeylo_el1, x16", 0xd5182250},
    {"mrs x0, apiakeylo_el1", 0xd5382100},
    {"msr sctlr_el1, x0", 0xd5181000},
    {"msr daifset, #2", 0xd50342df},
    {"msr daifclr, #2", 0xd50342ff},
    {"hlt #0", 0xd4400000},
    {"brk #1", 0xd4200020},
    {"nop", 0xd503201f},
};

TEST(Isa, EncodingsMatchAssembler) {
  for (const auto& v : kVectors) {
    const Instruction in = parse_instruction(v.text, 0);
    EXPECT_EQ(encode(in), v.word) << v.text;
    const auto d = decode(v.word);
    ASSERT_TRUE(d.has_value()) << v.text;
    EXPECT_EQ(*d, in) << v.text;
  }
}

TEST(Isa, BuildersMatchParser) {
  EXPECT_EQ(ins::movz(9, 0xf0d0), parse_instruction("movz x9, #0xf0d0", 0));
  EXPECT_EQ(ins::bfi(9, 0, 16, 48), parse_instruction("bfi x9, x0, #16, #48", 0));
  EXPECT_EQ(ins::stp(kFp, kLr, kSp, -16, AddrMode::PreIndex), parse_instruction("stp x29, x30, [sp, #-16]!", 0));
  EXPECT_EQ(ins::pac(KeyClass::IB, kLr, kIp0), parse_instruction("pacib lr, ip0", 0));
  EXPECT_EQ(ins::msr(SysReg::ApibKeyHi, kIp1), parse_instruction("msr apibkeyhi_el1, x17", 0));
  EXPECT_EQ(ins::mov_from_sp(kFp), parse_instruction("mov fp, sp", 0));
}

TEST(Isa, Branches) {
  const uint64_t pc = 0xffff000008000100;
  const Instruction bl = parse_instruction("bl 0xffff000008000000", pc);
  EXPECT_EQ(bl, ins::bl(-0x100));
  EXPECT_EQ(encode(bl), 0x97ffffc0u);
  auto resolve = [](std::string_view s) -> std::optional<uint64_t> {
    if (s == "target") return 0xffff000008000200;
    return std::nullopt;
  };
  EXPECT_EQ(parse_instruction("cbz x0, target", pc, resolve), ins::cbz(0, 0x100));
  EXPECT_THROW(parse_instruction("b nowhere", pc, resolve), ParseError);
  auto namer = [](uint64_t a) -> std::optional<std::string> {
    if (a == 0xffff000008000200) return "target";
    return std::nullopt;
  };
  EXPECT_EQ(format(ins::b(0x100), pc, namer), "b target");
}

TEST(Isa, DecodeEncodeRoundTripRandom) {
  std::mt19937 rng(1);
  int accepted = 0;
  for (int i = 0; i < 2'000'000; ++i) {
    const uint32_t w = rng();
    if (auto d = decode(w)) {
      ++accepted;
      EXPECT_EQ(encode(*d), w) << std::hex << w;
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(Isa, FormatParseRoundTrip) {
  std::mt19937 rng(2);
  const uint64_t pc = 0xffff000008010000;
  for (const auto& v : kVectors) {
    const Instruction in = *decode(v.word);
    EXPECT_EQ(parse_instruction(format(in, pc), pc), in) << v.text;
  }
  int n = 0;
  for (int i = 0; i < 4'000'000 && n < 5000; ++i) {
    if (auto d = decode(rng())) {
      ++n;
      const std::string t = format(*d, pc);
      EXPECT_EQ(parse_instruction(t, pc), *d) << t;
    }
  }
}

TEST(Isa, RejectsBadText) {
  EXPECT_THROW(parse_instruction("frob x0", 0), ParseError);
  EXPECT_THROW(parse_instruction("movz x0, #0x12345", 0), ParseError);
  EXPECT_THROW(parse_instruction("ldr x0, [x1, #3]", 0), ParseError);
  EXPECT_THROW(parse_instruction("bfi x0, x1, #0, #8", 0), ParseError);
}

TEST(Isa, Classification) {
  EXPECT_TRUE(is_pauth(ins::pac(KeyClass::IB, kLr, kIp0)));
  EXPECT_TRUE(is_pauth(ins::blraa(8, 9)));
  EXPECT_TRUE(is_pauth(ins::pacib1716()));
  EXPECT_TRUE(is_pauth_hint(ins::autib1716()));
  EXPECT_FALSE(is_pauth_hint(ins::aut(KeyClass::IB, kLr, kIp0)));
  EXPECT_FALSE(is_pauth(ins::blr(8)));
  EXPECT_EQ(key_of(SysReg::ApdbKeyHi), KeyClass::DB);
  EXPECT_TRUE(is_key_hi(key_hi_register(KeyClass::GA)));
  EXPECT_FALSE(is_key_register(SysReg::Sctlr));
}

}  // namespace
}  // namespace kpac
