#include <gtest/gtest.h>

#include "kpac/error.hpp"
#include "kpac/program.hpp"

namespace kpac {
namespace {

constexpr const char* kSource = R"(
.set answer 42
.section .text 0xffff000008000000 rx
.func entry 1
  stp x29, x30, [sp, #-16]!
  mov x29, sp
  bl helper
  ldp x29, x30, [sp], #16
  ret
.endfunc
.align 16
.func helper 2
  movz x0, #42
  cbz x0, helper
  ret
.endfunc
.section .data 0xffff00000a000000 rw
table:
  .quad helper
  .quad entry+8
  .word 7
  .byte 1
  .zero 3
.sign table ib 0x1234 0
)";

TEST(Program, AssemblesSymbolsAndFunctions) {
  const Program p = assemble(kSource);
  EXPECT_EQ(p.require("entry"), 0xffff000008000000ull);
  EXPECT_EQ(p.require("helper"), 0xffff000008000020ull);
  EXPECT_EQ(p.require("answer"), 42u);
  EXPECT_EQ(p.resolve("table+8"), 0xffff00000a000008ull);
  EXPECT_EQ(p.resolve("missing"), std::nullopt);
  EXPECT_THROW(p.require("missing"), LinkError);
  EXPECT_EQ(p.read64(p.require("table")), p.require("helper"));
  EXPECT_EQ(p.read64(p.require("table") + 8), p.require("entry") + 8);
  EXPECT_EQ(p.read32(p.require("table") + 16), 7u);
  ASSERT_EQ(p.functions.size(), 2u);
  EXPECT_EQ(p.function("helper")->id, 2u);
  EXPECT_EQ(p.function_at(0xffff000008000024)->name, "helper");
  EXPECT_EQ(p.function_at(0xffff000008000018), nullptr);  // alignment padding
  ASSERT_EQ(p.signing_table.size(), 1u);
  EXPECT_EQ(p.signing_table[0].key, KeyClass::IB);
  EXPECT_EQ(p.signing_table[0].const16, 0x1234);
  EXPECT_EQ(p.symbolize(0xffff000008000024), "helper+0x4");
  EXPECT_EQ(p.section_at(0xffff00000a000010)->name, ".data");
  EXPECT_EQ(p.section(".text")->perms, kPermR | kPermX);
  EXPECT_NO_THROW(p.validate());
}

TEST(Program, DisassembleRoundTrip) {
  const Program p = assemble(kSource);
  const std::string text = disassemble(p);
  const Program q = assemble(text);
  EXPECT_EQ(p, q) << text;
  EXPECT_EQ(disassemble(q), text);
}

TEST(Program, Errors) {
  try {
    assemble(".section .text 0x1000 rx\n  frob x0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(assemble("  nop\n"), ParseError);  // no section
  EXPECT_THROW(assemble(".section .text 0x1000 rx\na:\na:\n"), ParseError);
  EXPECT_THROW(assemble(".section .a 0x1000 rx\n nop\n.section .b 0x1000 rw\n .quad 1\n"), ParseError);
}

TEST(Program, MergeRejectsClashes) {
  Program a = assemble(".section .a 0x1000 rx\nx:\n nop\n");
  const Program b = assemble(".section .b 0x2000 rw\ny:\n .quad 0\n");
  EXPECT_THROW(assemble(".section .b 0x2000 rw\n .quad x\n"), ParseError);  // unresolved
  a.merge(b);
  EXPECT_EQ(a.require("y"), 0x2000u);
  EXPECT_THROW(a.merge(assemble(".section .c 0x1000 rw\n .quad 0\n")), LinkError);
  EXPECT_THROW(a.merge(assemble(".section .d 0x3000 rw\nx:\n .quad 0\n")), LinkError);
}

TEST(Program, Perms) {
  EXPECT_EQ(parse_perms("rwx"), kPermR | kPermW | kPermX);
  EXPECT_EQ(parse_perms("x"), kPermX);
  EXPECT_EQ(perm_string(kPermR | kPermX), "rx");
  EXPECT_THROW(parse_perms("q"), ParseError);
}

}  // namespace
}  // namespace kpac
