#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "kpac/error.hpp"
#include "kpac/instrument.hpp"
#include "kpac/system.hpp"

namespace kpac {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kScenarioDir = KPAC_SCENARIO_DIR;

constexpr ModifierScheme kAll[] = {ModifierScheme::None, ModifierScheme::SpOnly, ModifierScheme::Proposed,
                                   ModifierScheme::PartsLike, ModifierScheme::Compat1716};

TEST(Instrument, ParseAndFormatRoundTrip) {
  const IrModule m = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  EXPECT_EQ(m.functions.size(), 8u);
  EXPECT_EQ(m.inits.size(), 3u);
  EXPECT_EQ(m.inits[0].field, "file.f_ops");
  EXPECT_EQ(format_ir(parse_ir(format_ir(m))), format_ir(m));
}

TEST(Instrument, ParseErrors) {
  EXPECT_THROW(parse_ir("func f\n  frob\nend\n"), ParseError);
  EXPECT_THROW(parse_ir("func f\n  compute 1\n"), ParseError);
  EXPECT_THROW(parse_ir("field a.b offset=4 const=1\n"), ParseError);
  EXPECT_THROW(parse_ir("field a.b offset=8 const=1\nfield a.c offset=16 const=1\n"), ParseError);
  EXPECT_THROW(parse_ir("func f\n  call g\nend\n"), ParseError);
  EXPECT_THROW(parse_ir("syscall 0 = f\nfunc f\nend\n"), ParseError);
  try {
    parse_ir("func f\n  compute 1\n  repeat 2\nend\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.line(), 0);
  }
}

TEST(Instrument, FrameShapes) {
  const FramePair p = frame_code("function", ModifierScheme::Proposed);
  const AsmLines listing = {"adr x16, function", "mov x17, sp", "bfi x16, x17, #32, #32", "pacib x30, x16",
                            "stp x29, x30, [sp, #-16]!", "mov x29, sp"};
  EXPECT_EQ(p.prologue, listing);
  EXPECT_EQ(p.epilogue.back(), "ret");
  EXPECT_EQ(p.epilogue[p.epilogue.size() - 2], "autib x30, x16");
  const FramePair s = frame_code("f", ModifierScheme::SpOnly);
  EXPECT_EQ(s.prologue.front(), "pacia x30, sp");
  EXPECT_EQ(extra_instructions_per_call(ModifierScheme::None), 0);
  EXPECT_EQ(extra_instructions_per_call(ModifierScheme::SpOnly), 2);
  EXPECT_EQ(extra_instructions_per_call(ModifierScheme::Proposed), 8);
  EXPECT_GE(extra_instructions_per_call(ModifierScheme::PartsLike), 8);
  const FramePair c = frame_code("f", ModifierScheme::Compat1716);
  for (const auto& l : c.prologue) EXPECT_EQ(l.find("pacib "), std::string::npos) << l;
}

TEST(Instrument, EpilogueRebuildsPrologueModifier) {
  for (ModifierScheme s : {ModifierScheme::Proposed, ModifierScheme::PartsLike, ModifierScheme::Compat1716}) {
    const FramePair f = frame_code("fn", s);
    // Modifier computation is the prologue up to the signing instruction.
    AsmLines pro(f.prologue.begin(), f.prologue.end());
    AsmLines epi(f.epilogue.begin() + 1, f.epilogue.end());
    const size_t n = s == ModifierScheme::PartsLike ? 5 : 3;
    EXPECT_TRUE(std::equal(pro.begin(), pro.begin() + n, epi.begin())) << to_string(s);
  }
}

TEST(Instrument, GetterMatchesListingShape) {
  FieldDecl f{"file", "f_ops", 0xfb45, 40, Protection::OpsPointer, 0};
  const Accessors a = gen_accessors(f, 0, ModifierScheme::Proposed);
  const AsmLines getter = {"ldr x8, [x0, #40]", "movz x9, #0xfb45", "bfi x9, x0, #16, #48", "autdb x8, x9"};
  EXPECT_EQ(a.getter, getter);
  const AsmLines setter = {"movz x9, #0xfb45", "bfi x9, x0, #16, #48", "pacdb x8, x9", "str x8, [x0, #40]"};
  EXPECT_EQ(a.setter, setter);
  EXPECT_EQ(gen_accessors(f, 0, ModifierScheme::None).getter, AsmLines{"ldr x8, [x0, #40]"});
}

TEST(Instrument, SigningTable) {
  const IrModule m = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  const Program p = build_image(m, ModifierScheme::Proposed);
  const auto t = build_signing_table(m, p, ModifierScheme::Proposed);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t, p.signing_table);
  for (const auto& e : t) EXPECT_EQ(e.object_base() % 16, 0u);
  EXPECT_EQ(t[0].location, p.require("file0") + 40);
  EXPECT_EQ(t[2].key, KeyClass::IA);
  EXPECT_TRUE(build_signing_table(m, p, ModifierScheme::None).empty());
  const IrModule empty = parse_ir("func f\nend\n");
  EXPECT_TRUE(build_signing_table(empty, build_image(empty, ModifierScheme::Proposed), ModifierScheme::Proposed).empty());
  EXPECT_THROW(build_signing_table(m, Program{}, ModifierScheme::Proposed), LinkError);
}

TEST(Instrument, BootedImagesRunCleanUnderEveryScheme) {
  const IrModule m = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  std::vector<uint64_t> expected;
  for (ModifierScheme s : kAll) {
    BootOptions o;
    o.scheme = s;
    o.threads = {ThreadSetup{0, {1, 2, 3, 1}}};
    System sys = boot_kernel(build_image(m, s), o);
    ASSERT_TRUE(sys.verify.accepted()) << sys.verify.text();
    const Outcome& out = sys.machine.run();
    ASSERT_EQ(out.kind, Outcome::Kind::CleanExit) << to_string(s) << ": " << describe(out);
    const auto& r = sys.machine.threads()[0].returns;
    const std::vector<uint64_t> got(r.begin() + 1, r.end());
    EXPECT_EQ(got, (std::vector<uint64_t>{3, 11, 7, 3})) << to_string(s);
    EXPECT_EQ(sys.machine.counters().auth_failures, 0u);
  }
}

TEST(Instrument, DoubleSigningIsDetected) {
  const IrModule m = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  const Program p = build_image(m, ModifierScheme::Proposed);
  System sys = boot_kernel(p, BootOptions{});
  EXPECT_THROW(boot_sign(sys.machine, p.signing_table), PreconditionError);
  std::vector<SigningTableEntry> bad = {SigningTableEntry{0xffff0000dead0000, KeyClass::DB, 1, 0}};
  EXPECT_THROW(boot_sign(sys.machine, bad), BootError);
}

TEST(Instrument, VerifyImage) {
  const IrModule m = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  for (ModifierScheme s : kAll) EXPECT_TRUE(verify_image(build_image(m, s)).accepted()) << to_string(s);

  auto with = [](const std::string& body) {
    return build_image(parse_ir("func f\n" + body + "end\n"), ModifierScheme::Proposed);
  };
  const VerifyReport mrs = verify_image(with("  asm \"mrs x0, apibkeylo_el1\"\n"));
  ASSERT_EQ(mrs.findings.size(), 1u);
  EXPECT_NE(mrs.text().find("key register"), std::string::npos);
  EXPECT_FALSE(verify_image(with("  asm \"movz x0, #0\"\n  asm \"msr sctlr_el1, x0\"\n")).accepted());
  EXPECT_FALSE(verify_image(with("  asm \"msr sctlr_el1, x3\"\n")).accepted());
  EXPECT_TRUE(verify_image(with("  asm \"movz x0, #0x2000\"\n  asm \"movk x0, #0xc800, lsl #16\"\n"
                                "  asm \"msr sctlr_el1, x0\"\n"))
                  .accepted());

  Program setter;
  KeyBank kb;
  setter.sections.push_back(generate_key_setter(kb, kernel_keys(ModifierScheme::Proposed), ImageLayout{}.setter));
  EXPECT_TRUE(verify_image(setter).accepted());

  Program junk = with("  compute 1\n");
  junk.write32(junk.require("f.body"), 0xffffffff);
  EXPECT_FALSE(verify_image(junk).accepted());
}

TEST(Instrument, LateModuleIsSignedInPlace) {
  const IrModule kernel = parse_ir(read_file(kScenarioDir + "/fileops.ir"));
  System sys = boot_kernel(build_image(kernel, ModifierScheme::Proposed), BootOptions{});
  const IrModule mod = parse_ir(R"(
field dev.ops offset=8 const=0x7711 prot=ops
field dev.cb offset=16 const=0x7712 prot=fnptr
object dev0 type=dev size=32
optable dev_ops dev_probe
init dev0.ops = dev_ops
init dev0.cb = dev_probe
func dev_probe
  compute 4
end
func dev_entry
  objaddr x0, dev0
  icall x0, dev.ops, 0
  icall x0, dev.cb
end
)");
  const Program p = build_image(mod, ModifierScheme::Proposed, kModuleLayout);
  const uint64_t raw = p.read64(p.require("dev0") + 8);
  ASSERT_TRUE(load_module(sys, p).accepted());
  EXPECT_NE(sys.machine.memory().load64(p.require("dev0") + 8), raw);
  Machine& mach = sys.machine;
  mach.set_el(El::EL1);
  mach.set_sp(El::EL1, default_kstack(0) + 0x2000);
  mach.set_x(10, 0);
  ASSERT_TRUE(mach.call(mach.kernel().setter_base));  // user keys are live at EL0
  ASSERT_TRUE(mach.call(p.require("dev_entry"))) << describe(mach.outcome());
  EXPECT_EQ(mach.x(10), 8u);
}

}  // namespace
}  // namespace kpac
