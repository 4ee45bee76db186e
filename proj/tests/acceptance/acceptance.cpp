// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "kpac/harness.hpp"
#include "kpac/rng.hpp"

using namespace kpac;

namespace {

const std::filesystem::path kDir = KPAC_SCENARIO_DIR;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ScenarioResult run(const Scenario& s, ModifierScheme scheme, MachineConfig machine = {}) {
  RunOptions o;
  o.scheme = scheme;
  o.machine = machine;
  return run_scenario(s, o);
}

// ---------------------------------------------------------------------------

Check cipher() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const PacKey key{0x84be85ce9804e94b, 0xec2802d4e0a488e9};
  const uint64_t tweak = 0x477d469dec0b8762, plain = 0xfb623599da6e8127;
  struct V {
    Sbox sbox;
    int rounds;
    uint64_t ct;
  };
  const V published[] = {{Sbox::Sigma0, 5, 0x3ee99a6c82af0c38}, {Sbox::Sigma1, 5, 0x544b0ab95bda7c3a},
                         {Sbox::Sigma2, 5, 0xc003b93999b33765}, {Sbox::Sigma0, 7, 0xbcaf6c89de930765},
                         {Sbox::Sigma1, 7, 0xedf67ff370a483f2}, {Sbox::Sigma2, 7, 0x5c06a7501b63b2fd}};
  for (const auto& v : published)
    c.expect(qarma64_encrypt(key, tweak, plain, {v.rounds, v.sbox}) == v.ct, "published vector mismatch");
  SplitMix64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const PacKey k{rng(), rng()};
    const uint64_t t = rng(), p = rng();
    c.expect(qarma64_decrypt(k, t, qarma64_encrypt(k, t, p)) == p, "round trip failed");
  }
  const double s = seconds_since(t0);
  c.expect(s < 5.0, "too slow");
  c.detail += (c.detail.empty() ? "" : "; ") + std::to_string(s) + " s";
  return c;
}

Check geometry() {
  Check c;
  const int w48 = pac_width(PointerLayout{48, false, false}, AddressClass::Kernel);
  const int w32 = pac_width(PointerLayout{32, false, false}, AddressClass::Kernel);
  c.expect(w48 == 15, "48-bit width");
  c.expect(w32 == 31, "32-bit width");
  c.detail = "48-bit VA: " + std::to_string(w48) + " bits, 32-bit VA: " + std::to_string(w32) + " bits";
  return c;
}

Check round_trip() {
  Check c;
  SplitMix64 rng(3);
  const PointerLayout layout{};
  const KeyClass keys[] = {KeyClass::IA, KeyClass::IB, KeyClass::DA, KeyClass::DB};
  int failures = 0;
  for (int i = 0; i < 100000; ++i) {
    KeyBank bank;
    const KeyClass k = keys[i % 4];
    bank[k] = PacKey{rng(), rng()};
    const uint64_t low = rng() & 0x0000ffffffffffff;
    const uint64_t p = (i & 1) ? (low | 0xffff000000000000) : low & 0x00007fffffffffff;
    const uint64_t m = rng();
    const uint64_t s = exec_pac(bank, PacControl{}, k, p, m, layout);
    failures += exec_aut(bank, PacControl{}, k, s, m, layout) != p;
  }
  c.expect(failures == 0, std::to_string(failures) + " failures");
  if (c.ok) c.detail = "100000 pointers, 0 failures";
  return c;
}

Check forgery() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::string d;
  for (int bits : {4, 8, 12}) {
    const ForgeryResult r = forgery_rate(bits, 100000, 0);
    c.expect(r.within_3sigma(), "bits " + std::to_string(bits) + " outside 3 sigma");
    d += std::to_string(bits) + ":" + std::to_string(r.accepted) + "/100000 ";
  }
  const double s = seconds_since(t0);
  c.expect(s < 30.0, "too slow");
  if (c.ok) c.detail = d + std::to_string(s) + " s";
  return c;
}

Check attack_matrix() {
  Check c;
  for (const char* f : {"lr-overwrite.scn", "fnptr-inject.scn", "ops-swap.scn"}) {
    const Scenario s = load_scenario(kDir / f);
    c.expect(run(s, ModifierScheme::Proposed).outcome.kind == Outcome::Kind::AuthFault,
             std::string(f) + " not detected under proposed");
    c.expect(run(s, ModifierScheme::None).outcome.kind == Outcome::Kind::Hijacked,
             std::string(f) + " not hijacked under none");
  }
  if (c.ok) c.detail = "return address, function pointer, ops table";
  return c;
}

Check replay() {
  Check c;
  using S = ModifierScheme;
  using C = ReplayClass;
  const auto cells = replay_matrix({S::None, S::SpOnly, S::Proposed, S::PartsLike, S::Compat1716});
  auto succeeds = [&](S s, C cls) {
    for (const auto& x : cells)
      if (x.scheme == s && x.cls == cls) return x.succeeds;
    return false;
  };
  c.expect(succeeds(S::SpOnly, C::CrossFunctionSameSp), "cross-function replay blocked under sp-only");
  c.expect(!succeeds(S::Proposed, C::CrossFunctionSameSp), "cross-function replay succeeds under proposed");
  c.expect(succeeds(S::PartsLike, C::CrossThread64K), "64K cross-thread replay blocked under parts-like");
  c.expect(!succeeds(S::Proposed, C::CrossThread64K), "64K cross-thread replay succeeds under proposed");
  for (S s : {S::None, S::SpOnly, S::Proposed, S::PartsLike, S::Compat1716})
    c.expect(succeeds(s, C::SameFunctionSameSp), "same-function replay blocked under " + std::string(to_string(s)));
  if (c.ok) c.detail = "same-function-same-SP replay is residual under every scheme";
  return c;
}

Check cost_model() {
  Check c;
  using S = ModifierScheme;
  const IrModule m = parse_ir(slurp(kDir / "bench.ir"));
  const auto rep = overhead_report(m, {S::None, S::SpOnly, S::Proposed, S::PartsLike}, {ThreadSetup{0, {1, 1, 1}}}, {});
  const double d0 = rep.row(S::None)->per_call_delta, d1 = rep.row(S::SpOnly)->per_call_delta,
               d2 = rep.row(S::Proposed)->per_call_delta, d3 = rep.row(S::PartsLike)->per_call_delta;
  c.expect(d0 < d1 && d1 < d2 && d2 < d3, "ordering");
  for (S s : {S::SpOnly, S::Proposed, S::PartsLike})
    c.expect(rep.row(s)->key_switch_per_syscall == 9.0 * 3 * 2, "key switch per syscall");
  char buf[160];
  std::snprintf(buf, sizeof buf, "delta/call %.1f < %.1f < %.1f < %.1f; key switch %.0f cycles/syscall", d0, d1, d2,
                d3, rep.row(S::Proposed)->key_switch_per_syscall);
  if (c.ok) c.detail = buf;
  return c;
}

Check key_confidentiality() {
  Check c;
  // Attacker reads of the setter page fail.
  const Scenario s = load_scenario(kDir / "setter-read.scn");
  const ScenarioResult r = run(s, ModifierScheme::Proposed);
  c.expect(r.actions.size() == 1 && !r.actions[0].accepted, "setter page readable");

  // Loader rejects key-register reads and PAC-control clears.
  auto rejected = [](const char* body) {
    const std::string ir = std::string("syscall 1 = s\nfunc s\n") + body + "end\n";
    return !verify_image(build_image(parse_ir(ir), ModifierScheme::Proposed)).accepted();
  };
  c.expect(rejected("  asm \"mrs x0, apiakeylo_el1\"\n"), "key read accepted");
  c.expect(rejected("  asm \"mrs x3, apdbkeyhi_el1\"\n"), "key read accepted");
  c.expect(rejected("  asm \"movz x0, #0\"\n  asm \"msr sctlr_el1, x0\"\n"), "SCTLR clear accepted");
  c.expect(rejected("  asm \"msr sctlr_el1, x5\"\n"), "unknown SCTLR value accepted");

  // Scratch registers are zero after the setter, whatever they held before.
  constexpr uint64_t kSetter = ImageLayout{}.setter;
  const std::vector<KeyClass> keys{KeyClass::IA, KeyClass::IB, KeyClass::DB};
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Machine m;
    const KeyBank kb = derive_keys(seed, 0);
    m.memory().load(Program{{generate_key_setter(kb, keys, kSetter)}, {}, {}, {}});
    KernelLayout k;
    k.setter_base = kSetter;
    k.setter_size = kPageSize;
    k.kernel_keys = keys;
    m.set_kernel(k);
    SplitMix64 rng(seed, 99);
    for (int i = 0; i < 29; ++i) m.set_x(i, rng());
    if (!m.call(kSetter)) {
      c.expect(false, "setter did not return");
      break;
    }
    c.expect(m.x(16) == 0 && m.x(17) == 0, "scratch register left non-zero");
    for (KeyClass kc : keys) c.expect(m.keys()[kc] == kb[kc], "key not installed");
  }
  if (c.ok) c.detail = "XOM read rejected, 4 images rejected, 100 boots clean";
  return c;
}

Check boot_signing() {
  Check c;
  const std::string ir = slurp(kDir / "fileops.ir");
  const IrModule module = parse_ir(ir);
  const Program image = build_image(module, ModifierScheme::Proposed);
  c.expect(image.signing_table.size() >= 3, "fewer than 3 signed statics");

  BootOptions b;
  b.scheme = ModifierScheme::Proposed;
  b.threads = {ThreadSetup{0, {1, 2, 3, 1}}};
  System sys = boot_kernel(image, b);
  for (const auto& e : image.signing_table) {
    const uint64_t raw = image.read64(e.location);
    const uint64_t now = sys.machine.memory().load64(e.location);
    c.expect(now != raw && strip_pac(now, PointerLayout{}) == raw, "word not signed in place");
  }
  sys.machine.run();
  const auto& o = sys.machine.outcome();
  c.expect(o.kind == Outcome::Kind::CleanExit, "dispatch did not exit cleanly: " + describe(o));
  c.expect(sys.machine.counters().auth_failures == 0, "authentication failures during dispatch");
  c.expect(sys.machine.threads()[0].returns == std::vector<uint64_t>{0, 3, 11, 7, 3}, "wrong callback results");

  // Corrupt one signed word before it is used.
  Scenario s;
  s.ir = ir;
  s.threads = {ThreadSetup{0, {2}}};
  AttackAction read;
  read.op = AttackAction::Op::Read;
  read.at = "sys_work.body";
  read.addr = "work0 + 8";
  read.var = "w";
  AttackAction write;
  write.at = "sys_work.body";
  write.addr = "work0 + 8";
  write.value = "$w + 4";
  s.actions = {read, write};
  const ScenarioResult r = run(s, ModifierScheme::Proposed);
  c.expect(r.outcome.kind == Outcome::Kind::AuthFault, "corrupted word not detected: " + describe(r.outcome));
  if (c.ok) c.detail = std::to_string(image.signing_table.size()) + " statics signed, corruption detected";
  return c;
}

Check brute_force() {
  Check c;
  const Scenario base = load_scenario(kDir / "brute-force.scn");
  for (uint32_t t : {1u, 8u}) {
    Scenario s = base;
    s.threshold = t;
    const ScenarioResult halted = run(s, ModifierScheme::Proposed);
    c.expect(halted.outcome.kind == Outcome::Kind::Halted && halted.counters.auth_failures == t,
             "T=" + std::to_string(t) + ": did not halt after exactly T failures");

    // T-1 failures, a success, T-1 failures, success: never T in a row.
    Scenario ok = s;
    ok.threads = {ThreadSetup{0, {1, 1}}};
    ok.actions.clear();
    if (t > 1) {
      AttackAction a = base.actions[0];
      a.hit = {1, t - 1};
      ok.actions.push_back(a);
      a.hit = {t + 1, 2 * t - 1};
      ok.actions.push_back(a);
    }
    const ScenarioResult clean = run(ok, ModifierScheme::Proposed);
    c.expect(clean.outcome.kind == Outcome::Kind::CleanExit && clean.counters.auth_failures == 2 * (t - 1),
             "T=" + std::to_string(t) + ": halted without T consecutive failures: " + describe(clean.outcome));
  }
  if (c.ok) c.detail = "T=1 and T=8";
  return c;
}

Check compatibility() {
  Check c;
  const IrModule m = parse_ir(slurp(kDir / "bench.ir"));
  const Program image = build_image(m, ModifierScheme::Compat1716);
  const std::vector<ThreadSetup> threads{ThreadSetup{0, {1, 1}}};
  RunOptions v83;
  v83.scheme = ModifierScheme::Compat1716;
  RunOptions v80 = v83;
  v80.machine.pauth_implemented = false;
  const ScenarioResult a = run_clean(image, threads, v83);
  const ScenarioResult b = run_clean(image, threads, v80);
  c.expect(a.outcome.kind == Outcome::Kind::CleanExit, "8.3 run: " + describe(a.outcome));
  c.expect(b.outcome.kind == Outcome::Kind::CleanExit, "pre-8.3 run: " + describe(b.outcome));
  c.expect(a.returns == b.returns, "architectural results differ");
  const Scenario lr = load_scenario(kDir / "lr-overwrite.scn");
  c.expect(run(lr, ModifierScheme::Compat1716).outcome.kind == Outcome::Kind::AuthFault, "corruption not detected");
  if (c.ok) c.detail = "identical results on both cores, corruption detected on 8.3";
  return c;
}

Check determinism() {
  Check c;
  const std::string sc = (kDir / "brute-force.scn").string();
  const std::string bench = (kDir / "bench.ir").string();
  const std::vector<std::vector<std::string>> cmds = {
      {"--format", "jsonl", "--seed", "17", "run", "--trace", "--scheme", "all", sc},
      {"--format", "jsonl", "--seed", "17", "analyze", "forgery", "--trials", "20000"},
      {"--format", "jsonl", "--seed", "17", "analyze", "collision", "--threads", "8", "--detail"},
      {"--format", "jsonl", "--seed", "17", "analyze", "replay"},
      {"--format", "jsonl", "--seed", "17", "bench", "--schemes", "all", bench},
      {"--format", "jsonl", "--seed", "17", "pac", "sign", "--key", "db", "--ptr", "0xffff00000a000040"},
  };
  for (const auto& args : cmds) {
    std::vector<const char*> argv{"kpac"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      std::ostringstream out, err;
      cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
      if (rep == 0) first = out.str();
      else c.expect(out.str() == first && !first.empty(), "output differs for " + args[4]);
    }
  }
  if (c.ok) c.detail = std::to_string(cmds.size()) + " invocations byte-identical";
  return c;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Check()>> criteria[] = {
      {"cipher correctness", cipher},
      {"PAC geometry", geometry},
      {"sign/auth round trip", round_trip},
      {"forgery probability", forgery},
      {"attack matrix", attack_matrix},
      {"replay matrix", replay},
      {"cost-model ordering", cost_model},
      {"key confidentiality", key_confidentiality},
      {"boot signing", boot_signing},
      {"brute-force mitigation", brute_force},
      {"compatibility", compatibility},
      {"determinism", determinism},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Check c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    failed += !c.ok;
    std::printf("%s %2d %s: %s\n", c.ok ? "PASS" : "FAIL", n, name, c.detail.c_str());
  }
  return failed ? 1 : 0;
}
