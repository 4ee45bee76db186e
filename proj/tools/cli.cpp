#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kpac/error.hpp"
#include "kpac/harness.hpp"

namespace kpac::cli {
namespace {

using json = nlohmann::ordered_json;

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct Usage : Error {
  using Error::Error;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Usage("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(s, &used, 0);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Usage(std::string("bad ") + what + " '" + s + "'");
}

ModifierScheme scheme_arg(const std::string& s) {
  auto v = parse_scheme(s);
  if (!v) throw Usage("unknown scheme '" + s + "'");
  return *v;
}

/// "all" or a comma-separated list. `all` supplies the meaning of "all".
std::vector<ModifierScheme> scheme_list(const std::string& s, std::vector<ModifierScheme> all) {
  if (s == "all") return all;
  std::vector<ModifierScheme> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(scheme_arg(item));
  if (out.empty()) throw Usage("empty scheme list");
  return out;
}

const std::vector<ModifierScheme> kEveryScheme = {ModifierScheme::None, ModifierScheme::SpOnly, ModifierScheme::Proposed,
                                                  ModifierScheme::PartsLike, ModifierScheme::Compat1716};

struct Common {
  std::string format = "text";
  uint64_t seed = 0;
  std::string scheme = "proposed";
  CLI::Option* scheme_opt = nullptr;
  int va_bits = 48;
  bool tbi_kernel = false;
  bool tbi_user = false;
  uint32_t threshold = 8;
  CLI::Option* threshold_opt = nullptr;
  bool pre83 = false;
  std::vector<std::string> disable;

  bool jsonl() const { return format == "jsonl"; }

  PointerLayout layout() const {
    PointerLayout l{va_bits, tbi_user, tbi_kernel};
    l.validate();
    return l;
  }

  MachineConfig machine() const {
    MachineConfig m;
    m.layout = layout();
    m.fault_threshold = threshold;
    m.pauth_implemented = !pre83;
    return m;
  }

  RunOptions run_options(ModifierScheme s) const {
    RunOptions o;
    o.scheme = s;
    o.machine = machine();
    o.seed = seed;
    return o;
  }
};

json outcome_json(const Outcome& o) {
  json j;
  j["kind"] = to_string(o.kind);
  j["pc"] = hex(o.pc);
  j["addr"] = hex(o.addr);
  j["origin"] = hex(o.origin);
  if (o.kind == Outcome::Kind::AuthFault) j["key"] = to_string(o.key);
  if (o.kind == Outcome::Kind::Fault) j["fault"] = to_string(o.fault);
  if (!o.report.empty()) j["report"] = o.report;
  return j;
}

json counters_json(const Counters& c) {
  return json{{"cycles", c.cycles},
              {"instructions", c.instructions},
              {"key_switch_cycles", c.key_switch_cycles},
              {"switch_cycles", c.switch_cycles},
              {"pauth_instructions", c.pauth_instructions},
              {"syscalls", c.syscalls},
              {"auth_failures", c.auth_failures},
              {"auth_successes", c.auth_successes},
              {"restarts", c.restarts}};
}

std::string_view op_name(AttackAction::Op op) {
  switch (op) {
    case AttackAction::Op::Read: return "read";
    case AttackAction::Op::Write: return "write";
    case AttackAction::Op::Irq: return "irq";
  }
  return "?";
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::vector<std::string> files;
  bool trace = false;
};

int cmd_run(const Common& c, const RunArgs& a, std::ostream& out) {
  bool all_match = true;
  for (const auto& file : a.files) {
    Scenario s = load_scenario(file);
    if (c.threshold_opt->count()) s.threshold = c.threshold;
    std::vector<ModifierScheme> schemes;
    if (c.scheme_opt->count())
      schemes = scheme_list(c.scheme, kEveryScheme);
    else
      schemes = {s.scheme.value_or(ModifierScheme::Proposed)};
    for (ModifierScheme scheme : schemes) {
      const ScenarioResult r = run_scenario(s, c.run_options(scheme));
      all_match = all_match && r.matches();
      if (c.jsonl()) {
        json j;
        j["scenario"] = s.name.empty() ? file : s.name;
        j["scheme"] = to_string(scheme);
        j["outcome"] = outcome_json(r.outcome);
        j["expected"] = r.expected ? json(to_string(*r.expected)) : json(nullptr);
        j["match"] = r.matches();
        j["calls"] = r.calls;
        j["counters"] = counters_json(r.counters);
        json acts = json::array();
        for (const auto& act : r.actions)
          acts.push_back({{"index", act.index}, {"op", op_name(act.op)}, {"step", act.step}, {"pc", hex(act.pc)},
                          {"addr", hex(act.addr)}, {"value", hex(act.value)}, {"accepted", act.accepted}});
        j["actions"] = acts;
        if (a.trace) {
          json tr = json::array();
          for (const auto& e : r.trace)
            tr.push_back({{"step", e.step}, {"pc", hex(e.pc)}, {"event", to_string(e.kind)}, {"addr", hex(e.addr)},
                          {"value", hex(e.value)}, {"thread", e.thread}});
          j["trace"] = tr;
        }
        out << j.dump() << '\n';
      } else {
        out << (s.name.empty() ? file : s.name) << " [" << to_string(scheme) << "] " << describe(r.outcome);
        if (r.expected) out << "  expected " << to_string(*r.expected) << (r.matches() ? "  ok" : "  MISMATCH");
        out << '\n';
        out << "  cycles " << r.counters.cycles << ", instructions " << r.counters.instructions << ", calls "
            << r.calls << ", syscalls " << r.counters.syscalls << ", auth failures " << r.counters.auth_failures
            << '\n';
        for (const auto& act : r.actions)
          out << "  action " << act.index << ' ' << op_name(act.op) << " at step " << act.step << " addr "
              << hex(act.addr) << " value " << hex(act.value) << (act.accepted ? "" : " (rejected)") << '\n';
        if (a.trace)
          for (const auto& e : r.trace)
            out << "    " << std::setw(8) << e.step << ' ' << hex(e.pc) << ' ' << to_string(e.kind) << ' '
                << hex(e.addr) << ' ' << hex(e.value) << '\n';
      }
    }
  }
  return all_match ? kOk : kNegative;
}

// ---------------------------------------------------------------------------

Program load_program(const std::string& file, ModifierScheme scheme) {
  const std::string text = read_file(file);
  if (file.size() >= 3 && file.compare(file.size() - 3, 3, ".ir") == 0) return build_image(parse_ir(text), scheme);
  return assemble(text);
}

int cmd_verify(const Common& c, const std::string& file, std::ostream& out) {
  const ModifierScheme scheme = scheme_arg(c.scheme);
  const Program image = load_program(file, scheme);
  const VerifyReport r = verify_image(image);
  if (c.jsonl()) {
    json f = json::array();
    for (const auto& x : r.findings) f.push_back({{"addr", hex(x.addr)}, {"reason", x.reason}});
    out << json{{"file", file}, {"scheme", to_string(scheme)}, {"accepted", r.accepted()}, {"findings", f}}.dump()
        << '\n';
  } else {
    out << file << ": " << r.text();
  }
  return r.accepted() ? kOk : kNegative;
}

int cmd_compile(const Common& c, const std::string& file, std::ostream& out) {
  const ModifierScheme scheme = scheme_arg(c.scheme);
  const std::string text = emit_image(parse_ir(read_file(file)), scheme);
  assemble(text);  // surface link errors here rather than at boot
  if (c.jsonl())
    out << json{{"file", file}, {"scheme", to_string(scheme)}, {"text", text}}.dump() << '\n';
  else
    out << text;
  return kOk;
}

// ---------------------------------------------------------------------------

struct ForgeryArgs {
  std::vector<int> bits{4, 8, 12};
  uint64_t trials = 100000;
  bool serial = false;
};

int cmd_forgery(const Common& c, const ForgeryArgs& a, std::ostream& out) {
  bool ok = true;
  if (!c.jsonl())
    out << std::left << std::setw(6) << "bits" << std::setw(10) << "trials" << std::setw(10) << "accepted"
        << std::setw(14) << "rate" << std::setw(14) << "expected" << std::setw(30) << "95% CI" << "3-sigma\n";
  for (int bits : a.bits) {
    const ForgeryResult r = a.serial ? forgery_rate_serial(bits, a.trials, c.seed) : forgery_rate(bits, a.trials, c.seed);
    ok = ok && r.within_3sigma();
    if (c.jsonl()) {
      out << json{{"analysis", "forgery"}, {"pac_bits", r.pac_bits}, {"trials", r.trials},
                  {"accepted", r.accepted}, {"rate", r.rate}, {"expected", r.expected},
                  {"sigma", r.sigma}, {"ci_low", r.ci_low}, {"ci_high", r.ci_high},
                  {"within_3sigma", r.within_3sigma()}, {"seed", c.seed}}
                 .dump()
          << '\n';
    } else {
      out << std::left << std::setw(6) << r.pac_bits << std::setw(10) << r.trials << std::setw(10) << r.accepted
          << std::setw(14) << fixed(r.rate, 8) << std::setw(14) << fixed(r.expected, 8) << std::setw(30)
          << ("[" + fixed(r.ci_low, 8) + ", " + fixed(r.ci_high, 8) + "]") << (r.within_3sigma() ? "yes" : "NO")
          << '\n';
    }
  }
  return ok ? kOk : kNegative;
}

struct CollisionArgs {
  int threads = 2;
  size_t sites = 32;
  std::string bases;
  bool detail = false;
  bool serial = false;
};

int cmd_collision(const Common& c, const CollisionArgs& a, std::ostream& out) {
  CollisionConfig cfg;
  cfg.n_threads = a.threads;
  cfg.seed = c.seed;
  cfg.callsites = random_callsites(a.sites, c.seed);
  if (!a.bases.empty()) {
    std::stringstream ss(a.bases);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.stack_bases.push_back(parse_u64(item, "stack base"));
  }
  const auto schemes =
      c.scheme_opt->count()
          ? scheme_list(c.scheme, {ModifierScheme::SpOnly, ModifierScheme::Proposed, ModifierScheme::PartsLike,
                                   ModifierScheme::Compat1716})
          : std::vector<ModifierScheme>{ModifierScheme::SpOnly, ModifierScheme::Proposed, ModifierScheme::PartsLike};
  if (!c.jsonl())
    out << std::left << std::setw(12) << "scheme" << std::setw(10) << "pairs" << std::setw(12) << "collisions"
        << std::setw(12) << "rate" << std::setw(16) << "matching_rate" << '\n';
  for (ModifierScheme s : schemes) {
    cfg.scheme = s;
    const CollisionResult r = a.serial ? collision_rate_serial(cfg) : collision_rate(cfg);
    if (c.jsonl()) {
      json j{{"analysis", "collision"}, {"scheme", to_string(s)}, {"threads", r.stack_bases.size()},
             {"sites", a.sites}, {"pairs", r.pairs}, {"collisions", r.collisions},
             {"matching_pairs", r.matching_pairs}, {"matching_collisions", r.matching_collisions},
             {"rate", r.rate}, {"matching_rate", r.matching_rate}, {"seed", c.seed}};
      json b = json::array();
      for (uint64_t x : r.stack_bases) b.push_back(hex(x));
      j["stack_bases"] = b;
      if (a.detail) {
        json d = json::array();
        for (const auto& p : r.detail)
          d.push_back({{"thread_a", p.thread_a}, {"thread_b", p.thread_b}, {"site_a", p.site_a},
                       {"site_b", p.site_b}, {"modifier", hex(p.modifier)}});
        j["detail"] = d;
      }
      out << j.dump() << '\n';
    } else {
      out << std::left << std::setw(12) << to_string(s) << std::setw(10) << r.pairs << std::setw(12) << r.collisions
          << std::setw(12) << fixed(r.rate, 6) << std::setw(16) << fixed(r.matching_rate, 6) << '\n';
      if (a.detail)
        for (const auto& p : r.detail)
          out << "  thread " << p.thread_a << " site " << p.site_a << " = thread " << p.thread_b << " site "
              << p.site_b << "  modifier " << hex(p.modifier) << '\n';
    }
  }
  return kOk;
}

int cmd_replay(const Common& c, std::ostream& out) {
  const auto schemes = c.scheme_opt->count() ? scheme_list(c.scheme, kEveryScheme) : kEveryScheme;
  const auto cells = replay_matrix(schemes, c.seed);
  for (const auto& cell : cells) {
    const bool residual = cell.cls == ReplayClass::SameFunctionSameSp && cell.succeeds;
    if (c.jsonl()) {
      out << json{{"analysis", "replay"}, {"class", to_string(cell.cls)}, {"scheme", to_string(cell.scheme)},
                  {"result", cell.succeeds ? "succeeds" : "blocked"}, {"residual", residual},
                  {"outcome", outcome_json(cell.outcome)}}
                 .dump()
          << '\n';
    } else {
      out << std::left << std::setw(20) << to_string(cell.cls) << std::setw(12) << to_string(cell.scheme)
          << std::setw(10) << (cell.succeeds ? "succeeds" : "blocked") << (residual ? "residual" : "") << '\n';
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string file;
  std::string schemes = "all";
  int threads = 1;
  std::string syscalls;
};

int cmd_bench(const Common& c, const BenchArgs& a, std::ostream& out) {
  const IrModule module = parse_ir(read_file(a.file));
  const auto schemes = scheme_list(a.schemes, {ModifierScheme::None, ModifierScheme::SpOnly,
                                               ModifierScheme::Proposed, ModifierScheme::PartsLike});
  if (a.threads < 1) throw Usage("--threads must be at least 1");
  ThreadSetup t;
  if (a.syscalls.empty()) {
    for (const auto& [n, fn] : module.syscalls) t.syscalls.push_back(n);
  } else {
    std::stringstream ss(a.syscalls);
    std::string item;
    while (ss >> item) t.syscalls.push_back(static_cast<int>(parse_u64(item, "syscall")));
  }
  const std::vector<ThreadSetup> threads(static_cast<size_t>(a.threads), t);
  OverheadReport rep;
  try {
    rep = overhead_report(module, schemes, threads, c.run_options(ModifierScheme::None));
  } catch (const Error& e) {
    if (dynamic_cast<const ParamError*>(&e) || dynamic_cast<const ParseError*>(&e)) throw;
    if (c.jsonl())
      out << json{{"error", e.what()}}.dump() << '\n';
    else
      out << "error: " << e.what() << '\n';
    return kNegative;
  }
  if (!c.jsonl())
    out << std::left << std::setw(12) << "scheme" << std::setw(10) << "cycles" << std::setw(14) << "instructions"
        << std::setw(8) << "calls" << std::setw(16) << "delta/call" << std::setw(18) << "key-switch/syscall"
        << '\n';
  for (const auto& r : rep.rows) {
    if (c.jsonl()) {
      out << json{{"scheme", to_string(r.scheme)}, {"cycles", r.counters.cycles},
                  {"instructions", r.counters.instructions}, {"calls", r.calls},
                  {"per_call_delta", r.per_call_delta}, {"key_switch_per_syscall", r.key_switch_per_syscall},
                  {"syscalls", r.counters.syscalls}, {"pauth_instructions", r.counters.pauth_instructions},
                  {"extra_instructions_per_call", extra_instructions_per_call(r.scheme)}}
                 .dump()
          << '\n';
    } else {
      out << std::left << std::setw(12) << to_string(r.scheme) << std::setw(10) << r.counters.cycles << std::setw(14)
          << r.counters.instructions << std::setw(8) << r.calls << std::setw(16) << fixed(r.per_call_delta, 2)
          << std::setw(18) << fixed(r.key_switch_per_syscall, 2) << '\n';
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct PacArgs {
  std::string key = "ia";
  std::string ptr;
  std::string mod = "0";
  std::string key_value;  // "HI:LO"; empty derives from --seed
};

int cmd_pac(const Common& c, const std::string& op, const PacArgs& a, std::ostream& out) {
  const auto key = parse_key_class(a.key);
  if (!key || *key == KeyClass::GA) throw Usage("--key must be one of ia, ib, da, db");
  const uint64_t ptr = parse_u64(a.ptr, "pointer");
  const uint64_t mod = parse_u64(a.mod, "modifier");
  const PointerLayout layout = c.layout();

  KeyBank bank = derive_keys(c.seed, 0);
  if (!a.key_value.empty()) {
    const auto colon = a.key_value.find(':');
    if (colon == std::string::npos) throw Usage("--key-value must be HI:LO");
    bank[*key] = PacKey{parse_u64(a.key_value.substr(0, colon), "key"), parse_u64(a.key_value.substr(colon + 1), "key")};
  }
  PacControl ctl;
  for (const auto& d : c.disable) {
    const auto k = parse_key_class(d);
    if (!k || *k == KeyClass::GA) throw Usage("--disable takes ia, ib, da or db");
    switch (*k) {
      case KeyClass::IA: ctl.enable_ia = false; break;
      case KeyClass::IB: ctl.enable_ib = false; break;
      case KeyClass::DA: ctl.enable_da = false; break;
      default: ctl.enable_db = false; break;
    }
  }

  json j{{"op", op}, {"key", to_string(*key)}, {"ptr", hex(ptr)}, {"modifier", hex(mod)}};
  uint64_t result = 0;
  bool ok = true;
  if (op == "sign") {
    if (!is_canonical(ptr, layout)) throw Usage("pointer " + hex(ptr) + " is not canonical");
    result = exec_pac(bank, ctl, *key, ptr, mod, layout);
    j["result"] = hex(result);
    j["pac"] = hex(extract_pac(result, layout));
  } else if (op == "auth") {
    const AuthResult r = authenticate(bank, ctl, *key, ptr, mod, layout);
    result = r.value;
    ok = r.ok;
    j["result"] = hex(result);
    j["ok"] = r.ok;
  } else {
    result = strip_pac(ptr, layout);
    j["result"] = hex(result);
  }
  if (c.jsonl())
    out << j.dump() << '\n';
  else
    out << hex(result) << (ok ? "" : "  (authentication failed)") << '\n';
  return ok ? kOk : kNegative;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PAuth kernel CFI simulator and instrumentation toolkit", "kpac"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "jsonl"}));
  app.add_option("--seed", c.seed, "Seed for every random choice");
  c.scheme_opt = app.add_option("--scheme", c.scheme, "none, sp-only, proposed, parts-like, compat1716 (or all)");
  app.add_option("--va-bits", c.va_bits, "Virtual address width")->check(CLI::Range(kMinVaBits, kMaxVaBits));
  app.add_flag("--tbi-kernel", c.tbi_kernel, "Kernel range ignores the top byte");
  app.add_flag("--tbi-user", c.tbi_user, "User range ignores the top byte");
  c.threshold_opt = app.add_option("--threshold", c.threshold, "Consecutive auth failures before halting")
                        ->check(CLI::PositiveNumber);
  app.add_flag("--pre83", c.pre83, "Model a core without PAuth");
  app.add_option("--disable", c.disable, "Disable a pointer key (pac subcommand)")->delimiter(',');

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run attack scenarios");
  run_cmd->add_option("scenario", run_args.files, "Scenario files")->required();
  run_cmd->add_flag("--trace", run_args.trace, "Include the event trace");

  std::string verify_file;
  auto* verify_cmd = app.add_subcommand("verify", "Check an image (.ir or program text) for forbidden instructions");
  verify_cmd->add_option("file", verify_file)->required();

  std::string compile_file;
  auto* compile_cmd = app.add_subcommand("compile", "Print the instrumented program text for an IR module");
  compile_cmd->add_option("file", compile_file)->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "Security analyzers");
  analyze_cmd->require_subcommand(1);
  ForgeryArgs forgery_args;
  auto* forgery_cmd = analyze_cmd->add_subcommand("forgery", "Monte-Carlo acceptance rate of guessed PACs");
  forgery_cmd->add_option("--bits", forgery_args.bits, "PAC widths")->delimiter(',')->check(CLI::Range(1, 31));
  forgery_cmd->add_option("--trials", forgery_args.trials, "Guesses per width")->check(CLI::PositiveNumber);
  forgery_cmd->add_flag("--serial", forgery_args.serial, "Use the single-threaded reference");
  CollisionArgs collision_args;
  auto* collision_cmd = analyze_cmd->add_subcommand("collision", "Cross-thread return-address modifier collisions");
  collision_cmd->add_option("--threads", collision_args.threads, "Threads with random stacks")
      ->check(CLI::Range(2, 4096));
  collision_cmd->add_option("--sites", collision_args.sites, "Random callsites")->check(CLI::PositiveNumber);
  collision_cmd->add_option("--bases", collision_args.bases, "Explicit comma-separated kernel stack bases");
  collision_cmd->add_flag("--detail", collision_args.detail, "List colliding pairs");
  collision_cmd->add_flag("--serial", collision_args.serial, "Use the single-threaded reference");
  auto* replay_cmd = analyze_cmd->add_subcommand("replay", "Replay-attack matrix");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Cycle overhead per scheme");
  bench_cmd->add_option("file", bench_args.file, "IR module")->required();
  bench_cmd->add_option("--schemes", bench_args.schemes, "all or a comma-separated list");
  bench_cmd->add_option("--threads", bench_args.threads, "Threads running the workload");
  bench_cmd->add_option("--syscalls", bench_args.syscalls, "Space-separated syscall numbers per thread");

  PacArgs pac_args;
  std::string pac_op;
  auto* pac_cmd = app.add_subcommand("pac", "Sign, authenticate or strip one pointer");
  pac_cmd->add_option("op", pac_op, "sign, auth or strip")->required()->check(CLI::IsMember({"sign", "auth", "strip"}));
  pac_cmd->add_option("--key", pac_args.key, "ia, ib, da or db");
  pac_cmd->add_option("--ptr", pac_args.ptr, "Pointer")->required();
  pac_cmd->add_option("--mod", pac_args.mod, "Modifier");
  pac_cmd->add_option("--key-value", pac_args.key_value, "Explicit key as HI:LO");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(c, run_args, out);
    if (*verify_cmd) return cmd_verify(c, verify_file, out);
    if (*compile_cmd) return cmd_compile(c, compile_file, out);
    if (*forgery_cmd) return cmd_forgery(c, forgery_args, out);
    if (*collision_cmd) return cmd_collision(c, collision_args, out);
    if (*replay_cmd) return cmd_replay(c, out);
    if (*bench_cmd) return cmd_bench(c, bench_args, out);
    if (*pac_cmd) return cmd_pac(c, pac_op, pac_args, out);
  } catch (const Error& e) {
    err << "kpac: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace kpac::cli
