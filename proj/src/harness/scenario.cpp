#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include "kpac/error.hpp"
#include "kpac/harness.hpp"

namespace kpac {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<uint64_t> parse_u64(std::string_view s) {
  s = trim(s);
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    base = 16;
  }
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

uint64_t need_u64(std::string_view s, int line) {
  auto v = parse_u64(s);
  if (!v) throw ParseError("expected a number, got '" + std::string(s) + "'", line);
  return *v;
}

bool parse_bool(std::string_view s, int line) {
  const std::string v = lower(trim(s));
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ParseError("expected true or false, got '" + std::string(s) + "'", line);
}

HitRange parse_hits(std::string_view s, int line) {
  s = trim(s);
  if (s == "*") return {1, UINT64_MAX};
  const auto dash = s.find('-');
  HitRange h;
  if (dash == std::string_view::npos) {
    h.first = h.last = need_u64(s, line);
  } else {
    h.first = need_u64(s.substr(0, dash), line);
    h.last = need_u64(s.substr(dash + 1), line);
  }
  if (h.first == 0 || h.last < h.first) throw ParseError("bad hit range '" + std::string(s) + "'", line);
  return h;
}

Outcome::Kind need_outcome(std::string_view s, int line) {
  auto k = parse_outcome_kind(trim(s));
  if (!k) throw ParseError("unknown outcome '" + std::string(s) + "'", line);
  return *k;
}

// ---------------------------------------------------------------------------
// Action expressions:  term (('+' | '-') term)*
//   term := number | $var | $hit | register | name '(' expr {',' expr} ')' | symbol

struct EvalContext {
  const Machine& m;
  const Program& image;
  const std::map<std::string, uint64_t>& vars;
  uint64_t hit = 0;
};

class Evaluator {
 public:
  Evaluator(std::string_view text, const EvalContext& ctx) : s_(text), ctx_(ctx) {}

  uint64_t run() {
    const uint64_t v = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(s_.substr(pos_)) + "'");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error("expression '" + std::string(s_) + "': " + why);
  }
  void skip() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  static bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$'; }

  uint64_t expr() {
    uint64_t v = term();
    for (;;) {
      if (eat('+'))
        v += term();
      else if (eat('-'))
        v -= term();
      else
        return v;
    }
  }

  std::vector<uint64_t> args() {
    std::vector<uint64_t> out;
    if (eat(')')) return out;
    do out.push_back(expr());
    while (eat(','));
    if (!eat(')')) fail("expected ')'");
    return out;
  }

  uint64_t term() {
    skip();
    if (eat('(')) {
      const uint64_t v = expr();
      if (!eat(')')) fail("expected ')'");
      return v;
    }
    const size_t start = pos_;
    while (pos_ < s_.size() && word_char(s_[pos_])) ++pos_;
    const std::string_view w = s_.substr(start, pos_ - start);
    if (w.empty()) fail("expected a term");
    if (std::isdigit(static_cast<unsigned char>(w[0]))) {
      auto v = parse_u64(w);
      if (!v) fail("bad number '" + std::string(w) + "'");
      return *v;
    }
    if (w[0] == '$') {
      const std::string name(w.substr(1));
      if (name == "hit") return ctx_.hit;
      auto it = ctx_.vars.find(name);
      if (it == ctx_.vars.end()) fail("unset variable $" + name);
      return it->second;
    }
    if (eat('(')) return call(w, args());
    if (auto r = reg(w)) return *r;
    if (auto v = ctx_.image.resolve(w)) return *v;
    fail("unknown symbol '" + std::string(w) + "'");
  }

  std::optional<uint64_t> reg(std::string_view w) const {
    if (w == "sp") return ctx_.m.sp();
    if (w == "fp") return ctx_.m.x(kFp);
    if (w == "lr") return ctx_.m.x(kLr);
    if (w == "pc") return ctx_.m.pc();
    if (w.size() >= 2 && w[0] == 'x') {
      auto n = parse_u64(w.substr(1));
      if (n && *n <= 30) return ctx_.m.x(static_cast<int>(*n));
    }
    return std::nullopt;
  }

  uint64_t call(std::string_view f, const std::vector<uint64_t>& a) {
    auto arity = [&](size_t n) {
      if (a.size() != n) fail(std::string(f) + " takes " + std::to_string(n) + " argument(s)");
    };
    const auto& threads = ctx_.m.threads();
    auto thread = [&](uint64_t i) -> const Thread& {
      if (i >= threads.size()) fail("no thread " + std::to_string(i));
      return threads[i];
    };
    const PointerLayout& L = ctx_.m.config().layout;
    if (f == "task") {
      arity(1);
      return thread(a[0]).spec.task_struct;
    }
    if (f == "kstack") {
      arity(1);
      return thread(a[0]).spec.kstack_base;
    }
    if (f == "kstack_top") {
      arity(1);
      return thread(a[0]).kstack_top();
    }
    if (f == "strip") {
      arity(1);
      return strip_pac(a[0], L);
    }
    if (f == "pac") {
      // Pointer a[0] carrying the guessed PAC a[1].
      arity(2);
      const uint64_t p = strip_pac(a[0], L);
      if (!is_canonical(p, L)) fail("pac() needs a canonical pointer");
      const int w = pac_width(L, classify(p, L));
      return insert_pac(p, a[1] & ((uint64_t{1} << w) - 1), L);
    }
    fail("unknown function '" + std::string(f) + "'");
  }

  std::string_view s_;
  size_t pos_ = 0;
  const EvalContext& ctx_;
};

uint64_t evaluate(std::string_view text, const EvalContext& ctx) { return Evaluator(text, ctx).run(); }

}  // namespace

std::optional<Outcome::Kind> parse_outcome_kind(std::string_view s) {
  const std::string v = lower(s);
  for (auto k : {Outcome::Kind::Running, Outcome::Kind::CleanExit, Outcome::Kind::AuthFault, Outcome::Kind::Halted,
                 Outcome::Kind::Hijacked, Outcome::Kind::Rejected, Outcome::Kind::Fault})
    if (lower(to_string(k)) == v) return k;
  return std::nullopt;
}

std::optional<Outcome::Kind> Scenario::expected(ModifierScheme s) const {
  if (auto it = expect.find(s); it != expect.end()) return it->second;
  return expect_default;
}

Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir) {
  Scenario sc;
  std::string section;
  std::map<uint64_t, ThreadSetup> threads;
  std::map<uint64_t, AttackAction> actions;
  std::map<uint64_t, std::pair<bool, bool>> action_fields;  // op seen, trigger seen
  std::string inline_ir;
  std::optional<std::string> ir_path;
  int ir_line = 0;

  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  uint64_t index = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (!line.empty() && line.front() == '[' && line.back() == ']') {
      section = lower(trim(line.substr(1, line.size() - 2)));
      index = 0;
      const auto dot = section.find('.');
      const std::string head = section.substr(0, dot);
      if (head == "thread" || head == "action") {
        if (dot == std::string::npos) throw ParseError("section [" + section + "] needs an index", lineno);
        index = need_u64(section.substr(dot + 1), lineno);
        if (head == "thread" && !threads.emplace(index, ThreadSetup{}).second)
          throw ParseError("duplicate [" + section + "]", lineno);
        if (head == "action") {
          if (!actions.emplace(index, AttackAction{}).second) throw ParseError("duplicate [" + section + "]", lineno);
          actions[index].line = lineno;
        }
        section = head;
      } else if (section == "ir") {
        ir_line = lineno;
      } else if (section != "scenario") {
        throw ParseError("unknown section [" + section + "]", lineno);
      }
      continue;
    }
    if (section == "ir") {
      inline_ir += raw;
      inline_ir += '\n';
      continue;
    }
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (section.empty()) throw ParseError("key outside any section", lineno);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
    const std::string key = lower(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));

    if (section == "scenario") {
      if (key == "name") {
        sc.name = value;
      } else if (key == "ir") {
        ir_path = value;
      } else if (key == "scheme") {
        sc.scheme = parse_scheme(value);
        if (!sc.scheme) throw ParseError("unknown scheme '" + value + "'", lineno);
      } else if (key == "expect") {
        sc.expect_default = need_outcome(value, lineno);
      } else if (key.rfind("expect.", 0) == 0) {
        auto s = parse_scheme(key.substr(7));
        if (!s) throw ParseError("unknown scheme in '" + key + "'", lineno);
        sc.expect[*s] = need_outcome(value, lineno);
      } else if (key == "threshold") {
        const uint64_t t = need_u64(value, lineno);
        if (t == 0 || t > 0xFFFFFFFF) throw ParseError("threshold must be positive", lineno);
        sc.threshold = static_cast<uint32_t>(t);
      } else if (key == "round_robin") {
        sc.round_robin = parse_bool(value, lineno);
      } else if (key == "restart") {
        sc.restart_on_auth_fault = parse_bool(value, lineno);
      } else if (key == "description") {
      } else {
        throw ParseError("unknown scenario key '" + key + "'", lineno);
      }
    } else if (section == "thread") {
      ThreadSetup& t = threads[index];
      if (key == "stack_base") {
        t.kstack_base = need_u64(value, lineno);
      } else if (key == "syscalls") {
        std::istringstream ws(value);
        std::string w;
        while (ws >> w) t.syscalls.push_back(static_cast<int>(need_u64(w, lineno)));
      } else {
        throw ParseError("unknown thread key '" + key + "'", lineno);
      }
    } else {
      AttackAction& a = actions[index];
      auto& seen = action_fields[index];
      if (key == "op") {
        const std::string op = lower(value);
        if (op == "read") a.op = AttackAction::Op::Read;
        else if (op == "write") a.op = AttackAction::Op::Write;
        else if (op == "irq") a.op = AttackAction::Op::Irq;
        else throw ParseError("unknown op '" + value + "'", lineno);
        seen.first = true;
      } else if (key == "at") {
        a.at = value;
        seen.second = true;
      } else if (key == "step") {
        a.step = need_u64(value, lineno);
        seen.second = true;
      } else if (key == "hit") {
        a.hit = parse_hits(value, lineno);
      } else if (key == "addr") {
        a.addr = value;
      } else if (key == "value") {
        a.value = value;
      } else if (key == "var") {
        a.var = value;
      } else {
        throw ParseError("unknown action key '" + key + "'", lineno);
      }
    }
  }

  if (ir_path && !inline_ir.empty()) throw ParseError("both 'ir =' and an [ir] section given", ir_line);
  if (ir_path) {
    const auto p = base_dir / *ir_path;
    std::ifstream f(p);
    if (!f) throw ParseError("cannot read IR file " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    sc.ir = ss.str();
  } else {
    sc.ir = inline_ir;
  }
  if (sc.ir.empty()) throw ParseError("scenario has no IR");

  IrModule module;
  try {
    module = parse_ir(sc.ir);
  } catch (const ParseError& e) {
    throw ParseError(std::string("in IR: ") + e.what(), ir_path ? 0 : ir_line + e.line());
  }

  if (!threads.empty()) {
    sc.threads.clear();
    uint64_t expect_index = 0;
    for (auto& [i, t] : threads) {
      if (i != expect_index++) throw ParseError("thread indices must be 0, 1, 2, ...");
      sc.threads.push_back(t);
    }
  } else {
    sc.threads = {ThreadSetup{}};
    for (const auto& [n, fn] : module.syscalls) sc.threads[0].syscalls.push_back(n);
  }
  for (auto& [i, a] : actions) {
    const auto& seen = action_fields[i];
    if (!seen.second) throw ParseError("action needs 'at' or 'step'", a.line);
    if (!a.at.empty() && a.step) throw ParseError("action has both 'at' and 'step'", a.line);
    if (a.op != AttackAction::Op::Irq && a.addr.empty()) throw ParseError("action needs 'addr'", a.line);
    if (a.op == AttackAction::Op::Write && a.value.empty()) throw ParseError("write needs 'value'", a.line);
    if (a.op == AttackAction::Op::Read && a.var.empty()) throw ParseError("read needs 'var'", a.line);
    sc.actions.push_back(a);
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot read scenario " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario(ss.str(), path.parent_path());
}

namespace {

ScenarioResult execute(System& sys, const std::vector<AttackAction>& actions, ModifierScheme scheme) {
  Machine& m = sys.machine;
  ScenarioResult r;
  r.scheme = scheme;
  std::map<std::string, uint64_t> vars;

  std::unordered_map<uint64_t, std::vector<size_t>> by_pc;
  std::map<uint64_t, std::vector<size_t>> by_step;
  for (size_t i = 0; i < actions.size(); ++i) {
    const auto& a = actions[i];
    if (a.step) {
      by_step[*a.step].push_back(i);
    } else {
      const EvalContext ctx{m, sys.image, vars, 0};
      by_pc[evaluate(a.at, ctx)].push_back(i);
    }
  }
  std::vector<uint64_t> hits(actions.size(), 0);
  std::unordered_map<uint64_t, int> entries;
  for (const auto& f : sys.image.functions) entries[f.entry] = 1;

  auto perform = [&](size_t i, uint64_t hit) {
    const AttackAction& a = actions[i];
    const EvalContext ctx{m, sys.image, vars, hit};
    ActionRecord rec;
    rec.step = m.steps();
    rec.pc = m.pc();
    rec.op = a.op;
    rec.index = static_cast<int>(i);
    switch (a.op) {
      case AttackAction::Op::Read: {
        rec.addr = evaluate(a.addr, ctx);
        const auto v = m.attacker_read(rec.addr);
        rec.accepted = v.has_value();
        if (v) {
          rec.value = *v;
          vars[a.var] = *v;
        }
        break;
      }
      case AttackAction::Op::Write:
        rec.addr = evaluate(a.addr, ctx);
        rec.value = evaluate(a.value, ctx);
        rec.accepted = m.attacker_write(rec.addr, rec.value);
        break;
      case AttackAction::Op::Irq:
        m.raise_interrupt();
        rec.accepted = true;
        break;
    }
    r.actions.push_back(rec);
  };

  while (!m.halted()) {
    const uint64_t pc = m.pc();
    if (m.el() == El::EL1 && entries.count(pc)) ++r.calls;
    if (!by_step.empty()) {
      if (auto it = by_step.find(m.steps()); it != by_step.end()) {
        for (size_t i : it->second) perform(i, ++hits[i]);
        by_step.erase(it);
      }
    }
    if (!by_pc.empty()) {
      if (auto it = by_pc.find(pc); it != by_pc.end()) {
        for (size_t i : it->second) {
          const uint64_t h = ++hits[i];
          if (actions[i].hit.contains(h)) perform(i, h);
        }
      }
    }
    m.step();
  }

  r.outcome = m.outcome();
  r.trace = m.trace();
  r.counters = m.counters();
  for (const auto& t : m.threads()) r.returns.push_back(t.returns);
  return r;
}

MachineConfig scenario_machine(const Scenario& s, const RunOptions& opts) {
  MachineConfig cfg = opts.machine;
  if (s.threshold) cfg.fault_threshold = *s.threshold;
  cfg.round_robin = cfg.round_robin || s.round_robin;
  cfg.restart_on_auth_fault = cfg.restart_on_auth_fault || s.restart_on_auth_fault;
  return cfg;
}

}  // namespace

ScenarioResult run_scenario(const Scenario& s, const RunOptions& opts) {
  const IrModule module = parse_ir(s.ir);
  BootOptions boot;
  boot.scheme = opts.scheme;
  boot.machine = scenario_machine(s, opts);
  boot.seed = opts.seed;
  boot.threads = s.threads;
  System sys = boot_kernel(build_image(module, opts.scheme), boot);
  ScenarioResult r = execute(sys, s.actions, opts.scheme);
  r.expected = s.expected(opts.scheme);
  return r;
}

ScenarioResult run_clean(const Program& image, const std::vector<ThreadSetup>& threads, const RunOptions& opts) {
  BootOptions boot;
  boot.scheme = opts.scheme;
  boot.machine = opts.machine;
  boot.seed = opts.seed;
  boot.threads = threads;
  System sys = boot_kernel(image, boot);
  return execute(sys, {}, opts.scheme);
}

}  // namespace kpac
