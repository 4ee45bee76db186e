#include "kpac/ir.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "kpac/error.hpp"

namespace kpac {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (quoted) continue;
    if (s[i] == '#' || (s[i] == '/' && i + 1 < s.size() && s[i + 1] == '/')) return s.substr(0, i);
  }
  return s;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split_commas(std::string_view s) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.emplace_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

int64_t parse_int(std::string_view s, int line) {
  s = trim(s);
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    base = 16;
  }
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw ParseError("expected a number, got '" + std::string(s) + "'", line);
  return v;
}

bool is_name(std::string_view s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

void need_name(std::string_view s, int line) {
  if (!is_name(s)) throw ParseError("bad name '" + std::string(s) + "'", line);
}

int parse_reg(std::string_view s, int line) {
  s = trim(s);
  if (s.size() >= 2 && s[0] == 'x') {
    const int64_t r = parse_int(s.substr(1), line);
    if (r >= 0 && r <= 7) return static_cast<int>(r);
  }
  throw ParseError("object register must be x0..x7, got '" + std::string(s) + "'", line);
}

Protection parse_prot(std::string_view s, int line) {
  if (s == "none") return Protection::None;
  if (s == "ops") return Protection::OpsPointer;
  if (s == "fnptr") return Protection::WritableFnPtr;
  if (s == "data") return Protection::SensitiveData;
  throw ParseError("unknown protection '" + std::string(s) + "'", line);
}

std::string_view prot_word(Protection p) {
  switch (p) {
    case Protection::None: return "none";
    case Protection::OpsPointer: return "ops";
    case Protection::WritableFnPtr: return "fnptr";
    case Protection::SensitiveData: return "data";
  }
  return "?";
}

// key=value attributes of a declaration line.
std::map<std::string, std::string, std::less<>> attributes(const std::vector<std::string>& w, size_t from, int line) {
  std::map<std::string, std::string, std::less<>> out;
  for (size_t i = from; i < w.size(); ++i) {
    const auto eq = w[i].find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("expected key=value, got '" + w[i] + "'", line);
    if (!out.emplace(w[i].substr(0, eq), w[i].substr(eq + 1)).second)
      throw ParseError("repeated attribute '" + w[i].substr(0, eq) + "'", line);
  }
  return out;
}

std::string take(std::map<std::string, std::string, std::less<>>& a, std::string_view key, int line) {
  auto it = a.find(key);
  if (it == a.end()) throw ParseError("missing attribute '" + std::string(key) + "'", line);
  std::string v = it->second;
  a.erase(it);
  return v;
}

void no_more(const std::map<std::string, std::string, std::less<>>& a, int line) {
  if (!a.empty()) throw ParseError("unknown attribute '" + a.begin()->first + "'", line);
}

IrOp parse_op(std::string_view text, int line) {
  IrOp op;
  op.line = line;
  const auto sp = text.find_first_of(" \t");
  const std::string_view verb = text.substr(0, sp);
  const std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(text.substr(sp));
  const auto args = split_commas(rest);
  auto argc = [&](size_t lo, size_t hi) {
    if (args.size() < lo || args.size() > hi)
      throw ParseError("wrong operand count for '" + std::string(verb) + "'", line);
  };
  if (verb == "objaddr") {
    argc(2, 2);
    op.kind = OpKind::ObjAddr;
    op.reg = parse_reg(args[0], line);
    op.name = args[1];
  } else if (verb == "call") {
    argc(1, 1);
    op.kind = OpKind::Call;
    op.name = args[0];
  } else if (verb == "icall") {
    argc(2, 3);
    op.kind = OpKind::ICall;
    op.reg = parse_reg(args[0], line);
    op.name = args[1];
    op.n = args.size() == 3 ? parse_int(args[2], line) : -1;
  } else if (verb == "storefield") {
    argc(3, 3);
    op.kind = OpKind::StoreField;
    op.reg = parse_reg(args[0], line);
    op.name = args[1];
    op.arg = args[2];
  } else if (verb == "loadfield") {
    argc(2, 2);
    op.kind = OpKind::LoadField;
    op.reg = parse_reg(args[0], line);
    op.name = args[1];
  } else if (verb == "compute" || verb == "alloc" || verb == "repeat") {
    argc(1, 1);
    op.kind = verb == "compute" ? OpKind::Compute : verb == "alloc" ? OpKind::AllocStack : OpKind::RepeatBegin;
    op.n = parse_int(args[0], line);
  } else if (verb == "endrepeat") {
    argc(0, 0);
    op.kind = OpKind::RepeatEnd;
  } else if (verb == "asm") {
    if (rest.size() < 2 || rest.front() != '"' || rest.back() != '"')
      throw ParseError("asm expects a quoted instruction", line);
    op.kind = OpKind::Asm;
    op.name = std::string(rest.substr(1, rest.size() - 2));
  } else {
    throw ParseError("unknown operation '" + std::string(verb) + "'", line);
  }
  return op;
}

}  // namespace

std::string_view to_string(Protection p) {
  switch (p) {
    case Protection::None: return "None";
    case Protection::OpsPointer: return "OpsPointer";
    case Protection::WritableFnPtr: return "WritableFnPtr";
    case Protection::SensitiveData: return "SensitiveData";
  }
  return "?";
}

const FieldDecl* IrModule::field(std::string_view id) const {
  for (const auto& f : fields)
    if (f.id() == id) return &f;
  return nullptr;
}

const ObjectDecl* IrModule::object(std::string_view name) const {
  for (const auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

const OpTableDecl* IrModule::optable(std::string_view name) const {
  for (const auto& t : optables)
    if (t.name == name) return &t;
  return nullptr;
}

const IrFunction* IrModule::function(std::string_view name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

IrModule parse_ir(std::string_view text) {
  IrModule m;
  IrFunction* cur = nullptr;
  int lineno = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (cur) {
      if (line == "end") {
        cur = nullptr;
      } else {
        cur->body.push_back(parse_op(line, lineno));
      }
      continue;
    }

    const auto w = split_ws(line);
    const std::string& kw = w[0];
    if (kw == "func") {
      if (w.size() != 2) throw ParseError("expected 'func <name>'", lineno);
      need_name(w[1], lineno);
      m.functions.push_back({w[1], {}, lineno});
      cur = &m.functions.back();
    } else if (kw == "field") {
      if (w.size() < 2) throw ParseError("expected 'field <type>.<member> ...'", lineno);
      const auto dot = w[1].find('.');
      if (dot == std::string::npos) throw ParseError("field name must be <type>.<member>", lineno);
      FieldDecl f;
      f.type = w[1].substr(0, dot);
      f.member = w[1].substr(dot + 1);
      need_name(f.type, lineno);
      need_name(f.member, lineno);
      auto a = attributes(w, 2, lineno);
      const int64_t off = parse_int(take(a, "offset", lineno), lineno);
      const int64_t c = parse_int(take(a, "const", lineno), lineno);
      f.prot = a.count("prot") ? parse_prot(take(a, "prot", lineno), lineno) : Protection::None;
      no_more(a, lineno);
      if (off < 0 || off > 4088 || off % 8) throw ParseError("field offset must be 8-byte aligned in 0..4088", lineno);
      if (c < 0 || c > 0xFFFF) throw ParseError("field const must fit 16 bits", lineno);
      f.offset = static_cast<uint32_t>(off);
      f.const16 = static_cast<uint16_t>(c);
      f.line = lineno;
      m.fields.push_back(std::move(f));
    } else if (kw == "object") {
      if (w.size() < 2) throw ParseError("expected 'object <name> ...'", lineno);
      need_name(w[1], lineno);
      ObjectDecl o;
      o.name = w[1];
      auto a = attributes(w, 2, lineno);
      o.type = take(a, "type", lineno);
      const int64_t size = parse_int(take(a, "size", lineno), lineno);
      no_more(a, lineno);
      if (size <= 0 || size % 8 || size > 4096) throw ParseError("object size must be a positive multiple of 8 up to 4096", lineno);
      o.size = static_cast<uint32_t>(size);
      o.line = lineno;
      m.objects.push_back(std::move(o));
    } else if (kw == "optable") {
      if (w.size() < 3) throw ParseError("expected 'optable <name> <fn>...'", lineno);
      need_name(w[1], lineno);
      OpTableDecl t{w[1], {w.begin() + 2, w.end()}, lineno};
      m.optables.push_back(std::move(t));
    } else if (kw == "init") {
      if (w.size() != 4 || w[2] != "=") throw ParseError("expected 'init <object>.<member> = <symbol>'", lineno);
      const auto dot = w[1].find('.');
      if (dot == std::string::npos) throw ParseError("init target must be <object>.<member>", lineno);
      m.inits.push_back({w[1].substr(0, dot), w[1].substr(dot + 1), w[3], lineno});
    } else if (kw == "syscall") {
      if (w.size() != 4 || w[2] != "=") throw ParseError("expected 'syscall <n> = <function>'", lineno);
      const int64_t n = parse_int(w[1], lineno);
      if (n < 1 || n > 255) throw ParseError("syscall number must be in 1..255 (0 is exit)", lineno);
      if (!m.syscalls.emplace(static_cast<int>(n), w[3]).second) throw ParseError("duplicate syscall number", lineno);
    } else {
      throw ParseError("unknown declaration '" + kw + "'", lineno);
    }
  }
  if (cur) throw ParseError("function '" + cur->name + "' has no 'end'", cur->line);

  // Inits name the object's member; store the full field id.
  for (auto& i : m.inits) {
    const ObjectDecl* o = m.object(i.object);
    if (!o) throw ParseError("unknown object '" + i.object + "'", i.line);
    i.field = o->type + "." + i.field;
  }
  m.validate();
  return m;
}

void IrModule::validate() const {
  std::set<std::string> names;
  auto unique_name = [&](const std::string& n, int line) {
    if (!names.insert(n).second) throw ParseError("duplicate name '" + n + "'", line);
  };
  std::set<uint16_t> consts;
  std::set<std::string> ids;
  for (const auto& f : fields) {
    if (!ids.insert(f.id()).second) throw ParseError("duplicate field '" + f.id() + "'", f.line);
    if (!consts.insert(f.const16).second) throw ParseError("field const reused by '" + f.id() + "'", f.line);
  }
  for (const auto& o : objects) {
    unique_name(o.name, o.line);
    for (const auto& f : fields)
      if (f.type == o.type && f.offset + 8 > o.size)
        throw ParseError("object '" + o.name + "' too small for field '" + f.id() + "'", o.line);
  }
  for (const auto& t : optables) {
    unique_name(t.name, t.line);
    for (const auto& e : t.entries)
      if (!function(e)) throw ParseError("optable entry '" + e + "' is not a function", t.line);
  }
  for (const auto& f : functions) unique_name(f.name, f.line);

  auto check_target = [&](const FieldDecl& f, const std::string& target, int line) {
    const bool ok = [&] {
      switch (f.prot) {
        case Protection::OpsPointer: return optable(target) != nullptr;
        case Protection::WritableFnPtr: return function(target) != nullptr;
        case Protection::SensitiveData: return object(target) != nullptr;
        case Protection::None: return names.count(target) != 0;
      }
      return false;
    }();
    if (!ok) throw ParseError("'" + target + "' is not a valid value for " + f.id(), line);
  };

  std::set<std::pair<std::string, std::string>> inited;
  for (const auto& i : inits) {
    const FieldDecl* f = field(i.field);
    if (!f) throw ParseError("unknown field '" + i.field + "'", i.line);
    check_target(*f, i.target, i.line);
    if (!inited.emplace(i.object, i.field).second) throw ParseError("field initialized twice", i.line);
  }
  for (const auto& [n, fn] : syscalls)
    if (!function(fn)) throw ParseError("syscall " + std::to_string(n) + " names unknown function '" + fn + "'", 0);

  for (const auto& fn : functions) {
    int depth = 0;
    for (const auto& op : fn.body) {
      switch (op.kind) {
        case OpKind::ObjAddr:
          if (!object(op.name)) throw ParseError("unknown object '" + op.name + "'", op.line);
          break;
        case OpKind::Call:
          if (!function(op.name)) throw ParseError("unknown function '" + op.name + "'", op.line);
          break;
        case OpKind::ICall: {
          const FieldDecl* f = field(op.name);
          if (!f) throw ParseError("unknown field '" + op.name + "'", op.line);
          if (f->prot == Protection::SensitiveData) throw ParseError("cannot call through a data field", op.line);
          if (f->prot == Protection::OpsPointer && op.n < 0) throw ParseError("ops field call needs a slot", op.line);
          if (f->prot == Protection::WritableFnPtr && op.n >= 0)
            throw ParseError("function pointer field takes no slot", op.line);
          if (op.n > 511) throw ParseError("slot out of range", op.line);
          break;
        }
        case OpKind::StoreField: {
          const FieldDecl* f = field(op.name);
          if (!f) throw ParseError("unknown field '" + op.name + "'", op.line);
          check_target(*f, op.arg, op.line);
          break;
        }
        case OpKind::LoadField:
          if (!field(op.name)) throw ParseError("unknown field '" + op.name + "'", op.line);
          break;
        case OpKind::Compute:
          if (op.n < 1 || op.n > 4096) throw ParseError("compute count must be in 1..4096", op.line);
          break;
        case OpKind::AllocStack:
          if (op.n < 16 || op.n > 4080 || op.n % 16) throw ParseError("alloc must be a multiple of 16 in 16..4080", op.line);
          break;
        case OpKind::RepeatBegin:
          if (op.n < 1 || op.n > 0xFFFF) throw ParseError("repeat count must be in 1..65535", op.line);
          ++depth;
          break;
        case OpKind::RepeatEnd:
          if (--depth < 0) throw ParseError("endrepeat without repeat", op.line);
          break;
        case OpKind::Asm: break;
      }
    }
    if (depth != 0) throw ParseError("unterminated repeat in '" + fn.name + "'", fn.line);
  }
}

std::string format_ir(const IrModule& m) {
  std::ostringstream out;
  auto hex = [](uint64_t v) {
    std::ostringstream s;
    s << "0x" << std::hex << v;
    return s.str();
  };
  for (const auto& f : m.fields)
    out << "field " << f.id() << " offset=" << f.offset << " const=" << hex(f.const16) << " prot=" << prot_word(f.prot)
        << '\n';
  for (const auto& o : m.objects) out << "object " << o.name << " type=" << o.type << " size=" << o.size << '\n';
  for (const auto& t : m.optables) {
    out << "optable " << t.name;
    for (const auto& e : t.entries) out << ' ' << e;
    out << '\n';
  }
  for (const auto& i : m.inits) {
    const auto dot = i.field.find('.');
    out << "init " << i.object << '.' << i.field.substr(dot + 1) << " = " << i.target << '\n';
  }
  for (const auto& [n, fn] : m.syscalls) out << "syscall " << n << " = " << fn << '\n';
  for (const auto& f : m.functions) {
    out << "\nfunc " << f.name << '\n';
    for (const auto& op : f.body) {
      out << "  ";
      switch (op.kind) {
        case OpKind::ObjAddr: out << "objaddr x" << op.reg << ", " << op.name; break;
        case OpKind::Call: out << "call " << op.name; break;
        case OpKind::ICall:
          out << "icall x" << op.reg << ", " << op.name;
          if (op.n >= 0) out << ", " << op.n;
          break;
        case OpKind::StoreField: out << "storefield x" << op.reg << ", " << op.name << ", " << op.arg; break;
        case OpKind::LoadField: out << "loadfield x" << op.reg << ", " << op.name; break;
        case OpKind::Compute: out << "compute " << op.n; break;
        case OpKind::AllocStack: out << "alloc " << op.n; break;
        case OpKind::RepeatBegin: out << "repeat " << op.n; break;
        case OpKind::RepeatEnd: out << "endrepeat"; break;
        case OpKind::Asm: out << "asm \"" << op.name << '"'; break;
      }
      out << '\n';
    }
    out << "end\n";
  }
  return out.str();
}

}  // namespace kpac
