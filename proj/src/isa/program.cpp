#include "kpac/program.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include "kpac/error.hpp"
#include "kpac/isa.hpp"

namespace kpac {
namespace {

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<int64_t> parse_number(std::string_view t) {
  t = trim(t);
  bool neg = false;
  if (!t.empty() && (t[0] == '-' || t[0] == '+')) {
    neg = t[0] == '-';
    t.remove_prefix(1);
  }
  int base = 10;
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    t.remove_prefix(2);
  }
  if (t.empty()) return std::nullopt;
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v, base);
  if (ec != std::errc() || p != t.data() + t.size()) return std::nullopt;
  return neg ? static_cast<int64_t>(0 - v) : static_cast<int64_t>(v);
}

bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$'; }

bool is_ident(std::string_view s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

const Section* find_section(const std::vector<Section>& secs, uint64_t addr, size_t len) {
  for (const auto& s : secs) {
    if (addr >= s.base && addr + len <= s.end() && addr + len >= addr) return &s;
  }
  return nullptr;
}

}  // namespace

std::string perm_string(uint8_t p) {
  std::string s;
  if (p & kPermR) s += 'r';
  if (p & kPermW) s += 'w';
  if (p & kPermX) s += 'x';
  if (p & kPermU) s += 'u';
  return s.empty() ? "-" : s;
}

uint8_t parse_perms(std::string_view s) {
  uint8_t p = 0;
  for (char c : s) {
    switch (c) {
      case 'r': p |= kPermR; break;
      case 'w': p |= kPermW; break;
      case 'x': p |= kPermX; break;
      case 'u': p |= kPermU; break;
      default: throw ParseError("bad permission letter '" + std::string(1, c) + "'");
    }
  }
  if (!p) throw ParseError("empty permission set");
  return p;
}

Section* Program::section(std::string_view name) {
  for (auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const Section* Program::section(std::string_view name) const {
  return const_cast<Program*>(this)->section(name);
}

const Section* Program::section_at(uint64_t addr) const { return find_section(sections, addr, 1); }

const FunctionInfo* Program::function_at(uint64_t addr) const {
  for (const auto& f : functions) {
    if (addr >= f.entry && addr < f.end) return &f;
  }
  return nullptr;
}

const FunctionInfo* Program::function(std::string_view name) const {
  for (const auto& f : functions) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::optional<uint64_t> Program::resolve(std::string_view expr) const {
  expr = trim(expr);
  size_t op = expr.find_first_of("+-", 1);
  std::string_view name = trim(expr.substr(0, op));
  int64_t off = 0;
  if (op != std::string_view::npos) {
    auto v = parse_number(expr.substr(op + 1));
    if (!v) return std::nullopt;
    off = expr[op] == '-' ? -*v : *v;
  }
  auto it = symbols.find(name);
  if (it == symbols.end()) return std::nullopt;
  return it->second + static_cast<uint64_t>(off);
}

uint64_t Program::require(std::string_view expr) const {
  if (auto v = resolve(expr)) return *v;
  throw LinkError("unresolved symbol '" + std::string(expr) + "'");
}

std::optional<std::string> Program::label_at(uint64_t addr) const {
  for (const auto& [name, a] : symbols) {
    if (a == addr) return name;
  }
  return std::nullopt;
}

std::string Program::symbolize(uint64_t addr) const {
  const std::string* best = nullptr;
  uint64_t best_addr = 0;
  for (const auto& [name, a] : symbols) {
    if (a <= addr && (!best || a > best_addr)) {
      best = &name;
      best_addr = a;
    }
  }
  if (!best || addr - best_addr > 0x100000) return hex(addr);
  return addr == best_addr ? *best : *best + "+" + hex(addr - best_addr);
}

uint64_t Program::read64(uint64_t addr) const {
  const Section* s = find_section(sections, addr, 8);
  if (!s) throw LinkError("read64 outside sections at " + hex(addr));
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | s->bytes[addr - s->base + i];
  return v;
}

void Program::write64(uint64_t addr, uint64_t value) {
  auto* s = const_cast<Section*>(find_section(sections, addr, 8));
  if (!s) throw LinkError("write64 outside sections at " + hex(addr));
  for (int i = 0; i < 8; ++i) s->bytes[addr - s->base + i] = static_cast<uint8_t>(value >> (8 * i));
}

uint32_t Program::read32(uint64_t addr) const {
  const Section* s = find_section(sections, addr, 4);
  if (!s) throw LinkError("read32 outside sections at " + hex(addr));
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | s->bytes[addr - s->base + i];
  return v;
}

void Program::write32(uint64_t addr, uint32_t value) {
  auto* s = const_cast<Section*>(find_section(sections, addr, 4));
  if (!s) throw LinkError("write32 outside sections at " + hex(addr));
  for (int i = 0; i < 4; ++i) s->bytes[addr - s->base + i] = static_cast<uint8_t>(value >> (8 * i));
}

void Program::validate() const {
  for (size_t i = 0; i < sections.size(); ++i) {
    const auto& a = sections[i];
    if (a.base % kPageSize) throw LinkError("section " + a.name + " is not page aligned");
    for (size_t j = i + 1; j < sections.size(); ++j) {
      const auto& b = sections[j];
      if (a.name == b.name) throw LinkError("duplicate section " + a.name);
      const uint64_t a_end = page_ceil(std::max(a.end(), a.base + 1));
      const uint64_t b_end = page_ceil(std::max(b.end(), b.base + 1));
      if (a.base < b_end && b.base < a_end) throw LinkError("sections " + a.name + " and " + b.name + " share pages");
    }
  }
}

void Program::merge(const Program& other) {
  for (const auto& [name, addr] : other.symbols) {
    auto [it, fresh] = symbols.emplace(name, addr);
    if (!fresh && it->second != addr) throw LinkError("symbol clash: " + name);
  }
  sections.insert(sections.end(), other.sections.begin(), other.sections.end());
  functions.insert(functions.end(), other.functions.begin(), other.functions.end());
  signing_table.insert(signing_table.end(), other.signing_table.begin(), other.signing_table.end());
  validate();
}

// ---------------------------------------------------------------------------
// Assembler

namespace {

enum class StmtKind { Inst, Quad, Word, Byte, MovAddr };

struct Stmt {
  StmtKind kind;
  int line;
  size_t section;
  uint64_t addr;
  std::string text;
  int part = 0;  // MovAddr: which 16-bit chunk
};

struct SignStmt {
  int line;
  std::string location, key, const16, offset;
};

std::string strip_comment(std::string_view line) {
  size_t cut = line.size();
  if (auto p = line.find("//"); p != std::string_view::npos) cut = std::min(cut, p);
  if (auto p = line.find(';'); p != std::string_view::npos) cut = std::min(cut, p);
  return std::string(trim(line.substr(0, cut)));
}

}  // namespace

Program assemble(std::string_view text) {
  Program prog;
  std::vector<Stmt> stmts;
  std::vector<SignStmt> signs;
  std::optional<size_t> cur;
  std::optional<size_t> open_func;
  std::vector<uint64_t> sizes;  // running size per section

  auto here = [&](int line) -> uint64_t {
    if (!cur) throw ParseError("content outside any .section", line);
    return prog.sections[*cur].base + sizes[*cur];
  };
  auto define = [&](const std::string& name, uint64_t addr, int line) {
    if (!is_ident(name)) throw ParseError("bad symbol name '" + name + "'", line);
    if (!prog.symbols.emplace(name, addr).second) throw ParseError("duplicate symbol '" + name + "'", line);
  };
  auto close_func = [&](uint64_t end) {
    if (open_func) prog.functions[*open_func].end = end;
    open_func.reset();
  };

  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = strip_comment(raw);
    // Leading labels.
    for (;;) {
      size_t colon = line.find(':');
      if (colon == std::string::npos) break;
      std::string_view head = trim(std::string_view(line).substr(0, colon));
      if (!is_ident(head)) break;
      define(std::string(head), here(lineno), lineno);
      line = std::string(trim(std::string_view(line).substr(colon + 1)));
    }
    if (line.empty()) continue;

    const auto w = words(line);
    const std::string_view d = w[0];
    auto need = [&](size_t n) {
      if (w.size() != n) throw ParseError(std::string(d) + ": expected " + std::to_string(n - 1) + " argument(s)", lineno);
    };
    auto num = [&](std::string_view t) {
      auto v = parse_number(t);
      if (!v) throw ParseError("bad number '" + std::string(t) + "'", lineno);
      return *v;
    };

    if (d == ".section") {
      need(4);
      std::string name(w[1]);
      if (prog.section(name)) throw ParseError("duplicate section " + name, lineno);
      if (cur) close_func(here(lineno));
      Section s;
      s.name = name;
      s.base = static_cast<uint64_t>(num(w[2]));
      s.perms = parse_perms(w[3]);
      if (s.base % kPageSize) throw ParseError("section base not page aligned", lineno);
      prog.sections.push_back(std::move(s));
      sizes.push_back(0);
      cur = prog.sections.size() - 1;
    } else if (d == ".set") {
      need(3);
      define(std::string(w[1]), static_cast<uint64_t>(num(w[2])), lineno);
    } else if (d == ".func") {
      need(3);
      const uint64_t at = here(lineno);
      close_func(at);
      define(std::string(w[1]), at, lineno);
      prog.functions.push_back({std::string(w[1]), at, 0, static_cast<uint64_t>(num(w[2]))});
      open_func = prog.functions.size() - 1;
    } else if (d == ".endfunc") {
      need(1);
      if (!open_func) throw ParseError(".endfunc without .func", lineno);
      close_func(here(lineno));
    } else if (d == ".quad" || d == ".word" || d == ".byte") {
      need(2);
      const StmtKind k = d == ".quad" ? StmtKind::Quad : d == ".word" ? StmtKind::Word : StmtKind::Byte;
      stmts.push_back({k, lineno, *cur, here(lineno), std::string(w[1]), 0});
      sizes[*cur] += k == StmtKind::Quad ? 8 : k == StmtKind::Word ? 4 : 1;
    } else if (d == ".zero") {
      need(2);
      const int64_t n = num(w[1]);
      if (n < 0) throw ParseError(".zero size negative", lineno);
      here(lineno);
      sizes[*cur] += static_cast<uint64_t>(n);
    } else if (d == ".align") {
      need(2);
      const int64_t n = num(w[1]);
      if (n <= 0 || (n & (n - 1))) throw ParseError(".align needs a power of two", lineno);
      const uint64_t at = here(lineno);
      const uint64_t pad = (static_cast<uint64_t>(n) - at % static_cast<uint64_t>(n)) % static_cast<uint64_t>(n);
      const bool exec = prog.sections[*cur].perms & kPermX;
      if (exec && pad % 4 == 0) {
        for (uint64_t i = 0; i < pad; i += 4) stmts.push_back({StmtKind::Inst, lineno, *cur, at + i, "nop", 0});
      }
      sizes[*cur] += pad;
    } else if (d == ".sign") {
      need(5);
      signs.push_back({lineno, std::string(w[1]), std::string(w[2]), std::string(w[3]), std::string(w[4])});
    } else if (d[0] == '.') {
      throw ParseError("unknown directive " + std::string(d), lineno);
    } else if (d == "movaddr") {
      // Pseudo-instruction: full 64-bit address via MOVZ + 3 MOVK.
      const uint64_t at = here(lineno);
      const std::string operands(trim(std::string_view(line).substr(d.size())));
      for (int part = 0; part < 4; ++part)
        stmts.push_back({StmtKind::MovAddr, lineno, *cur, at + 4 * part, operands, part});
      sizes[*cur] += 16;
    } else {
      const uint64_t at = here(lineno);
      stmts.push_back({StmtKind::Inst, lineno, *cur, at, line, 0});
      sizes[*cur] += 4;
    }
  }
  if (cur) close_func(prog.sections[*cur].base + sizes[*cur]);
  for (size_t i = 0; i < prog.sections.size(); ++i) prog.sections[i].bytes.assign(sizes[i], 0);

  const SymbolResolver resolver = [&](std::string_view e) { return prog.resolve(e); };
  auto value = [&](const std::string& t, int line) -> uint64_t {
    if (auto v = parse_number(t)) return static_cast<uint64_t>(*v);
    if (auto v = prog.resolve(t)) return *v;
    throw ParseError("unresolved '" + t + "'", line);
  };
  for (const auto& s : stmts) {
    Section& sec = prog.sections[s.section];
    const size_t off = s.addr - sec.base;
    switch (s.kind) {
      case StmtKind::Inst: {
        uint32_t word;
        try {
          word = encode(parse_instruction(s.text, s.addr, resolver));
        } catch (const ParseError& e) {
          throw ParseError(e.what(), s.line);
        }
        for (int i = 0; i < 4; ++i) sec.bytes[off + i] = static_cast<uint8_t>(word >> (8 * i));
        break;
      }
      case StmtKind::MovAddr: {
        const auto comma = s.text.find(',');
        if (comma == std::string::npos) throw ParseError("movaddr: expected 'xN, address'", s.line);
        const std::string reg(trim(std::string_view(s.text).substr(0, comma)));
        const uint64_t v = value(std::string(trim(std::string_view(s.text).substr(comma + 1))), s.line);
        Instruction in;
        try {
          in = parse_instruction("movz " + reg + ", #0", s.addr);
        } catch (const ParseError& e) {
          throw ParseError(e.what(), s.line);
        }
        const auto chunk = static_cast<uint16_t>(v >> (16 * s.part));
        in = s.part == 0 ? ins::movz(in.rd, chunk, 0) : ins::movk(in.rd, chunk, 16 * s.part);
        const uint32_t word = encode(in);
        for (int i = 0; i < 4; ++i) sec.bytes[off + i] = static_cast<uint8_t>(word >> (8 * i));
        break;
      }
      case StmtKind::Quad: {
        const uint64_t v = value(s.text, s.line);
        for (int i = 0; i < 8; ++i) sec.bytes[off + i] = static_cast<uint8_t>(v >> (8 * i));
        break;
      }
      case StmtKind::Word: {
        const uint64_t v = value(s.text, s.line);
        if (v > 0xFFFFFFFFu) throw ParseError(".word value too large", s.line);
        for (int i = 0; i < 4; ++i) sec.bytes[off + i] = static_cast<uint8_t>(v >> (8 * i));
        break;
      }
      case StmtKind::Byte: {
        const uint64_t v = value(s.text, s.line);
        if (v > 0xFF) throw ParseError(".byte value too large", s.line);
        sec.bytes[off] = static_cast<uint8_t>(v);
        break;
      }
    }
  }

  for (const auto& s : signs) {
    SigningTableEntry e;
    e.location = value(s.location, s.line);
    auto k = parse_key_class(s.key);
    if (!k || *k == KeyClass::GA) throw ParseError("bad signing key '" + s.key + "'", s.line);
    e.key = *k;
    const uint64_t c = value(s.const16, s.line);
    if (c > 0xFFFF) throw ParseError("signing constant exceeds 16 bits", s.line);
    e.const16 = static_cast<uint16_t>(c);
    e.member_offset = value(s.offset, s.line);
    prog.signing_table.push_back(e);
  }

  try {
    prog.validate();
  } catch (const LinkError& e) {
    throw ParseError(e.what());
  }
  return prog;
}

std::string disassemble(const Program& prog) {
  std::ostringstream out;
  std::multimap<uint64_t, std::string> labels;
  for (const auto& [name, addr] : prog.symbols) labels.emplace(addr, name);
  std::map<uint64_t, const FunctionInfo*> entries;
  std::multiset<uint64_t> ends;
  std::set<std::string, std::less<>> func_names;
  for (const auto& f : prog.functions) {
    entries[f.entry] = &f;
    ends.insert(f.end);
    func_names.insert(f.name);
  }
  std::set<std::string, std::less<>> placed;
  const SymbolNamer namer = [&](uint64_t a) { return prog.label_at(a); };

  auto boundary = [&](uint64_t a) {
    return labels.count(a) || entries.count(a) || ends.count(a);
  };
  auto emit_marks = [&](uint64_t a, bool at_end) {
    for (size_t i = ends.count(a); i > 0; --i) out << "  .endfunc\n";
    // An address just past a section may begin the next one; leave its marks there.
    if (at_end && prog.section_at(a)) return;
    if (auto it = entries.find(a); !at_end && it != entries.end()) {
      out << "  .func " << it->second->name << ' ' << it->second->id << '\n';
      placed.insert(it->second->name);
    }
    auto [lo, hi] = labels.equal_range(a);
    for (auto it = lo; it != hi; ++it) {
      if (func_names.count(it->second) && entries.count(a) && entries[a]->name == it->second) continue;
      out << it->second << ":\n";
      placed.insert(it->second);
    }
  };

  for (const auto& s : prog.sections) {
    out << ".section " << s.name << ' ' << hex(s.base) << ' ' << perm_string(s.perms) << '\n';
    const bool exec = s.perms & kPermX;
    uint64_t a = s.base;
    while (a < s.end()) {
      emit_marks(a, false);
      uint64_t next = a + 1;
      while (next < s.end() && !boundary(next)) ++next;
      const uint64_t span = next - a;
      const size_t off = a - s.base;
      if (exec && span >= 4) {
        uint32_t w = 0;
        for (int i = 3; i >= 0; --i) w = (w << 8) | s.bytes[off + i];
        if (auto inst = decode(w))
          out << "  " << format(*inst, a, namer) << '\n';
        else
          out << "  .word " << hex(w) << '\n';
        a += 4;
        continue;
      }
      if (!exec) {
        uint64_t z = a;
        while (z < next && s.bytes[z - s.base] == 0) ++z;
        if (z - a >= 8 || (z > a && z == next)) {
          out << "  .zero " << (z - a) << '\n';
          a = z;
          continue;
        }
        if (span >= 8) {
          uint64_t v = 0;
          for (int i = 7; i >= 0; --i) v = (v << 8) | s.bytes[off + i];
          out << "  .quad " << hex(v) << '\n';
          a += 8;
          continue;
        }
      }
      out << "  .byte " << hex(s.bytes[off]) << '\n';
      a += 1;
    }
    emit_marks(s.end(), true);
    ends.erase(s.end());
    if (!prog.section_at(s.end())) labels.erase(s.end());
  }
  for (const auto& [name, addr] : prog.symbols) {
    if (!placed.count(name)) out << ".set " << name << ' ' << hex(addr) << '\n';
  }
  for (const auto& e : prog.signing_table) {
    std::string key(to_string(e.key));
    for (char& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out << ".sign " << hex(e.location) << ' ' << key << ' ' << hex(e.const16) << ' ' << e.member_offset << '\n';
  }
  return out.str();
}

}  // namespace kpac
