#include <map>
#include <set>
#include <sstream>

#include "kpac/error.hpp"
#include "kpac/instrument.hpp"

namespace kpac {
namespace {

std::string hex(uint64_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << v;
  return s.str();
}

std::string key_word(KeyClass k) {
  std::string s(to_string(k));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Key used for a protected field's stored pointer.
KeyClass field_key(const FieldDecl& f, ModifierScheme scheme) {
  return f.prot == Protection::WritableFnPtr ? code_pointer_key(scheme) : data_pointer_key(scheme);
}

bool signed_field(const FieldDecl& f, ModifierScheme scheme) {
  return protects_fields(scheme) && f.prot != Protection::None;
}

}  // namespace

std::string emit_image(const IrModule& module, ModifierScheme scheme, const ImageLayout& layout) {
  std::ostringstream out;
  out << ".section " << layout.prefix << ".text " << hex(layout.text) << " rx\n";
  if (layout.runtime) {
    const bool keys = !kernel_keys(scheme).empty();
    out << "vector:\n"
        << "  " << (keys ? "bl " + hex(layout.setter) : std::string("nop")) << "\n"
        << "  ldr x8, [sp, #64]\n"
        << "  movaddr x9, syscall_table\n"
        << "  ldr x9, [x9, x8, lsl #3]\n"
        << "  movz x10, #0\n"
        << "  blr x9\n"
        << "  str x10, [sp]\n"
        << "  eret\n"
        << "sys_exit:\n"
        << "  hlt #0\n";
  }
  for (const auto& f : module.functions) {
    for (const auto& line : instrument_function(f, module, scheme)) {
      const bool label_or_directive = line.back() == ':' || line[0] == '.';
      out << (label_or_directive ? "" : "  ") << line << '\n';
    }
  }

  const bool rodata = layout.runtime || !module.optables.empty();
  if (rodata) {
    out << ".section " << layout.prefix << ".rodata " << hex(layout.rodata) << " r\n";
    if (layout.runtime) {
      const int max = module.syscalls.empty() ? 0 : module.syscalls.rbegin()->first;
      out << "syscall_table:\n  .quad sys_exit\n";
      for (int n = 1; n <= max; ++n) {
        auto it = module.syscalls.find(n);
        out << "  .quad " << (it == module.syscalls.end() ? std::string("0") : it->second) << '\n';
      }
    }
    for (const auto& t : module.optables) {
      out << t.name << ":\n";
      for (const auto& e : t.entries) out << "  .quad " << e << '\n';
    }
  }

  if (!module.objects.empty()) {
    out << ".section " << layout.prefix << ".data " << hex(layout.data) << " rw\n";
    for (const auto& o : module.objects) {
      std::map<uint32_t, const StaticInit*> at;
      for (const auto& i : module.inits)
        if (i.object == o.name) at[module.field(i.field)->offset] = &i;
      out << "  .align 16\n" << o.name << ":\n";
      for (uint32_t off = 0; off < o.size; off += 8) {
        auto it = at.find(off);
        out << "  .quad " << (it == at.end() ? std::string("0") : it->second->target) << '\n';
      }
    }
    for (const auto& i : module.inits) {
      const FieldDecl* f = module.field(i.field);
      if (!signed_field(*f, scheme)) continue;
      out << ".sign " << i.object << '+' << f->offset << ' ' << key_word(field_key(*f, scheme)) << ' '
          << hex(f->const16) << ' ' << f->offset << '\n';
    }
  }
  return out.str();
}

Program build_image(const IrModule& module, ModifierScheme scheme, const ImageLayout& layout) {
  return assemble(emit_image(module, scheme, layout));
}

std::vector<SigningTableEntry> build_signing_table(const IrModule& module, const Program& linked,
                                                   ModifierScheme scheme) {
  std::vector<SigningTableEntry> table;
  std::set<uint64_t> seen;
  for (const auto& i : module.inits) {
    const FieldDecl* f = module.field(i.field);
    if (!f) throw LinkError("unknown field '" + i.field + "'");
    if (!signed_field(*f, scheme)) continue;
    const auto base = linked.resolve(i.object);
    if (!base) throw LinkError("unresolved object '" + i.object + "'");
    SigningTableEntry e;
    e.location = *base + f->offset;
    e.key = field_key(*f, scheme);
    e.const16 = f->const16;
    e.member_offset = f->offset;
    if (!seen.insert(e.location).second) throw LinkError("duplicate signing location " + hex(e.location));
    table.push_back(e);
  }
  return table;
}

void boot_sign(Machine& m, const std::vector<SigningTableEntry>& table) { boot_sign(m, table, m.keys()); }

void boot_sign(Machine& m, const std::vector<SigningTableEntry>& table, const KeyBank& keys) {
  std::set<uint64_t> seen;
  for (const auto& e : table)
    if (!seen.insert(e.location).second) throw BootError("duplicate signing location " + hex(e.location));
  if (!m.config().pauth_implemented) return;
  for (const auto& e : table) {
    const auto p = m.memory().perms(e.location);
    if (!p || !m.memory().perms(e.location + 7)) throw BootError("signing table entry at unmapped " + hex(e.location));
    const uint64_t raw = m.memory().load64(e.location);
    const uint64_t mod = ptr_modifier(e.object_base(), e.const16);
    m.memory().store64(e.location, exec_pac(keys, m.pac_control(), e.key, raw, mod, m.config().layout));
  }
}

std::string VerifyReport::text() const {
  if (findings.empty()) return "accepted\n";
  std::ostringstream out;
  out << "rejected: " << findings.size() << " finding(s)\n";
  for (const auto& f : findings) out << "  " << hex(f.addr) << ": " << f.reason << '\n';
  return out.str();
}

VerifyReport verify_image(const Program& image, uint64_t setter_base, uint64_t setter_size) {
  VerifyReport r;
  std::set<uint64_t> block_starts;
  for (const auto& [name, addr] : image.symbols) block_starts.insert(addr);
  for (const auto& s : image.sections) {
    if (!(s.perms & kPermX)) continue;
    std::map<int, uint64_t> known;  // registers holding a MOVZ/MOVK constant
    for (uint64_t off = 0; off + 4 <= s.bytes.size(); off += 4) {
      const uint64_t pc = s.base + off;
      if (block_starts.count(pc)) known.clear();
      const uint32_t word = image.read32(pc);
      const auto in = decode(word);
      if (!in) {
        r.findings.push_back({pc, "undecodable word " + hex(word)});
        known.clear();
        continue;
      }
      const bool on_setter = pc >= setter_base && pc < setter_base + setter_size;
      switch (in->op) {
        case Opcode::Movz: known[in->rd] = static_cast<uint64_t>(in->imm) << in->shift; break;
        case Opcode::Movk:
          if (auto it = known.find(in->rd); it != known.end()) {
            const uint64_t mask = uint64_t{0xFFFF} << in->shift;
            it->second = (it->second & ~mask) | (static_cast<uint64_t>(in->imm) << in->shift);
          }
          break;
        case Opcode::Mrs:
          if (!on_setter && is_key_register(in->sysreg))
            r.findings.push_back({pc, "MRS reads key register " + std::string(to_string(in->sysreg))});
          known.erase(in->rd);
          break;
        case Opcode::Msr:
          if (!on_setter && in->sysreg == SysReg::Sctlr) {
            auto it = known.find(in->rd);
            const bool safe = in->rd != kZr && it != known.end() &&
                              (it->second & PacControl::kAllEnableBits) == PacControl::kAllEnableBits;
            if (!safe) r.findings.push_back({pc, "MSR to SCTLR may clear a PAC enable bit"});
          }
          break;
        case Opcode::B:
        case Opcode::Bl:
        case Opcode::Br:
        case Opcode::Blr:
        case Opcode::Blraa:
        case Opcode::Blrab:
        case Opcode::Ret:
        case Opcode::Cbz:
        case Opcode::Cbnz:
        case Opcode::Svc:
        case Opcode::Eret: known.clear(); break;
        case Opcode::Pacia1716:
        case Opcode::Pacib1716:
        case Opcode::Autia1716:
        case Opcode::Autib1716: known.erase(kIp1); break;
        default:
          // Any other write to a tracked register invalidates it.
          if (in->op != Opcode::Str && in->op != Opcode::Stp && in->op != Opcode::Nop) known.erase(in->rd);
          if (in->op == Opcode::Ldp) known.erase(in->rm);
          if (in->mode == AddrMode::PreIndex || in->mode == AddrMode::PostIndex) known.erase(in->rn);
          break;
      }
    }
  }
  return r;
}

}  // namespace kpac
