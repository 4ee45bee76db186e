#include <sstream>

#include "kpac/error.hpp"
#include "kpac/instrument.hpp"

namespace kpac {
namespace {

std::string reg(int r) { return "x" + std::to_string(r); }

std::string hex(uint64_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << v;
  return s.str();
}

std::string key_suffix(KeyClass k) {
  std::string s(to_string(k));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// x16 <- SP[31:0] : func[31:0]
AsmLines proposed_modifier(std::string_view func) {
  return {"adr x16, " + std::string(func), "mov x17, sp", "bfi x16, x17, #32, #32"};
}

// x16 <- SP[15:0] : id[47:0]
AsmLines parts_modifier(std::string_view func) {
  const uint64_t id = function_id(func);
  return {"movz x16, #" + hex(id & 0xFFFF), "movk x16, #" + hex((id >> 16) & 0xFFFF) + ", lsl #16",
          "movk x16, #" + hex((id >> 32) & 0xFFFF) + ", lsl #32", "mov x17, sp", "bfi x16, x17, #48, #16"};
}

void append(AsmLines& out, const AsmLines& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

uint64_t function_id(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h &= 0xFFFFFFFFFFFFull;
  return h ? h : 1;
}

FramePair frame_code(std::string_view func, ModifierScheme scheme) {
  const AsmLines push = {"stp x29, x30, [sp, #-16]!", "mov x29, sp"};
  const std::string pop = "ldp x29, x30, [sp], #16";
  FramePair f;
  switch (scheme) {
    case ModifierScheme::None:
      f.prologue = push;
      f.epilogue = {pop, "ret"};
      break;
    case ModifierScheme::SpOnly:
      f.prologue = {"pacia x30, sp"};
      append(f.prologue, push);
      f.epilogue = {pop, "autia x30, sp", "ret"};
      break;
    case ModifierScheme::Proposed:
      f.prologue = proposed_modifier(func);
      f.prologue.push_back("pacib x30, x16");
      append(f.prologue, push);
      f.epilogue = {pop};
      append(f.epilogue, proposed_modifier(func));
      append(f.epilogue, {"autib x30, x16", "ret"});
      break;
    case ModifierScheme::PartsLike:
      f.prologue = parts_modifier(func);
      f.prologue.push_back("pacib x30, x16");
      append(f.prologue, push);
      f.epilogue = {pop};
      append(f.epilogue, parts_modifier(func));
      append(f.epilogue, {"autib x30, x16", "ret"});
      break;
    case ModifierScheme::Compat1716:
      f.prologue = proposed_modifier(func);
      append(f.prologue, {"mov x17, x30", "pacib1716", "mov x30, x17"});
      append(f.prologue, push);
      f.epilogue = {pop};
      append(f.epilogue, proposed_modifier(func));
      append(f.epilogue, {"mov x17, x30", "autib1716", "mov x30, x17", "ret"});
      break;
  }
  return f;
}

int extra_instructions_per_call(ModifierScheme scheme) {
  const FramePair base = frame_code("f", ModifierScheme::None);
  const FramePair f = frame_code("f", scheme);
  return static_cast<int>(f.prologue.size() + f.epilogue.size() - base.prologue.size() - base.epilogue.size());
}

KeyClass data_pointer_key(ModifierScheme scheme) {
  return scheme == ModifierScheme::Compat1716 ? KeyClass::IB : KeyClass::DB;
}

KeyClass code_pointer_key(ModifierScheme scheme) {
  return scheme == ModifierScheme::Compat1716 ? KeyClass::IB : KeyClass::IA;
}

std::vector<KeyClass> kernel_keys(ModifierScheme scheme) {
  switch (scheme) {
    case ModifierScheme::None: return {};
    case ModifierScheme::Compat1716: return {KeyClass::IB};
    default: return {KeyClass::IA, KeyClass::IB, KeyClass::DB};
  }
}

Accessors gen_accessors(const FieldDecl& field, int obj, ModifierScheme scheme) {
  const std::string o = reg(obj);
  const std::string slot = "[" + o + ", #" + std::to_string(field.offset) + "]";
  Accessors a;
  if (!protects_fields(scheme) || field.prot == Protection::None) {
    a.getter = {"ldr x8, " + slot};
    a.setter = {"str x8, " + slot};
    return a;
  }
  const std::string c = "#" + hex(field.const16);
  if (scheme == ModifierScheme::Compat1716) {
    const AsmLines mod = {"movz x16, " + c, "bfi x16, " + o + ", #16, #48"};
    a.getter = {"ldr x17, " + slot};
    append(a.getter, mod);
    append(a.getter, {"autib1716", "mov x8, x17"});
    a.setter = {"mov x17, x8"};
    append(a.setter, mod);
    append(a.setter, {"pacib1716", "str x17, " + slot});
    return a;
  }
  const KeyClass key = field.prot == Protection::WritableFnPtr ? code_pointer_key(scheme) : data_pointer_key(scheme);
  const AsmLines mod = {"movz x9, " + c, "bfi x9, " + o + ", #16, #48"};
  a.getter = {"ldr x8, " + slot};
  append(a.getter, mod);
  a.getter.push_back("aut" + key_suffix(key) + " x8, x9");
  a.setter = mod;
  append(a.setter, {"pac" + key_suffix(key) + " x8, x9", "str x8, " + slot});
  return a;
}

namespace {

// Indirect call through `field` of the object in `obj`.
AsmLines indirect_call(const FieldDecl& field, int obj, int64_t slot, ModifierScheme scheme) {
  const Accessors a = gen_accessors(field, obj, scheme);
  AsmLines out;
  const bool fused = protects_fields(scheme) && scheme != ModifierScheme::Compat1716 &&
                     field.prot == Protection::WritableFnPtr;
  if (fused) {
    // Authenticate as part of the branch: blraa x8, x9.
    out.assign(a.getter.begin(), a.getter.end() - 1);
    out.push_back("blraa x8, x9");
    return out;
  }
  out = a.getter;
  if (slot >= 0) out.push_back("ldr x8, [x8, #" + std::to_string(slot * 8) + "]");
  out.push_back("blr x8");
  return out;
}

}  // namespace

AsmLines instrument_function(const IrFunction& func, const IrModule& module, ModifierScheme scheme) {
  const FramePair frame = frame_code(func.name, scheme);
  AsmLines out;
  out.push_back(".func " + func.name + " " + std::to_string(function_id(func.name)));
  append(out, frame.prologue);
  out.push_back(func.name + ".body:");
  int depth = 0, loops = 0;
  std::vector<int> open;
  int64_t frame_bytes = 0;
  auto field_of = [&](const IrOp& op) -> const FieldDecl& {
    const FieldDecl* f = module.field(op.name);
    if (!f) throw ParseError("unknown field '" + op.name + "'", op.line);
    return *f;
  };
  for (const IrOp& op : func.body) {
    switch (op.kind) {
      case OpKind::ObjAddr: out.push_back("movaddr " + reg(op.reg) + ", " + op.name); break;
      case OpKind::Call: out.push_back("bl " + op.name); break;
      case OpKind::ICall: {
        const FieldDecl& f = field_of(op);
        if (f.prot == Protection::SensitiveData) throw ParseError("cannot call through a data field", op.line);
        append(out, indirect_call(f, op.reg, op.n, scheme));
        break;
      }
      case OpKind::StoreField:
        out.push_back("movaddr x8, " + op.arg);
        append(out, gen_accessors(field_of(op), op.reg, scheme).setter);
        break;
      case OpKind::LoadField:
        append(out, gen_accessors(field_of(op), op.reg, scheme).getter);
        out.push_back("ldr x11, [x8]");
        break;
      case OpKind::Compute:
        for (int64_t i = 0; i < op.n; ++i) out.push_back("add x10, x10, #1");
        break;
      case OpKind::AllocStack:
        if (depth) throw ParseError("alloc inside repeat", op.line);
        frame_bytes += op.n;
        if (frame_bytes > 4080) throw ParseError("frame larger than 4080 bytes", op.line);
        out.push_back("sub sp, sp, #" + std::to_string(op.n));
        break;
      case OpKind::RepeatBegin:
        ++depth;
        open.push_back(loops++);
        append(out, {"str x19, [sp, #-16]!", "movz x19, #" + std::to_string(op.n)});
        out.push_back(func.name + ".loop" + std::to_string(open.back()) + ":");
        break;
      case OpKind::RepeatEnd:
        if (open.empty()) throw ParseError("endrepeat without repeat", op.line);
        append(out, {"sub x19, x19, #1", "cbnz x19, " + func.name + ".loop" + std::to_string(open.back()),
                     "ldr x19, [sp], #16"});
        open.pop_back();
        --depth;
        break;
      case OpKind::Asm: out.push_back(op.name); break;
    }
  }
  if (!open.empty()) throw ParseError("unterminated repeat in '" + func.name + "'", func.line);
  out.push_back(func.name + ".epilogue:");
  if (frame_bytes) out.push_back("add sp, sp, #" + std::to_string(frame_bytes));
  append(out, frame.epilogue);
  out.push_back(".endfunc");
  return out;
}

}  // namespace kpac
