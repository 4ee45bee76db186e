#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kpac {

enum class Protection : uint8_t {
  None,           ///< plain load/store
  OpsPointer,     ///< data pointer to a read-only operations table
  WritableFnPtr,  ///< lone function pointer, called directly
  SensitiveData,  ///< writable data pointer
};
std::string_view to_string(Protection p);

struct FieldDecl {
  std::string type;
  std::string member;
  uint16_t const16 = 0;
  uint32_t offset = 0;
  Protection prot = Protection::None;
  int line = 0;

  std::string id() const { return type + "." + member; }
};

struct ObjectDecl {
  std::string name;
  std::string type;
  uint32_t size = 0;
  int line = 0;
};

/// Read-only table of function pointers, slot i holds entries[i].
struct OpTableDecl {
  std::string name;
  std::vector<std::string> entries;
  int line = 0;
};

/// Static initializer: object.member = target, written at link time.
struct StaticInit {
  std::string object;
  std::string field;  ///< "type.member"
  std::string target;
  int line = 0;
};

enum class OpKind : uint8_t {
  ObjAddr,      ///< reg <- address of object
  Call,         ///< direct call
  ICall,        ///< indirect call through a protected field (slot for ops tables)
  StoreField,   ///< sign and store a symbol address into reg->field
  LoadField,    ///< load, authenticate and dereference reg->field
  Compute,      ///< n ALU instructions on the result register
  AllocStack,   ///< grow the frame by n bytes
  RepeatBegin,  ///< loop n times until the matching RepeatEnd
  RepeatEnd,
  Asm,          ///< one raw instruction, unchecked
};

struct IrOp {
  OpKind kind = OpKind::Compute;
  int reg = 0;
  std::string name;  ///< callee, object, field id, or instruction text
  std::string arg;   ///< stored symbol
  int64_t n = 0;     ///< count, bytes or slot
  int line = 0;
};

struct IrFunction {
  std::string name;
  std::vector<IrOp> body;
  int line = 0;
};

struct IrModule {
  std::vector<FieldDecl> fields;
  std::vector<ObjectDecl> objects;
  std::vector<OpTableDecl> optables;
  std::vector<StaticInit> inits;
  std::map<int, std::string> syscalls;
  std::vector<IrFunction> functions;

  const FieldDecl* field(std::string_view id) const;
  const ObjectDecl* object(std::string_view name) const;
  const OpTableDecl* optable(std::string_view name) const;
  const IrFunction* function(std::string_view name) const;

  /// Cross-reference checks. Throws ParseError (with the offending line).
  void validate() const;
};

/// Parses the IR text format and validates the result. Throws ParseError.
IrModule parse_ir(std::string_view text);

/// Text that parse_ir maps back to an equivalent module.
std::string format_ir(const IrModule& m);

/// Result register of syscall handlers; Compute adds to it.
inline constexpr int kResultReg = 10;
/// Callee-saved loop counter used by Repeat.
inline constexpr int kLoopReg = 19;

}  // namespace kpac
