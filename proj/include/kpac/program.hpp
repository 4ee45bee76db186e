#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kpac/key_class.hpp"

namespace kpac {

/// Page permission bits. A page with only kPermX is execute-only.
enum Perm : uint8_t {
  kPermR = 1,
  kPermW = 2,
  kPermX = 4,
  kPermU = 8,  ///< accessible from EL0
};

inline constexpr uint64_t kPageSize = 4096;

inline constexpr uint64_t page_floor(uint64_t a) { return a & ~(kPageSize - 1); }
inline constexpr uint64_t page_ceil(uint64_t a) { return (a + kPageSize - 1) & ~(kPageSize - 1); }

/// "rx", "rwu", "x", ...
std::string perm_string(uint8_t perms);
/// Throws ParseError on unknown letters or an empty set.
uint8_t parse_perms(std::string_view s);

struct Section {
  std::string name;
  uint64_t base = 0;
  uint8_t perms = 0;
  std::vector<uint8_t> bytes;

  uint64_t end() const { return base + bytes.size(); }
  bool contains(uint64_t addr) const { return addr >= base && addr < end(); }
  bool operator==(const Section&) const = default;
};

/// One statically initialised pointer to be signed in place at boot.
/// location - member_offset is the base of the containing object.
struct SigningTableEntry {
  uint64_t location = 0;
  KeyClass key = KeyClass::DB;
  uint16_t const16 = 0;
  uint64_t member_offset = 0;

  uint64_t object_base() const { return location - member_offset; }
  bool operator==(const SigningTableEntry&) const = default;
};

struct FunctionInfo {
  std::string name;
  uint64_t entry = 0;
  uint64_t end = 0;
  uint64_t id = 0;  ///< 48-bit id used by the parts-like modifier

  bool operator==(const FunctionInfo&) const = default;
};

/// A linked image: sections at absolute addresses, symbols, function
/// metadata and the boot signing table.
struct Program {
  std::vector<Section> sections;
  std::map<std::string, uint64_t, std::less<>> symbols;
  std::vector<FunctionInfo> functions;
  std::vector<SigningTableEntry> signing_table;

  bool operator==(const Program&) const = default;

  Section* section(std::string_view name);
  const Section* section(std::string_view name) const;
  const Section* section_at(uint64_t addr) const;
  const FunctionInfo* function_at(uint64_t addr) const;
  const FunctionInfo* function(std::string_view name) const;

  /// Resolves "name", "name+off" or "name-off".
  std::optional<uint64_t> resolve(std::string_view expr) const;
  /// As resolve(), but throws LinkError.
  uint64_t require(std::string_view expr) const;
  /// Alphabetically first symbol exactly at `addr`.
  std::optional<std::string> label_at(uint64_t addr) const;
  /// "name+0x10" for the nearest preceding symbol, hex otherwise.
  std::string symbolize(uint64_t addr) const;

  /// Little-endian word access into section bytes. Throws LinkError when
  /// the range is not fully inside one section.
  uint64_t read64(uint64_t addr) const;
  void write64(uint64_t addr, uint64_t value);
  uint32_t read32(uint64_t addr) const;
  void write32(uint64_t addr, uint32_t value);

  /// Appends every section, symbol, function and signing entry of `other`.
  /// Throws LinkError on overlapping pages or clashing symbol names.
  void merge(const Program& other);

  /// Throws LinkError when sections are misaligned or share pages.
  void validate() const;
};

/// Assembles the text program format. Throws ParseError with a line number.
Program assemble(std::string_view text);

/// Text form that assemble() maps back to an equal Program.
std::string disassemble(const Program& program);

}  // namespace kpac
