#include <cstdio>

#include "kpac/error.hpp"
#include "kpac/machine.hpp"

namespace kpac {
namespace {

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void Memory::map(uint64_t base, uint64_t size, uint8_t perms) {
  if (base % kPageSize) throw ParamError("map base not page aligned: " + hex(base));
  const uint64_t end = page_ceil(base + size);
  for (uint64_t a = base; a < end; a += kPageSize) {
    if (pages_.count(a)) throw ParamError("page already mapped: " + hex(a));
  }
  for (uint64_t a = base; a < end; a += kPageSize) pages_[a].perms = perms;
}

void Memory::protect(uint64_t base, uint64_t size, uint8_t perms) {
  for (uint64_t a = page_floor(base); a < base + size; a += kPageSize) page(a).perms = perms;
}

bool Memory::mapped(uint64_t addr) const { return pages_.count(page_floor(addr)) != 0; }

std::optional<uint8_t> Memory::perms(uint64_t addr) const {
  auto it = pages_.find(page_floor(addr));
  if (it == pages_.end()) return std::nullopt;
  return it->second.perms;
}

Memory::Page& Memory::page(uint64_t addr) {
  auto it = pages_.find(page_floor(addr));
  if (it == pages_.end()) throw Error("access to unmapped address " + hex(addr));
  return it->second;
}

const Memory::Page& Memory::page(uint64_t addr) const { return const_cast<Memory*>(this)->page(addr); }

uint8_t Memory::load8(uint64_t addr) const { return page(addr).bytes[addr % kPageSize]; }
void Memory::store8(uint64_t addr, uint8_t v) { page(addr).bytes[addr % kPageSize] = v; }

uint32_t Memory::load32(uint64_t addr) const {
  uint32_t v = 0;
  if (addr % kPageSize <= kPageSize - 4) {
    const auto& b = page(addr).bytes;
    const size_t o = addr % kPageSize;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[o + i];
    return v;
  }
  for (int i = 3; i >= 0; --i) v = (v << 8) | load8(addr + i);
  return v;
}

void Memory::store32(uint64_t addr, uint32_t v) {
  for (int i = 0; i < 4; ++i) store8(addr + i, static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t Memory::load64(uint64_t addr) const {
  uint64_t v = 0;
  if (addr % kPageSize <= kPageSize - 8) {
    const auto& b = page(addr).bytes;
    const size_t o = addr % kPageSize;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[o + i];
    return v;
  }
  for (int i = 7; i >= 0; --i) v = (v << 8) | load8(addr + i);
  return v;
}

void Memory::store64(uint64_t addr, uint64_t v) {
  for (int i = 0; i < 8; ++i) store8(addr + i, static_cast<uint8_t>(v >> (8 * i)));
}

void Memory::load(const Program& prog) {
  for (const auto& s : prog.sections) {
    map(s.base, std::max<uint64_t>(s.bytes.size(), 1), s.perms);
    for (size_t i = 0; i < s.bytes.size(); ++i) store8(s.base + i, s.bytes[i]);
  }
}

}  // namespace kpac
