#pragma once

#include <cstdint>
#include <vector>

#include "kpac/instrument.hpp"
#include "kpac/machine.hpp"

namespace kpac {

inline constexpr uint64_t kTaskStructBase = 0xffff00000b000000;
inline constexpr uint64_t kKernelStackBase = 0xffff800010000000;
inline constexpr uint64_t kKernelStackStride = 0x6000;  ///< 16 KiB stack + 8 KiB guard
inline constexpr uint64_t kUserTextBase = 0x400000;
inline constexpr uint64_t kUserStackBase = 0x80000000;

inline constexpr uint64_t default_kstack(int i) { return kKernelStackBase + static_cast<uint64_t>(i) * kKernelStackStride; }
inline constexpr uint64_t task_struct_addr(int i) { return kTaskStructBase + static_cast<uint64_t>(i) * kTaskStructSize; }
inline constexpr uint64_t user_text_addr(int i) { return kUserTextBase + static_cast<uint64_t>(i) * kPageSize; }
inline constexpr uint64_t user_stack_addr(int i) { return kUserStackBase + static_cast<uint64_t>(i) * 0x10000; }

struct ThreadSetup {
  uint64_t kstack_base = 0;   ///< 0 picks default_kstack(i)
  std::vector<int> syscalls;  ///< issued in order, followed by exit
};

struct BootOptions {
  ModifierScheme scheme = ModifierScheme::Proposed;
  MachineConfig machine{};
  uint64_t seed = 0;
  std::vector<ThreadSetup> threads{ThreadSetup{}};
  ImageLayout layout{};
};

/// A booted machine plus what was loaded into it.
struct System {
  Machine machine;
  Program image;  ///< kernel image, key setter and user programs as loaded
  KeyBank kernel_keys;
  VerifyReport verify;
};

/// Kernel keys for `seed`, then user keys for thread i as stream i + 1.
KeyBank derive_keys(uint64_t seed, uint64_t stream);

/// Boots `image`: verifies it together with the generated key setter, loads
/// it, installs kernel keys, signs the signing table in place, prepares every
/// thread and returns to EL0 in thread 0. A rejected image yields a machine
/// halted with a Rejected outcome. Throws BootError for inconsistent setups.
System boot_kernel(const Program& image, const BootOptions& opts);

/// Late module load: verify, map, then sign its table with the kernel keys.
/// Returns the verifier report; nothing is loaded when it rejects.
VerifyReport load_module(System& sys, const Program& module);

}  // namespace kpac
