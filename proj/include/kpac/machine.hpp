#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kpac/isa.hpp"
#include "kpac/pauth.hpp"
#include "kpac/program.hpp"

namespace kpac {

/// Sparse paged memory with per-page permissions. The accessors here are
/// host-side and ignore permissions; the machine checks them.
class Memory {
 public:
  /// Maps zero-filled pages covering [base, base+size). Throws ParamError if
  /// base is unaligned or any page is already mapped.
  void map(uint64_t base, uint64_t size, uint8_t perms);
  void protect(uint64_t base, uint64_t size, uint8_t perms);
  bool mapped(uint64_t addr) const;
  /// Permissions of the page holding `addr`, nullopt when unmapped.
  std::optional<uint8_t> perms(uint64_t addr) const;

  uint8_t load8(uint64_t addr) const;
  void store8(uint64_t addr, uint8_t v);
  uint32_t load32(uint64_t addr) const;
  void store32(uint64_t addr, uint32_t v);
  uint64_t load64(uint64_t addr) const;
  void store64(uint64_t addr, uint64_t v);

  /// Maps every section of `prog` with its permissions and copies its bytes.
  void load(const Program& prog);

 private:
  struct Page {
    uint8_t perms = 0;
    std::array<uint8_t, kPageSize> bytes{};
  };
  Page& page(uint64_t addr);
  const Page& page(uint64_t addr) const;

  std::unordered_map<uint64_t, Page> pages_;
};

enum class El : uint8_t { EL0 = 0, EL1 = 1 };

enum class FaultKind : uint8_t { Translation, Permission, Alignment, Undefined, Breakpoint, StepLimit };
std::string_view to_string(FaultKind k);

/// How a run ended. Exactly one per run.
struct Outcome {
  enum class Kind : uint8_t { Running, CleanExit, AuthFault, Halted, Hijacked, Rejected, Fault };

  Kind kind = Kind::Running;
  uint64_t pc = 0;      ///< instruction that faulted or branched
  uint64_t addr = 0;    ///< faulting address or hijack target
  uint64_t origin = 0;  ///< storage address of the attacker write behind the value, 0 if none
  KeyClass key = KeyClass::IA;
  FaultKind fault = FaultKind::Translation;
  std::string report;  ///< halt reason or verifier report

  bool operator==(const Outcome&) const = default;
  bool running() const { return kind == Kind::Running; }
};

std::string_view to_string(Outcome::Kind k);
std::string describe(const Outcome& o);

enum class EventKind : uint8_t {
  Instruction,
  KernelEntry,
  KernelExit,
  KeyInstall,
  KeyRestore,
  ContextSwitch,
  AuthSuccess,
  AuthFailure,
  Fault,
  Interrupt,
  ThreadStart,
  ThreadExit,
  AttackerRead,
  AttackerWrite,
  AttackerRejected,
  Halt,
};
std::string_view to_string(EventKind k);

struct TraceEvent {
  uint64_t step = 0;
  uint64_t pc = 0;
  EventKind kind = EventKind::Instruction;
  uint64_t cycles = 0;  ///< cycle counter after the event
  uint64_t addr = 0;
  uint64_t value = 0;
  int thread = -1;

  bool operator==(const TraceEvent&) const = default;
};

struct CostModel {
  uint64_t base = 1;
  uint64_t pauth = 4;
  uint64_t key_install = 9;  ///< per 128-bit key, on install and on restore
};

struct MachineConfig {
  PointerLayout layout{};
  bool pauth_implemented = true;  ///< false models a pre-8.3 core
  uint32_t fault_threshold = 8;
  uint64_t step_limit = 20'000'000;
  CostModel costs{};
  bool trace_instructions = false;
  bool round_robin = false;  ///< switch threads at every return to EL0
  bool restart_on_auth_fault = false;  ///< relaunch the faulting task instead of stopping
};

/// Kernel-side conventions the machine needs for entry, exit and switching.
struct KernelLayout {
  uint64_t vector = 0;               ///< EL0 synchronous exception vector
  uint64_t setter_base = 0;          ///< execute-only key setter page
  uint64_t setter_size = 0;
  std::vector<KeyClass> kernel_keys; ///< keys owned by the kernel, restored on exit
  bool sign_task_sp = false;
  KeyClass task_sp_key = KeyClass::DB;
  uint16_t task_sp_const = 0x5350;
};

inline constexpr uint64_t kPtRegsSize = 272;   ///< x0..x30, sp_el0, elr, spsr
inline constexpr uint64_t kKernelStackSize = 16 * 1024;
inline constexpr uint64_t kTaskSavedSp = 0;    ///< task-struct offset of the saved kernel SP
inline constexpr uint64_t kTaskStructSize = 0x100;

struct ThreadSpec {
  KeyBank user_keys{};
  uint64_t kstack_base = 0;  ///< lowest address; 4 KiB aligned, 16 KiB long
  uint64_t task_struct = 0;
  uint64_t user_entry = 0;
  uint64_t user_sp = 0;
};

struct Thread {
  ThreadSpec spec;
  enum class State : uint8_t { Runnable, Running, Exited } state = State::Runnable;
  std::vector<uint64_t> returns;  ///< x0 observed at each return to EL0
  uint64_t syscalls = 0;

  uint64_t kstack_top() const { return spec.kstack_base + kKernelStackSize; }
};

struct Counters {
  uint64_t cycles = 0;
  uint64_t instructions = 0;
  uint64_t key_switch_cycles = 0;  ///< key installs and restores
  uint64_t switch_cycles = 0;      ///< PAuth work done by context switches
  uint64_t pauth_instructions = 0;
  uint64_t syscalls = 0;
  uint64_t auth_failures = 0;  ///< detonated poisoned pointers at EL1
  uint64_t auth_successes = 0;
  uint64_t restarts = 0;
};

/// Single-threaded deterministic machine. Independent instances share nothing.
class Machine {
 public:
  explicit Machine(MachineConfig cfg = {});

  const MachineConfig& config() const { return cfg_; }
  MachineConfig& config() { return cfg_; }
  Memory& memory() { return mem_; }
  const Memory& memory() const { return mem_; }
  void set_kernel(KernelLayout k) { kernel_ = std::move(k); }
  const KernelLayout& kernel() const { return kernel_; }

  // Architectural state.
  uint64_t x(int r) const { return r == 31 ? 0 : gpr_[r]; }
  void set_x(int r, uint64_t v);
  uint64_t sp() const { return el_ == El::EL0 ? sp_el0_ : sp_el1_; }
  uint64_t sp_el0() const { return sp_el0_; }
  uint64_t sp_el1() const { return sp_el1_; }
  void set_sp(El el, uint64_t v);
  uint64_t pc() const { return pc_; }
  void set_pc(uint64_t pc) { pc_ = pc; }
  El el() const { return el_; }
  void set_el(El el) { el_ = el; }
  KeyBank& keys() { return keys_; }
  const KeyBank& keys() const { return keys_; }
  PacControl& pac_control() { return pac_ctl_; }
  const PacControl& pac_control() const { return pac_ctl_; }
  bool irq_masked() const { return irq_masked_; }
  void set_irq_masked(bool m) { irq_masked_ = m; }
  uint32_t fault_counter() const { return fault_counter_; }
  bool halted() const { return !outcome_.running(); }
  const Outcome& outcome() const { return outcome_; }
  const Counters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }
  uint64_t steps() const { return steps_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }

  /// Origin of the attacker write a register/memory word derives from, 0 if clean.
  uint64_t reg_taint(int r) const { return r == 31 ? 0 : reg_taint_[r]; }
  uint64_t mem_taint(uint64_t addr) const;

  // Threads.
  int add_thread(const ThreadSpec& spec);
  const std::vector<Thread>& threads() const { return threads_; }
  int current_thread() const { return current_; }

  /// Executes one instruction, taking a pending interrupt first if allowed.
  /// Returns false once the machine has stopped.
  bool step();
  /// Steps until stopped or `max_steps` executed.
  const Outcome& run(uint64_t max_steps = UINT64_MAX);

  /// Runs `entry` at EL1 as a subroutine until it returns to the caller.
  /// Returns false if the machine stopped instead.
  bool call(uint64_t entry, uint64_t step_budget = 1'000'000);

  /// Synchronous exception from EL0: saves pt_regs on the kernel stack, masks
  /// interrupts and enters the vector. `return_pc` is the EL0 resume address.
  void enter_kernel(uint64_t return_pc);
  /// ERET: optional reschedule, user key restore, pt_regs pop, EL0.
  void exit_kernel();
  /// Saves `from`'s kernel SP signed into its task struct, loads and
  /// authenticates `to`'s. A mismatch leaves SP_EL1 poisoned.
  void context_switch(int from, int to);
  /// Makes thread `t` current from its saved kernel state and returns to EL0.
  void resume_thread(int t);
  /// Writes the initial pt_regs frame of thread `t` and its signed saved SP.
  void prepare_thread(int t);

  /// Counts one kernel authentication failure; halts at the threshold.
  void record_auth_failure();
  void record_auth_success();

  /// Threat-model primitives: reads need R, writes need W. Both are traced.
  std::optional<uint64_t> attacker_read(uint64_t addr);
  bool attacker_write(uint64_t addr, uint64_t value);

  /// Marks an interrupt pending; it is taken at EL1 when unmasked.
  void raise_interrupt() { irq_pending_ = true; }
  bool irq_pending() const { return irq_pending_; }

  void halt(Outcome o);

  static constexpr uint64_t kCallSentinel = 0xffff00000ffff000;

 private:
  struct Stop {};  // unwinds the current instruction after a stop or restart

  template <class F>
  void guarded(F&& f);
  void enter_impl(uint64_t return_pc);
  void exit_impl();
  void switch_impl(int from, int to);
  void load_task_sp(int t);
  void pop_to_user();
  void emit(EventKind k, uint64_t addr = 0, uint64_t value = 0);
  [[noreturn]] void fault(FaultKind kind, uint64_t addr, uint64_t taint = 0);
  void check_data(uint64_t addr, bool write, uint64_t taint);
  uint64_t read64(uint64_t addr, uint64_t taint, uint64_t* out_taint);
  void write64(uint64_t addr, uint64_t v, uint64_t taint, uint64_t addr_taint);
  void branch(uint64_t target, uint64_t taint);
  bool fetchable(uint64_t addr) const;
  bool on_setter(uint64_t addr) const;
  uint64_t read_sp_or(int r) const;
  uint64_t taint_sp_or(int r) const;
  void write_sp_or(int r, uint64_t v, uint64_t t);
  void set_reg(int r, uint64_t v, uint64_t t);
  void execute(const Instruction& in, uint64_t pc);
  void take_interrupt();
  void thread_exit();
  void restart_current();
  void restore_user_keys(int t);
  uint64_t sign_sp(int t, uint64_t sp);
  void charge(uint64_t cycles) { counters_.cycles += cycles; }
  int next_runnable(int after) const;

  MachineConfig cfg_;
  KernelLayout kernel_;
  Memory mem_;

  std::array<uint64_t, 31> gpr_{};
  std::array<uint64_t, 31> reg_taint_{};
  uint64_t sp_el0_ = 0, sp_el1_ = 0;
  uint64_t sp_taint_el0_ = 0, sp_taint_el1_ = 0;
  uint64_t pc_ = 0;
  uint64_t cur_pc_ = 0;
  El el_ = El::EL1;
  KeyBank keys_{};
  PacControl pac_ctl_{};
  bool irq_masked_ = true;
  bool irq_pending_ = false;
  uint32_t fault_counter_ = 0;
  uint64_t steps_ = 0;
  Counters counters_{};
  Outcome outcome_{};
  std::vector<TraceEvent> trace_;
  std::unordered_map<uint64_t, uint64_t> taint_;
  std::vector<Thread> threads_;
  int current_ = -1;
  int call_depth_ = 0;
};

/// Execute-only page that installs `keys` (only those listed) into the key
/// registers: interrupts masked, 4 MOVZ/MOVK per half into x16/x17, MSR lo and
/// hi, scratch registers cleared, RET.
Section generate_key_setter(const KeyBank& keys, const std::vector<KeyClass>& which, uint64_t page_base);

}  // namespace kpac
