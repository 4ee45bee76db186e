#include "kpac/machine.hpp"

#include <cstdio>

#include "kpac/error.hpp"

namespace kpac {
namespace {

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

// pt_regs slots
constexpr uint64_t kRegsSpEl0 = 31 * 8;
constexpr uint64_t kRegsElr = 32 * 8;
constexpr uint64_t kRegsSpsr = 33 * 8;

}  // namespace

std::string_view to_string(FaultKind k) {
  switch (k) {
    case FaultKind::Translation: return "translation";
    case FaultKind::Permission: return "permission";
    case FaultKind::Alignment: return "alignment";
    case FaultKind::Undefined: return "undefined";
    case FaultKind::Breakpoint: return "breakpoint";
    case FaultKind::StepLimit: return "step-limit";
  }
  return "?";
}

std::string_view to_string(Outcome::Kind k) {
  switch (k) {
    case Outcome::Kind::Running: return "Running";
    case Outcome::Kind::CleanExit: return "CleanExit";
    case Outcome::Kind::AuthFault: return "AuthFault";
    case Outcome::Kind::Halted: return "Halted";
    case Outcome::Kind::Hijacked: return "Hijacked";
    case Outcome::Kind::Rejected: return "Rejected";
    case Outcome::Kind::Fault: return "Fault";
  }
  return "?";
}

std::string describe(const Outcome& o) {
  std::string s(to_string(o.kind));
  switch (o.kind) {
    case Outcome::Kind::AuthFault:
      s += "(pc=" + hex(o.pc) + ", key=" + std::string(to_string(o.key)) + ", addr=" + hex(o.addr);
      if (o.origin) s += ", origin=" + hex(o.origin);
      return s + ")";
    case Outcome::Kind::Hijacked:
      return s + "(target=" + hex(o.addr) + ", pc=" + hex(o.pc) + ", origin=" + hex(o.origin) + ")";
    case Outcome::Kind::Fault:
      return s + "(" + std::string(to_string(o.fault)) + ", pc=" + hex(o.pc) + ", addr=" + hex(o.addr) + ")";
    case Outcome::Kind::Halted:
    case Outcome::Kind::Rejected: return s + "(" + o.report + ")";
    default: return s;
  }
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Instruction: return "instruction";
    case EventKind::KernelEntry: return "kernel-entry";
    case EventKind::KernelExit: return "kernel-exit";
    case EventKind::KeyInstall: return "key-install";
    case EventKind::KeyRestore: return "key-restore";
    case EventKind::ContextSwitch: return "context-switch";
    case EventKind::AuthSuccess: return "auth-success";
    case EventKind::AuthFailure: return "auth-failure";
    case EventKind::Fault: return "fault";
    case EventKind::Interrupt: return "interrupt";
    case EventKind::ThreadStart: return "thread-start";
    case EventKind::ThreadExit: return "thread-exit";
    case EventKind::AttackerRead: return "attacker-read";
    case EventKind::AttackerWrite: return "attacker-write";
    case EventKind::AttackerRejected: return "attacker-rejected";
    case EventKind::Halt: return "halt";
  }
  return "?";
}

Machine::Machine(MachineConfig cfg) : cfg_(cfg) {
  cfg_.layout.validate();
  if (cfg_.fault_threshold == 0) throw ParamError("fault threshold must be positive");
}

void Machine::set_x(int r, uint64_t v) {
  if (r < 0 || r > 31) throw ParamError("register out of range");
  set_reg(r, v, 0);
}

void Machine::set_sp(El el, uint64_t v) {
  if (el == El::EL0) {
    sp_el0_ = v;
    sp_taint_el0_ = 0;
  } else {
    sp_el1_ = v;
    sp_taint_el1_ = 0;
  }
}

uint64_t Machine::mem_taint(uint64_t addr) const {
  auto it = taint_.find(addr);
  return it == taint_.end() ? 0 : it->second;
}

int Machine::add_thread(const ThreadSpec& spec) {
  if (spec.kstack_base % kPageSize) throw ParamError("kernel stack base must be 4 KiB aligned");
  Thread t;
  t.spec = spec;
  threads_.push_back(std::move(t));
  return static_cast<int>(threads_.size()) - 1;
}

template <class F>
void Machine::guarded(F&& f) {
  try {
    f();
  } catch (const Stop&) {
  }
}

void Machine::emit(EventKind k, uint64_t addr, uint64_t value) {
  trace_.push_back({steps_, cur_pc_, k, counters_.cycles, addr, value, current_});
}

void Machine::halt(Outcome o) {
  if (halted()) return;
  outcome_ = std::move(o);
  emit(EventKind::Halt, outcome_.addr, static_cast<uint64_t>(outcome_.kind));
}

void Machine::fault(FaultKind kind, uint64_t addr, uint64_t taint) {
  const auto key = poisoned_key(addr, cfg_.layout);
  if (key && el_ == El::EL1) {
    ++counters_.auth_failures;
    emit(EventKind::AuthFailure, addr, taint);
    record_auth_failure();
    if (halted()) throw Stop{};
    if (cfg_.restart_on_auth_fault && current_ >= 0) {
      restart_current();
      throw Stop{};
    }
    Outcome o;
    o.kind = Outcome::Kind::AuthFault;
    o.pc = cur_pc_;
    o.addr = addr;
    o.origin = taint;
    o.key = *key;
    halt(std::move(o));
    throw Stop{};
  }
  emit(EventKind::Fault, addr, static_cast<uint64_t>(kind));
  Outcome o;
  o.kind = Outcome::Kind::Fault;
  o.pc = cur_pc_;
  o.addr = addr;
  o.origin = taint;
  o.fault = kind;
  halt(std::move(o));
  throw Stop{};
}

void Machine::record_auth_failure() {
  ++fault_counter_;
  if (fault_counter_ >= cfg_.fault_threshold) {
    Outcome o;
    o.kind = Outcome::Kind::Halted;
    o.pc = cur_pc_;
    o.report = "BruteForceSuspected";
    halt(std::move(o));
  }
}

void Machine::record_auth_success() {
  fault_counter_ = 0;
  ++counters_.auth_successes;
}

bool Machine::on_setter(uint64_t addr) const {
  return kernel_.setter_size && addr >= kernel_.setter_base && addr < kernel_.setter_base + kernel_.setter_size;
}

bool Machine::fetchable(uint64_t addr) const {
  const auto p = mem_.perms(addr);
  if (!p || !(*p & kPermX) || addr % 4) return false;
  return el_ == El::EL0 ? (*p & kPermU) != 0 : (*p & kPermU) == 0;
}

void Machine::check_data(uint64_t addr, bool write, uint64_t taint) {
  const auto p = mem_.perms(addr);
  if (!p) fault(FaultKind::Translation, addr, taint);
  if (addr % 8) fault(FaultKind::Alignment, addr, taint);
  if (el_ == El::EL0 && !(*p & kPermU)) fault(FaultKind::Permission, addr, taint);
  if (!(*p & (write ? kPermW : kPermR))) fault(FaultKind::Permission, addr, taint);
}

uint64_t Machine::read64(uint64_t addr, uint64_t taint, uint64_t* out_taint) {
  check_data(addr, false, taint);
  if (out_taint) *out_taint = mem_taint(addr);
  return mem_.load64(addr);
}

void Machine::write64(uint64_t addr, uint64_t v, uint64_t taint, uint64_t addr_taint) {
  check_data(addr, true, addr_taint);
  mem_.store64(addr, v);
  if (taint)
    taint_[addr] = taint;
  else
    taint_.erase(addr);
}

void Machine::set_reg(int r, uint64_t v, uint64_t t) {
  if (r == 31) return;
  gpr_[r] = v;
  reg_taint_[r] = t;
}

uint64_t Machine::read_sp_or(int r) const { return r == 31 ? sp() : gpr_[r]; }

uint64_t Machine::taint_sp_or(int r) const {
  if (r != 31) return reg_taint_[r];
  return el_ == El::EL0 ? sp_taint_el0_ : sp_taint_el1_;
}

void Machine::write_sp_or(int r, uint64_t v, uint64_t t) {
  if (r != 31) {
    gpr_[r] = v;
    reg_taint_[r] = t;
  } else if (el_ == El::EL0) {
    sp_el0_ = v;
    sp_taint_el0_ = t;
  } else {
    sp_el1_ = v;
    sp_taint_el1_ = t;
  }
}

void Machine::branch(uint64_t target, uint64_t taint) {
  if (target == kCallSentinel && call_depth_ > 0) {
    pc_ = target;
    return;
  }
  if (!fetchable(target)) fault(mem_.mapped(target) ? FaultKind::Permission : FaultKind::Translation, target, taint);
  if (taint) {
    Outcome o;
    o.kind = Outcome::Kind::Hijacked;
    o.pc = cur_pc_;
    o.addr = target;
    o.origin = taint;
    halt(std::move(o));
    throw Stop{};
  }
  pc_ = target;
}

bool Machine::step() {
  if (halted()) return false;
  try {
    if (irq_pending_ && el_ == El::EL1 && !irq_masked_) take_interrupt();
    cur_pc_ = pc_;
    if (steps_ >= cfg_.step_limit) fault(FaultKind::StepLimit, pc_);
    if (!fetchable(pc_)) fault(mem_.mapped(pc_) ? FaultKind::Permission : FaultKind::Translation, pc_);
    const auto inst = decode(mem_.load32(pc_));
    if (!inst) fault(FaultKind::Undefined, pc_);
    ++steps_;
    ++counters_.instructions;

    const bool pauth = is_pauth(*inst);
    if (pauth && !cfg_.pauth_implemented && !is_pauth_hint(*inst)) fault(FaultKind::Undefined, pc_);
    uint64_t cost = cfg_.costs.base;
    if (on_setter(pc_)) {
      // Key material moves are free; each completed 128-bit key is charged once.
      const bool hi = inst->op == Opcode::Msr && is_key_register(inst->sysreg) && is_key_hi(inst->sysreg);
      cost = hi ? cfg_.costs.key_install : 0;
      counters_.key_switch_cycles += cost;
    } else if (pauth && cfg_.pauth_implemented) {
      cost = cfg_.costs.pauth;
      ++counters_.pauth_instructions;
    }
    charge(cost);
    pc_ += 4;
    execute(*inst, cur_pc_);
    if (cfg_.trace_instructions) emit(EventKind::Instruction, cur_pc_, encode(*inst));
  } catch (const Stop&) {
  }
  return !halted();
}

const Outcome& Machine::run(uint64_t max_steps) {
  for (uint64_t i = 0; i < max_steps && step(); ++i) {
  }
  return outcome_;
}

bool Machine::call(uint64_t entry, uint64_t step_budget) {
  const El saved_el = el_;
  el_ = El::EL1;
  gpr_[kLr] = kCallSentinel;
  reg_taint_[kLr] = 0;
  pc_ = entry;
  ++call_depth_;
  for (uint64_t i = 0; i < step_budget && pc_ != kCallSentinel && step(); ++i) {
  }
  --call_depth_;
  const bool ok = !halted() && pc_ == kCallSentinel;
  if (ok) el_ = saved_el;
  return ok;
}

void Machine::execute(const Instruction& in, uint64_t pc) {
  const PointerLayout& L = cfg_.layout;
  switch (in.op) {
    case Opcode::Nop: return;
    case Opcode::Movz: set_reg(in.rd, static_cast<uint64_t>(in.imm) << in.shift, 0); return;
    case Opcode::Movk: {
      const uint64_t mask = uint64_t{0xFFFF} << in.shift;
      set_reg(in.rd, (x(in.rd) & ~mask) | (static_cast<uint64_t>(in.imm) << in.shift), reg_taint(in.rd));
      return;
    }
    case Opcode::MovReg: set_reg(in.rd, x(in.rm), reg_taint(in.rm)); return;
    case Opcode::AddImm:
    case Opcode::SubImm: {
      const uint64_t imm = static_cast<uint64_t>(in.imm) << in.shift;
      const uint64_t src = read_sp_or(in.rn);
      write_sp_or(in.rd, in.op == Opcode::AddImm ? src + imm : src - imm, taint_sp_or(in.rn));
      return;
    }
    case Opcode::Adr: set_reg(in.rd, pc + static_cast<uint64_t>(in.imm), 0); return;
    case Opcode::Bfi: {
      const uint64_t mask = in.width == 64 ? ~uint64_t{0} : (uint64_t{1} << in.width) - 1;
      const uint64_t v = (x(in.rd) & ~(mask << in.shift)) | ((x(in.rn) & mask) << in.shift);
      set_reg(in.rd, v, reg_taint(in.rn) ? reg_taint(in.rn) : reg_taint(in.rd));
      return;
    }
    case Opcode::Ldr:
    case Opcode::Str: {
      const uint64_t base = read_sp_or(in.rn);
      uint64_t btaint = taint_sp_or(in.rn);
      uint64_t addr = base;
      switch (in.mode) {
        case AddrMode::Offset:
        case AddrMode::PreIndex: addr = base + static_cast<uint64_t>(in.imm); break;
        case AddrMode::PostIndex: break;
        case AddrMode::RegScaled:
          addr = base + x(in.rm) * 8;
          if (!btaint) btaint = reg_taint(in.rm);
          break;
      }
      if (in.op == Opcode::Ldr) {
        uint64_t t = 0;
        const uint64_t v = read64(addr, btaint, &t);
        set_reg(in.rd, v, t);
      } else {
        write64(addr, x(in.rd), reg_taint(in.rd), btaint);
      }
      if (in.mode == AddrMode::PreIndex || in.mode == AddrMode::PostIndex)
        write_sp_or(in.rn, base + static_cast<uint64_t>(in.imm), taint_sp_or(in.rn));
      return;
    }
    case Opcode::Ldp:
    case Opcode::Stp: {
      const uint64_t base = read_sp_or(in.rn);
      const uint64_t btaint = taint_sp_or(in.rn);
      const uint64_t addr = in.mode == AddrMode::PostIndex ? base : base + static_cast<uint64_t>(in.imm);
      if (in.op == Opcode::Ldp) {
        uint64_t t1 = 0, t2 = 0;
        const uint64_t v1 = read64(addr, btaint, &t1);
        const uint64_t v2 = read64(addr + 8, btaint, &t2);
        set_reg(in.rd, v1, t1);
        set_reg(in.rm, v2, t2);
      } else {
        const uint64_t v1 = x(in.rd), v2 = x(in.rm);
        const uint64_t t1 = reg_taint(in.rd), t2 = reg_taint(in.rm);
        write64(addr, v1, t1, btaint);
        write64(addr + 8, v2, t2, btaint);
      }
      if (in.mode != AddrMode::Offset) write_sp_or(in.rn, base + static_cast<uint64_t>(in.imm), btaint);
      return;
    }
    case Opcode::Pac:
      set_reg(in.rd, exec_pac_hw(keys_, pac_ctl_, in.key, x(in.rd), read_sp_or(in.rn), L), reg_taint(in.rd));
      return;
    case Opcode::Aut: {
      const auto r = authenticate(keys_, pac_ctl_, in.key, x(in.rd), read_sp_or(in.rn), L);
      if (r.checked && r.ok && el_ == El::EL1) record_auth_success();
      set_reg(in.rd, r.value, reg_taint(in.rd));
      return;
    }
    case Opcode::Xpaci:
    case Opcode::Xpacd: set_reg(in.rd, exec_xpac(x(in.rd), L), reg_taint(in.rd)); return;
    case Opcode::Pacga: set_reg(in.rd, pac_generic(keys_[KeyClass::GA], x(in.rn), read_sp_or(in.rm)), 0); return;
    case Opcode::Pacib1716: {
      const auto r = exec_pacib1716(keys_, pac_ctl_, {x(16), x(17)}, L, cfg_.pauth_implemented);
      set_reg(17, r.x17, reg_taint(17));
      return;
    }
    case Opcode::Autib1716: {
      bool ok = true;
      const auto r = exec_autib1716(keys_, pac_ctl_, {x(16), x(17)}, L, cfg_.pauth_implemented, &ok);
      if (cfg_.pauth_implemented && pac_ctl_.enabled(KeyClass::IB) && ok && el_ == El::EL1) record_auth_success();
      set_reg(17, r.x17, reg_taint(17));
      return;
    }
    case Opcode::Pacia1716:
      if (cfg_.pauth_implemented) set_reg(17, exec_pac_hw(keys_, pac_ctl_, KeyClass::IA, x(17), x(16), L), reg_taint(17));
      return;
    case Opcode::Autia1716:
      if (cfg_.pauth_implemented) {
        const auto r = authenticate(keys_, pac_ctl_, KeyClass::IA, x(17), x(16), L);
        if (r.checked && r.ok && el_ == El::EL1) record_auth_success();
        set_reg(17, r.value, reg_taint(17));
      }
      return;
    case Opcode::B: pc_ = pc + static_cast<uint64_t>(in.imm); return;
    case Opcode::Bl:
      set_reg(kLr, pc + 4, 0);
      pc_ = pc + static_cast<uint64_t>(in.imm);
      return;
    case Opcode::Br: branch(x(in.rn), reg_taint(in.rn)); return;
    case Opcode::Blr: {
      const uint64_t t = x(in.rn), tt = reg_taint(in.rn);
      set_reg(kLr, pc + 4, 0);
      branch(t, tt);
      return;
    }
    case Opcode::Blraa:
    case Opcode::Blrab: {
      const KeyClass k = in.op == Opcode::Blraa ? KeyClass::IA : KeyClass::IB;
      const auto r = authenticate(keys_, pac_ctl_, k, x(in.rn), read_sp_or(in.rm), L);
      if (r.checked && r.ok && el_ == El::EL1) record_auth_success();
      const uint64_t tt = reg_taint(in.rn);
      set_reg(kLr, pc + 4, 0);
      branch(r.value, tt);
      return;
    }
    case Opcode::Ret: branch(x(in.rn), reg_taint(in.rn)); return;
    case Opcode::Cbz:
      if (x(in.rd) == 0) pc_ = pc + static_cast<uint64_t>(in.imm);
      return;
    case Opcode::Cbnz:
      if (x(in.rd) != 0) pc_ = pc + static_cast<uint64_t>(in.imm);
      return;
    case Opcode::Svc:
      if (el_ != El::EL0) fault(FaultKind::Undefined, pc);
      enter_impl(pc + 4);
      return;
    case Opcode::Eret:
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      exit_impl();
      return;
    case Opcode::Msr: {
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      const uint64_t v = x(in.rd);
      if (in.sysreg == SysReg::Sctlr) {
        if (cfg_.pauth_implemented) pac_ctl_ = PacControl::from_sctlr(v);
        return;
      }
      if (!cfg_.pauth_implemented) fault(FaultKind::Undefined, pc);
      PacKey& key = keys_[key_of(in.sysreg)];
      (is_key_hi(in.sysreg) ? key.hi : key.lo) = v;
      if (is_key_hi(in.sysreg) && on_setter(pc)) emit(EventKind::KeyInstall, static_cast<uint64_t>(key_of(in.sysreg)));
      return;
    }
    case Opcode::Mrs: {
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      if (in.sysreg == SysReg::Sctlr) {
        set_reg(in.rd, pac_ctl_.to_sctlr(), 0);
        return;
      }
      if (!cfg_.pauth_implemented) fault(FaultKind::Undefined, pc);
      const PacKey& key = keys_[key_of(in.sysreg)];
      set_reg(in.rd, is_key_hi(in.sysreg) ? key.hi : key.lo, 0);
      return;
    }
    case Opcode::DaifSet:
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      if (in.imm & 2) irq_masked_ = true;
      return;
    case Opcode::DaifClr:
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      if (in.imm & 2) irq_masked_ = false;
      return;
    case Opcode::Brk: fault(FaultKind::Breakpoint, pc);
    case Opcode::Hlt:
      if (el_ != El::EL1) fault(FaultKind::Undefined, pc);
      thread_exit();
      return;
  }
}

void Machine::take_interrupt() {
  irq_pending_ = false;
  // The handler's register save area sits below the interrupted stack pointer.
  const uint64_t frame = sp_el1_ - 256;
  for (int r = 0; r < 31; ++r) write64(frame + 8 * r, gpr_[r], reg_taint_[r], sp_taint_el1_);
  emit(EventKind::Interrupt, frame);
}

void Machine::enter_kernel(uint64_t return_pc) {
  if (el_ != El::EL0) throw StateError("enter_kernel requires EL0");
  guarded([&] { enter_impl(return_pc); });
}

void Machine::enter_impl(uint64_t return_pc) {
  if (current_ < 0) throw StateError("no current thread");
  Thread& t = threads_[current_];
  ++t.syscalls;
  ++counters_.syscalls;
  el_ = El::EL1;
  irq_masked_ = true;
  const uint64_t frame = sp_el1_ - kPtRegsSize;
  for (int r = 0; r < 31; ++r) write64(frame + 8 * r, gpr_[r], reg_taint_[r], sp_taint_el1_);
  write64(frame + kRegsSpEl0, sp_el0_, sp_taint_el0_, sp_taint_el1_);
  write64(frame + kRegsElr, return_pc, 0, sp_taint_el1_);
  write64(frame + kRegsSpsr, 0, 0, sp_taint_el1_);
  sp_el1_ = frame;
  emit(EventKind::KernelEntry, return_pc);
  pc_ = kernel_.vector;
}

void Machine::exit_kernel() {
  if (el_ != El::EL1) throw StateError("exit_kernel requires EL1");
  guarded([&] { exit_impl(); });
}

void Machine::exit_impl() {
  if (current_ < 0) throw StateError("no current thread");
  if (cfg_.round_robin) {
    const int next = next_runnable(current_);
    if (next >= 0 && next != current_) switch_impl(current_, next);
  }
  pop_to_user();
}

int Machine::next_runnable(int after) const {
  const int n = static_cast<int>(threads_.size());
  for (int i = 1; i <= n; ++i) {
    const int t = ((after < 0 ? -1 : after) + i + n) % n;
    if (threads_[t].state == Thread::State::Runnable) return t;
  }
  return -1;
}

void Machine::restore_user_keys(int t) {
  if (!cfg_.pauth_implemented) return;
  for (KeyClass k : kernel_.kernel_keys) {
    keys_[k] = threads_[t].spec.user_keys[k];
    charge(cfg_.costs.key_install);
    counters_.key_switch_cycles += cfg_.costs.key_install;
    emit(EventKind::KeyRestore, static_cast<uint64_t>(k));
  }
}

void Machine::pop_to_user() {
  restore_user_keys(current_);
  const uint64_t frame = sp_el1_;
  const uint64_t ft = sp_taint_el1_;
  std::array<uint64_t, 31> regs{}, taints{};
  for (int r = 0; r < 31; ++r) regs[r] = read64(frame + 8 * r, ft, &taints[r]);
  uint64_t sp0_t = 0, elr_t = 0;
  const uint64_t sp0 = read64(frame + kRegsSpEl0, ft, &sp0_t);
  const uint64_t elr = read64(frame + kRegsElr, ft, &elr_t);
  gpr_ = regs;
  reg_taint_ = taints;
  sp_el0_ = sp0;
  sp_taint_el0_ = sp0_t;
  sp_el1_ = frame + kPtRegsSize;
  el_ = El::EL0;
  irq_masked_ = false;
  threads_[current_].returns.push_back(gpr_[0]);
  emit(EventKind::KernelExit, elr, gpr_[0]);
  branch(elr, elr_t);
}

uint64_t Machine::sign_sp(int t, uint64_t sp) {
  if (!kernel_.sign_task_sp || !cfg_.pauth_implemented) return sp;
  charge(cfg_.costs.pauth);
  counters_.switch_cycles += cfg_.costs.pauth;
  return exec_pac_hw(keys_, pac_ctl_, kernel_.task_sp_key, sp,
                     ptr_modifier(threads_[t].spec.task_struct, kernel_.task_sp_const), cfg_.layout);
}

void Machine::load_task_sp(int t) {
  const uint64_t slot = threads_[t].spec.task_struct + kTaskSavedSp;
  uint64_t taint = 0;
  const uint64_t stored = read64(slot, 0, &taint);
  uint64_t sp = stored;
  if (kernel_.sign_task_sp && cfg_.pauth_implemented) {
    charge(cfg_.costs.pauth);
    counters_.switch_cycles += cfg_.costs.pauth;
    const auto r = authenticate(keys_, pac_ctl_, kernel_.task_sp_key, stored,
                                ptr_modifier(threads_[t].spec.task_struct, kernel_.task_sp_const), cfg_.layout);
    if (r.checked && r.ok) record_auth_success();
    sp = r.value;
  }
  sp_el1_ = sp;
  sp_taint_el1_ = taint;
  current_ = t;
  threads_[t].state = Thread::State::Running;
}

void Machine::context_switch(int from, int to) {
  if (el_ != El::EL1) throw StateError("context_switch requires EL1");
  const int n = static_cast<int>(threads_.size());
  if (from < 0 || from >= n || to < 0 || to >= n) throw ParamError("unknown thread");
  guarded([&] { switch_impl(from, to); });
}

void Machine::switch_impl(int from, int to) {
  const uint64_t signed_sp = sign_sp(from, sp_el1_);
  write64(threads_[from].spec.task_struct + kTaskSavedSp, signed_sp, sp_taint_el1_, 0);
  if (threads_[from].state == Thread::State::Running) threads_[from].state = Thread::State::Runnable;
  emit(EventKind::ContextSwitch, static_cast<uint64_t>(from), static_cast<uint64_t>(to));
  load_task_sp(to);
}

void Machine::prepare_thread(int t) {
  if (t < 0 || t >= static_cast<int>(threads_.size())) throw ParamError("unknown thread");
  Thread& th = threads_[t];
  const uint64_t frame = th.kstack_top() - kPtRegsSize;
  for (uint64_t off = 0; off < kPtRegsSize; off += 8) {
    mem_.store64(frame + off, 0);
    taint_.erase(frame + off);
  }
  mem_.store64(frame + kRegsSpEl0, th.spec.user_sp);
  mem_.store64(frame + kRegsElr, th.spec.user_entry);
  const uint64_t slot = th.spec.task_struct + kTaskSavedSp;
  mem_.store64(slot, sign_sp(t, frame));
  taint_.erase(slot);
  th.state = Thread::State::Runnable;
}

void Machine::resume_thread(int t) {
  if (t < 0 || t >= static_cast<int>(threads_.size())) throw ParamError("unknown thread");
  el_ = El::EL1;
  guarded([&] {
    load_task_sp(t);
    emit(EventKind::ThreadStart, static_cast<uint64_t>(t));
    pop_to_user();
  });
}

void Machine::thread_exit() {
  threads_[current_].state = Thread::State::Exited;
  emit(EventKind::ThreadExit, static_cast<uint64_t>(current_));
  const int next = next_runnable(cfg_.round_robin ? current_ : -1);
  if (next < 0) {
    Outcome o;
    o.kind = Outcome::Kind::CleanExit;
    o.pc = cur_pc_;
    halt(std::move(o));
    throw Stop{};
  }
  load_task_sp(next);
  emit(EventKind::ThreadStart, static_cast<uint64_t>(next));
  pop_to_user();
}

void Machine::restart_current() {
  ++counters_.restarts;
  Thread& th = threads_[current_];
  // The killed task's saved state is discarded; it restarts from a fresh frame.
  const uint64_t frame = th.kstack_top() - kPtRegsSize;
  for (uint64_t off = 0; off < kPtRegsSize; off += 8) {
    mem_.store64(frame + off, 0);
    taint_.erase(frame + off);
  }
  mem_.store64(frame + kRegsSpEl0, th.spec.user_sp);
  mem_.store64(frame + kRegsElr, th.spec.user_entry);
  el_ = El::EL1;
  sp_el1_ = frame;
  sp_taint_el1_ = 0;
  emit(EventKind::ThreadStart, static_cast<uint64_t>(current_));
  pop_to_user();
}

std::optional<uint64_t> Machine::attacker_read(uint64_t addr) {
  const auto p = mem_.perms(addr);
  if (!p || !(*p & kPermR) || addr % 8) {
    emit(EventKind::AttackerRejected, addr, 0);
    return std::nullopt;
  }
  const uint64_t v = mem_.load64(addr);
  emit(EventKind::AttackerRead, addr, v);
  return v;
}

bool Machine::attacker_write(uint64_t addr, uint64_t value) {
  const auto p = mem_.perms(addr);
  if (!p || !(*p & kPermW) || addr % 8) {
    emit(EventKind::AttackerRejected, addr, value);
    return false;
  }
  mem_.store64(addr, value);
  taint_[addr] = addr;
  emit(EventKind::AttackerWrite, addr, value);
  return true;
}

Section generate_key_setter(const KeyBank& keys, const std::vector<KeyClass>& which, uint64_t page_base) {
  if (page_base % kPageSize) throw ParamError("key setter base must be page aligned");
  std::vector<Instruction> code;
  code.push_back(ins::daifset(2));
  for (KeyClass k : which) {
    const PacKey& key = keys[k];
    for (int half = 0; half < 2; ++half) {
      const uint64_t v = half == 0 ? key.lo : key.hi;
      const uint8_t r = half == 0 ? kIp0 : kIp1;
      code.push_back(ins::movz(r, static_cast<uint16_t>(v), 0));
      for (int s = 16; s < 64; s += 16) code.push_back(ins::movk(r, static_cast<uint16_t>(v >> s), s));
    }
    code.push_back(ins::msr(key_lo_register(k), kIp0));
    code.push_back(ins::msr(key_hi_register(k), kIp1));
  }
  code.push_back(ins::movz(kIp0, 0));
  code.push_back(ins::movz(kIp1, 0));
  code.push_back(ins::ret());
  if (code.size() * 4 > kPageSize) throw ParamError("key setter exceeds one page");
  Section s;
  s.name = ".xom";
  s.base = page_base;
  s.perms = kPermX;
  for (const auto& i : code) {
    const uint32_t w = encode(i);
    for (int b = 0; b < 4; ++b) s.bytes.push_back(static_cast<uint8_t>(w >> (8 * b)));
  }
  return s;
}

}  // namespace kpac
