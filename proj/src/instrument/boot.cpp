#include <sstream>

#include "kpac/error.hpp"
#include "kpac/rng.hpp"
#include "kpac/system.hpp"

namespace kpac {
namespace {

std::string hex(uint64_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << v;
  return s.str();
}

// Stacks, task structs and user programs for every thread.
Program thread_sections(const BootOptions& opts) {
  std::ostringstream out;
  const int n = static_cast<int>(opts.threads.size());
  out << ".section .task " << hex(kTaskStructBase) << " rw\n  .zero " << n * kTaskStructSize << '\n';
  for (int i = 0; i < n; ++i) {
    const ThreadSetup& t = opts.threads[i];
    const uint64_t kstack = t.kstack_base ? t.kstack_base : default_kstack(i);
    if (kstack % kPageSize) throw BootError("kernel stack base " + hex(kstack) + " is not 4 KiB aligned");
    out << ".section .kstack" << i << ' ' << hex(kstack) << " rw\n  .zero " << kKernelStackSize << '\n';
    out << ".section .user" << i << ' ' << hex(user_text_addr(i)) << " rxu\n";
    for (int s : t.syscalls) {
      if (s < 0 || s > 0xFFFF) throw BootError("syscall number out of range");
      out << "  movz x8, #" << s << "\n  svc #0\n";
    }
    out << "  movz x8, #0\n  svc #0\n";
    out << ".section .ustack" << i << ' ' << hex(user_stack_addr(i)) << " rwu\n  .zero " << kPageSize << '\n';
  }
  try {
    return assemble(out.str());
  } catch (const ParseError& e) {
    throw BootError(std::string("thread setup: ") + e.what());
  }
}

}  // namespace

KeyBank derive_keys(uint64_t seed, uint64_t stream) {
  SplitMix64 rng(seed, stream);
  KeyBank b;
  for (auto& k : b.keys) {
    k.hi = rng();
    k.lo = rng();
  }
  return b;
}

System boot_kernel(const Program& image, const BootOptions& opts) {
  if (opts.threads.empty()) throw BootError("at least one thread is required");
  System sys{Machine(opts.machine), image, derive_keys(opts.seed, 0), {}};
  Machine& m = sys.machine;
  const auto keys = kernel_keys(opts.scheme);

  Program setter;
  setter.sections.push_back(generate_key_setter(sys.kernel_keys, keys, opts.layout.setter));
  setter.symbols.emplace("key_setter", opts.layout.setter);
  try {
    sys.image.merge(setter);
    sys.image.merge(thread_sections(opts));
  } catch (const LinkError& e) {
    throw BootError(std::string("layout: ") + e.what());
  }

  sys.verify = verify_image(sys.image, opts.layout.setter, kPageSize);
  if (!sys.verify.accepted()) {
    Outcome o;
    o.kind = Outcome::Kind::Rejected;
    for (const auto& f : sys.verify.findings) {
      if (!o.report.empty()) o.report += "; ";
      o.report += hex(f.addr) + ": " + f.reason;
    }
    m.halt(std::move(o));
    return sys;
  }

  const auto vector = image.resolve("vector");
  if (!vector) throw BootError("image has no exception vector");
  if (!opts.machine.pauth_implemented && !keys.empty()) {
    // No key registers to program: the call into the setter becomes a NOP.
    sys.image.write32(*vector, encode(ins::nop()));
  }
  m.memory().load(sys.image);

  KernelLayout k;
  k.vector = *vector;
  k.setter_base = opts.layout.setter;
  k.setter_size = kPageSize;
  k.kernel_keys = keys;
  k.sign_task_sp = protects_fields(opts.scheme);
  m.set_kernel(k);

  if (opts.machine.pauth_implemented) {
    if (!m.call(opts.layout.setter)) throw BootError("key setter failed: " + describe(m.outcome()));
  }
  boot_sign(m, sys.image.signing_table);

  for (size_t i = 0; i < opts.threads.size(); ++i) {
    const int ti = static_cast<int>(i);
    ThreadSpec spec;
    spec.user_keys = derive_keys(opts.seed, i + 1);
    spec.kstack_base = opts.threads[i].kstack_base ? opts.threads[i].kstack_base : default_kstack(ti);
    spec.task_struct = task_struct_addr(ti);
    spec.user_entry = user_text_addr(ti);
    spec.user_sp = user_stack_addr(ti) + kPageSize;
    m.prepare_thread(m.add_thread(spec));
  }
  m.reset_counters();
  m.clear_trace();
  m.resume_thread(0);
  return sys;
}

VerifyReport load_module(System& sys, const Program& module) {
  VerifyReport r = verify_image(module, sys.machine.kernel().setter_base, sys.machine.kernel().setter_size);
  if (!r.accepted()) return r;
  try {
    sys.image.merge(module);
  } catch (const LinkError& e) {
    throw BootError(std::string("module layout: ") + e.what());
  }
  sys.machine.memory().load(module);
  boot_sign(sys.machine, module.signing_table, sys.kernel_keys);
  return r;
}

}  // namespace kpac
