#include <sstream>

#include "kpac/error.hpp"
#include "kpac/harness.hpp"

namespace kpac {
namespace {

uint64_t body_cycles(const Counters& c) { return c.cycles - c.key_switch_cycles - c.switch_cycles; }

ScenarioResult clean_run(const IrModule& module, ModifierScheme scheme, const std::vector<ThreadSetup>& threads,
                         const RunOptions& base) {
  RunOptions opts = base;
  opts.scheme = scheme;
  ScenarioResult r = run_clean(build_image(module, scheme), threads, opts);
  if (r.outcome.kind != Outcome::Kind::CleanExit) {
    std::ostringstream msg;
    msg << "scheme " << to_string(scheme) << " did not exit cleanly: " << describe(r.outcome);
    const size_t tail = r.trace.size() > 8 ? r.trace.size() - 8 : 0;
    for (size_t i = tail; i < r.trace.size(); ++i) {
      const TraceEvent& e = r.trace[i];
      msg << "\n  step " << e.step << " pc 0x" << std::hex << e.pc << ' ' << to_string(e.kind) << " addr 0x"
          << e.addr << std::dec;
    }
    throw Error(msg.str());
  }
  return r;
}

}  // namespace

const OverheadRow* OverheadReport::row(ModifierScheme s) const {
  for (const auto& r : rows)
    if (r.scheme == s) return &r;
  return nullptr;
}

OverheadReport overhead_report(const IrModule& module, const std::vector<ModifierScheme>& schemes,
                               const std::vector<ThreadSetup>& threads, const RunOptions& base) {
  if (schemes.empty()) throw ParamError("no schemes to report");
  const ScenarioResult baseline = clean_run(module, ModifierScheme::None, threads, base);
  OverheadReport report;
  for (ModifierScheme s : schemes) {
    const ScenarioResult r = s == ModifierScheme::None ? baseline : clean_run(module, s, threads, base);
    OverheadRow row;
    row.scheme = s;
    row.counters = r.counters;
    row.calls = r.calls;
    row.returns = r.returns;
    if (r.calls)
      row.per_call_delta = (static_cast<double>(body_cycles(r.counters)) -
                            static_cast<double>(body_cycles(baseline.counters))) /
                           static_cast<double>(r.calls);
    if (r.counters.syscalls)
      row.key_switch_per_syscall =
          static_cast<double>(r.counters.key_switch_cycles) / static_cast<double>(r.counters.syscalls);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace kpac
