#include "kpac/error.hpp"
#include "kpac/harness.hpp"

namespace kpac {
namespace {

// Two leaf functions reached from two syscalls at the same stack depth.
constexpr const char* kReplayIr = R"(syscall 1 = sys_a
syscall 2 = sys_b

func f1
  compute 1
end

func f2
  compute 2
end

func sys_a
  call f1
end

func sys_b
  call f2
end
)";

AttackAction harvest(const char* at) {
  AttackAction a;
  a.op = AttackAction::Op::Read;
  a.at = at;
  a.hit = {1, 1};
  a.addr = "fp + 8";
  a.var = "lr";
  return a;
}

AttackAction replay(const char* at, uint64_t hit) {
  AttackAction a;
  a.op = AttackAction::Op::Write;
  a.at = at;
  a.hit = {hit, hit};
  a.addr = "fp + 8";
  a.value = "$lr";
  return a;
}

}  // namespace

std::string_view to_string(ReplayClass c) {
  switch (c) {
    case ReplayClass::SameFunctionSameSp: return "same-fn-same-sp";
    case ReplayClass::CrossFunctionSameSp: return "cross-fn-same-sp";
    case ReplayClass::CrossThread64K: return "cross-thread-64k";
    case ReplayClass::CrossThread4K: return "cross-thread-4k";
  }
  return "?";
}

Scenario replay_scenario(ReplayClass c) {
  Scenario s;
  s.name = std::string("replay-") + std::string(to_string(c));
  s.ir = kReplayIr;
  switch (c) {
    case ReplayClass::SameFunctionSameSp:
      s.threads = {ThreadSetup{0, {1, 1}}};
      s.actions = {harvest("f1.epilogue"), replay("f1.epilogue", 2)};
      break;
    case ReplayClass::CrossFunctionSameSp:
      s.threads = {ThreadSetup{0, {1, 2}}};
      s.actions = {harvest("f1.epilogue"), replay("f2.epilogue", 1)};
      break;
    case ReplayClass::CrossThread64K:
      s.threads = {ThreadSetup{kKernelStackBase, {1}}, ThreadSetup{kKernelStackBase + 0x10000, {1}}};
      s.actions = {harvest("f1.epilogue"), replay("f1.epilogue", 2)};
      break;
    case ReplayClass::CrossThread4K:
      // 0x5000 apart: 4 KiB-congruent, and far enough for two 16 KiB stacks.
      s.threads = {ThreadSetup{kKernelStackBase, {1}}, ThreadSetup{kKernelStackBase + 0x5000, {1}}};
      s.actions = {harvest("f1.epilogue"), replay("f1.epilogue", 2)};
      break;
  }
  return s;
}

std::vector<ReplayCell> replay_matrix(const std::vector<ModifierScheme>& schemes, uint64_t seed) {
  std::vector<ReplayCell> out;
  for (ReplayClass c : kReplayClasses) {
    const Scenario s = replay_scenario(c);
    for (ModifierScheme scheme : schemes) {
      RunOptions opts;
      opts.scheme = scheme;
      opts.seed = seed;
      const ScenarioResult r = run_scenario(s, opts);
      if (r.actions.size() != 2 || !r.actions[0].accepted || !r.actions[1].accepted)
        throw Error("replay " + s.name + " under " + std::string(to_string(scheme)) +
                    ": attacker actions did not all fire");
      out.push_back({scheme, c, r.outcome, r.outcome.kind == Outcome::Kind::Hijacked});
    }
  }
  return out;
}

}  // namespace kpac
