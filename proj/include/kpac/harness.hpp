#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpac/ir.hpp"
#include "kpac/system.hpp"

namespace kpac {

std::optional<Outcome::Kind> parse_outcome_kind(std::string_view s);

/// Which executions of a trigger fire: hits first..last (1-based), or every hit.
struct HitRange {
  uint64_t first = 1;
  uint64_t last = 1;
  bool contains(uint64_t hit) const { return hit >= first && hit <= last; }
};

struct AttackAction {
  enum class Op : uint8_t { Read, Write, Irq };
  Op op = Op::Write;
  std::string at;                  ///< fire before executing this code address (expression)
  std::optional<uint64_t> step;    ///< or before this global instruction index
  HitRange hit{};
  std::string addr;   ///< expression
  std::string value;  ///< expression, writes only
  std::string var;    ///< reads store into $var
  int line = 0;
};

struct Scenario {
  std::string name;
  std::string ir;  ///< IR source text
  std::optional<ModifierScheme> scheme;
  std::optional<Outcome::Kind> expect_default;
  std::map<ModifierScheme, Outcome::Kind> expect;
  std::vector<ThreadSetup> threads{ThreadSetup{}};
  std::vector<AttackAction> actions;
  std::optional<uint32_t> threshold;
  bool round_robin = false;
  bool restart_on_auth_fault = false;

  std::optional<Outcome::Kind> expected(ModifierScheme s) const;
};

/// Parses the sectioned key=value scenario format. `ir = path` is resolved
/// relative to `base_dir`. Throws ParseError.
Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

struct RunOptions {
  ModifierScheme scheme = ModifierScheme::Proposed;
  MachineConfig machine{};
  uint64_t seed = 0;
};

struct ActionRecord {
  uint64_t step = 0;
  uint64_t pc = 0;
  AttackAction::Op op = AttackAction::Op::Write;
  uint64_t addr = 0;
  uint64_t value = 0;
  bool accepted = false;
  int index = 0;  ///< position in Scenario::actions
};

struct ScenarioResult {
  ModifierScheme scheme = ModifierScheme::Proposed;
  Outcome outcome;
  std::vector<TraceEvent> trace;
  std::vector<ActionRecord> actions;
  Counters counters;
  uint64_t calls = 0;  ///< entries into instrumented functions
  std::vector<std::vector<uint64_t>> returns;  ///< per thread, x0 at each return to EL0
  std::optional<Outcome::Kind> expected;

  bool matches() const { return !expected || *expected == outcome.kind; }
};

/// Boots the scenario's program under `opts`, runs it to completion and
/// applies the attacker actions at their triggers. Deterministic per seed.
ScenarioResult run_scenario(const Scenario& s, const RunOptions& opts);

/// Runs an already-built image with the given threads and no attacker.
ScenarioResult run_clean(const Program& image, const std::vector<ThreadSetup>& threads, const RunOptions& opts);

// ---------------------------------------------------------------------------
// Replay

enum class ReplayClass : uint8_t {
  SameFunctionSameSp,
  CrossFunctionSameSp,
  CrossThread64K,  ///< kernel stacks exactly 65536 bytes apart
  CrossThread4K,   ///< 4 KiB-congruent stacks that are not 64 KiB-congruent
};
std::string_view to_string(ReplayClass c);
inline constexpr ReplayClass kReplayClasses[] = {ReplayClass::SameFunctionSameSp, ReplayClass::CrossFunctionSameSp,
                                                 ReplayClass::CrossThread64K, ReplayClass::CrossThread4K};

/// The replay scenario of class `c`: harvest a signed return address with
/// an attacker read, then write it over another saved return address.
Scenario replay_scenario(ReplayClass c);

struct ReplayCell {
  ModifierScheme scheme;
  ReplayClass cls;
  Outcome outcome;
  bool succeeds = false;  ///< control reached the replayed (attacker-written) value
};

std::vector<ReplayCell> replay_matrix(const std::vector<ModifierScheme>& schemes, uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Analyzers. The plain names run OpenMP-parallel; *_serial are the reference.

struct Callsite {
  uint64_t func_addr = 0;
  uint64_t func_id = 0;
  uint64_t depth = 0;  ///< bytes between the stack top and the frame's SP
};

struct CollisionConfig {
  ModifierScheme scheme = ModifierScheme::Proposed;
  int n_threads = 2;
  std::vector<uint64_t> stack_bases;  ///< explicit bases; empty draws random 4 KiB-aligned ones
  std::vector<Callsite> callsites;
  uint64_t seed = 0;
};

struct CollisionPair {
  int thread_a = 0, thread_b = 0;
  uint32_t site_a = 0, site_b = 0;
  uint64_t modifier = 0;
};

struct CollisionResult {
  uint64_t pairs = 0;               ///< cross-thread frame pairs
  uint64_t collisions = 0;          ///< of which modifiers are equal
  uint64_t matching_pairs = 0;      ///< pairs at the same callsite
  uint64_t matching_collisions = 0;
  double rate = 0;
  double matching_rate = 0;
  std::vector<uint64_t> stack_bases;
  std::vector<CollisionPair> detail;  ///< colliding pairs, sorted
};

/// Synthetic callsites: `n` functions in kernel text at random depths.
std::vector<Callsite> random_callsites(size_t n, uint64_t seed);
/// Random non-overlapping 4 KiB-aligned 16 KiB stacks.
std::vector<uint64_t> random_stack_bases(int n, uint64_t seed);

CollisionResult collision_rate(const CollisionConfig& cfg);
CollisionResult collision_rate_serial(const CollisionConfig& cfg);

struct ForgeryResult {
  int pac_bits = 0;
  uint64_t trials = 0;
  uint64_t accepted = 0;
  double rate = 0;
  double expected = 0;  ///< 2^-pac_bits
  double sigma = 0;     ///< binomial standard deviation of the rate under `expected`
  double ci_low = 0, ci_high = 0;  ///< 95% normal-approximation interval around `rate`
  bool within_3sigma() const;
};

/// Layout whose pointers carry exactly `bits` PAC bits, if one exists.
std::optional<std::pair<PointerLayout, AddressClass>> layout_for_pac_bits(int bits);

ForgeryResult forgery_rate(int pac_bits, uint64_t trials, uint64_t seed);
ForgeryResult forgery_rate_serial(int pac_bits, uint64_t trials, uint64_t seed);

// ---------------------------------------------------------------------------
// Overhead

struct OverheadRow {
  ModifierScheme scheme = ModifierScheme::None;
  Counters counters;
  uint64_t calls = 0;
  double per_call_delta = 0;          ///< extra cycles per instrumented call relative to None
  double key_switch_per_syscall = 0;
  std::vector<std::vector<uint64_t>> returns;
};

struct OverheadReport {
  std::vector<OverheadRow> rows;
  const OverheadRow* row(ModifierScheme s) const;
};

/// Runs `module` under each scheme with the same workload. Throws Error
/// (with the outcome and trace tail) if any run does not exit cleanly.
OverheadReport overhead_report(const IrModule& module, const std::vector<ModifierScheme>& schemes,
                               const std::vector<ThreadSetup>& threads, const RunOptions& base);

}  // namespace kpac
