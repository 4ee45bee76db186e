#include <algorithm>
#include <cmath>

#include "kpac/error.hpp"
#include "kpac/harness.hpp"
#include "kpac/rng.hpp"

namespace kpac {
namespace {

constexpr uint64_t kStackRegionPages = uint64_t{1} << 20;  // 4 GiB of candidate stack space

struct Frames {
  std::vector<uint64_t> bases;
  std::vector<uint64_t> modifiers;  // thread-major: modifiers[t * sites + i]
  size_t sites = 0;
};

Frames frames(const CollisionConfig& cfg) {
  if (cfg.scheme == ModifierScheme::None) throw ParamError("scheme none has no return-address modifier");
  if (cfg.callsites.empty()) throw ParamError("callsite set is empty");
  Frames f;
  f.bases = cfg.stack_bases.empty() ? random_stack_bases(cfg.n_threads, cfg.seed) : cfg.stack_bases;
  if (f.bases.size() < 2) throw ParamError("collision analysis needs at least two threads");
  f.sites = cfg.callsites.size();
  for (uint64_t base : f.bases) {
    if (base % kPageSize) throw ParamError("stack bases must be 4 KiB aligned");
    for (const Callsite& c : cfg.callsites) {
      if (c.depth > kKernelStackSize) throw ParamError("callsite depth exceeds the stack");
      const uint64_t sp = base + kKernelStackSize - c.depth;
      f.modifiers.push_back(ra_modifier(cfg.scheme, sp, c.func_addr, c.func_id));
    }
  }
  return f;
}

// Compares thread a against thread b, accumulating into r.
void compare(const Frames& f, int a, int b, CollisionResult& r) {
  const uint64_t* ma = &f.modifiers[a * f.sites];
  const uint64_t* mb = &f.modifiers[b * f.sites];
  for (uint32_t i = 0; i < f.sites; ++i) {
    for (uint32_t j = 0; j < f.sites; ++j) {
      const bool same = ma[i] == mb[j];
      r.collisions += same;
      if (i == j) {
        ++r.matching_pairs;
        r.matching_collisions += same;
      }
      if (same) r.detail.push_back({a, b, i, j, ma[i]});
    }
  }
  r.pairs += f.sites * f.sites;
}

void finish(CollisionResult& r, const Frames& f) {
  r.stack_bases = f.bases;
  std::sort(r.detail.begin(), r.detail.end(), [](const CollisionPair& x, const CollisionPair& y) {
    return std::tie(x.thread_a, x.thread_b, x.site_a, x.site_b) < std::tie(y.thread_a, y.thread_b, y.site_a, y.site_b);
  });
  r.rate = r.pairs ? static_cast<double>(r.collisions) / static_cast<double>(r.pairs) : 0.0;
  r.matching_rate =
      r.matching_pairs ? static_cast<double>(r.matching_collisions) / static_cast<double>(r.matching_pairs) : 0.0;
}

std::vector<std::pair<int, int>> thread_pairs(size_t n) {
  std::vector<std::pair<int, int>> out;
  for (size_t a = 0; a < n; ++a)
    for (size_t b = a + 1; b < n; ++b) out.emplace_back(static_cast<int>(a), static_cast<int>(b));
  return out;
}

void check_forgery_args(int pac_bits, uint64_t trials) {
  if (pac_bits < 1 || pac_bits > 31) throw ParamError("pac_bits must be in 1..31");
  if (trials == 0) throw ParamError("trials must be positive");
}

// One guess against a fresh key, pointer and modifier drawn from (seed, i).
bool forgery_trial(int pac_bits, const std::optional<std::pair<PointerLayout, AddressClass>>& lay, uint64_t seed,
                   uint64_t i) {
  SplitMix64 rng(seed, i);
  KeyBank bank;
  bank[KeyClass::IA] = PacKey{rng(), rng()};
  const uint64_t modifier = rng();
  const uint64_t guess = rng.below(uint64_t{1} << pac_bits);
  if (!lay) {
    // No pointer layout has fewer than 3 PAC bits: guess the truncated MAC.
    static const PointerLayout kRef{};
    const uint64_t ptr = 0xffff000000000000 | (rng() & 0x0000fffffffffff8);
    const uint64_t mac = compute_pac(bank[KeyClass::IA], ptr, modifier, kRef);
    return (mac & ((uint64_t{1} << pac_bits) - 1)) == guess;
  }
  const auto& [layout, space] = *lay;
  const uint64_t low = rng() & ((uint64_t{1} << layout.va_bits) - 1) & ~uint64_t{7};
  const uint64_t ptr = space == AddressClass::Kernel ? strip_pac(low | 0xff80000000000000, layout) : low;
  const uint64_t forged = insert_pac(ptr, guess, layout);
  return authenticate(bank, PacControl{}, KeyClass::IA, forged, modifier, layout).ok;
}

ForgeryResult forgery_stats(int pac_bits, uint64_t trials, uint64_t accepted) {
  ForgeryResult r;
  r.pac_bits = pac_bits;
  r.trials = trials;
  r.accepted = accepted;
  const double n = static_cast<double>(trials);
  r.rate = static_cast<double>(accepted) / n;
  r.expected = std::ldexp(1.0, -pac_bits);
  r.sigma = std::sqrt(r.expected * (1 - r.expected) / n);
  const double half = 1.96 * std::sqrt(r.rate * (1 - r.rate) / n);
  r.ci_low = std::max(0.0, r.rate - half);
  r.ci_high = std::min(1.0, r.rate + half);
  return r;
}

}  // namespace

std::vector<Callsite> random_callsites(size_t n, uint64_t seed) {
  SplitMix64 rng(seed, 0xca11);
  std::vector<Callsite> out;
  for (size_t i = 0; i < n; ++i) {
    Callsite c;
    c.func_addr = ImageLayout{}.text + 4 * rng.below(uint64_t{1} << 20);
    c.func_id = 1 + rng.below((uint64_t{1} << 48) - 1);
    c.depth = 16 * (1 + rng.below(kKernelStackSize / 16 - 1));
    out.push_back(c);
  }
  return out;
}

std::vector<uint64_t> random_stack_bases(int n, uint64_t seed) {
  if (n < 2) throw ParamError("collision analysis needs at least two threads");
  SplitMix64 rng(seed, 0x57ac);
  std::vector<uint64_t> out;
  while (out.size() < static_cast<size_t>(n)) {
    const uint64_t base = kKernelStackBase + rng.below(kStackRegionPages) * kPageSize;
    const bool overlaps = std::any_of(out.begin(), out.end(), [&](uint64_t o) {
      return base < o + kKernelStackSize && o < base + kKernelStackSize;
    });
    if (!overlaps) out.push_back(base);
  }
  return out;
}

CollisionResult collision_rate_serial(const CollisionConfig& cfg) {
  const Frames f = frames(cfg);
  CollisionResult r;
  for (auto [a, b] : thread_pairs(f.bases.size())) compare(f, a, b, r);
  finish(r, f);
  return r;
}

CollisionResult collision_rate(const CollisionConfig& cfg) {
  const Frames f = frames(cfg);
  const auto pairs = thread_pairs(f.bases.size());
  std::vector<CollisionResult> partial(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t k = 0; k < pairs.size(); ++k) compare(f, pairs[k].first, pairs[k].second, partial[k]);
  CollisionResult r;
  for (auto& p : partial) {
    r.pairs += p.pairs;
    r.collisions += p.collisions;
    r.matching_pairs += p.matching_pairs;
    r.matching_collisions += p.matching_collisions;
    r.detail.insert(r.detail.end(), p.detail.begin(), p.detail.end());
  }
  finish(r, f);
  return r;
}

bool ForgeryResult::within_3sigma() const { return std::abs(rate - expected) <= 3 * sigma; }

std::optional<std::pair<PointerLayout, AddressClass>> layout_for_pac_bits(int bits) {
  PointerLayout l;
  if (bits >= 63 - kMaxVaBits && bits <= 63 - kMinVaBits) {
    l.va_bits = 63 - bits;
  } else if (bits >= 55 - kMaxVaBits && bits < 63 - kMaxVaBits) {
    l.va_bits = 55 - bits;
    l.tbi_kernel = true;
  } else {
    return std::nullopt;
  }
  return std::make_pair(l, AddressClass::Kernel);
}

ForgeryResult forgery_rate_serial(int pac_bits, uint64_t trials, uint64_t seed) {
  check_forgery_args(pac_bits, trials);
  const auto lay = layout_for_pac_bits(pac_bits);
  uint64_t accepted = 0;
  for (uint64_t i = 0; i < trials; ++i) accepted += forgery_trial(pac_bits, lay, seed, i);
  return forgery_stats(pac_bits, trials, accepted);
}

ForgeryResult forgery_rate(int pac_bits, uint64_t trials, uint64_t seed) {
  check_forgery_args(pac_bits, trials);
  const auto lay = layout_for_pac_bits(pac_bits);
  uint64_t accepted = 0;
  const auto n = static_cast<int64_t>(trials);
#pragma omp parallel for reduction(+ : accepted) schedule(static)
  for (int64_t i = 0; i < n; ++i) accepted += forgery_trial(pac_bits, lay, seed, static_cast<uint64_t>(i));
  return forgery_stats(pac_bits, trials, accepted);
}

}  // namespace kpac
