#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace kpac {

/// The five PAuth keys: two instruction keys, two data keys, one generic key.
enum class KeyClass : uint8_t { IA = 0, IB = 1, DA = 2, DB = 3, GA = 4 };

inline constexpr int kNumKeys = 5;

std::string_view to_string(KeyClass k);

/// Accepts "ia", "IB", ... Returns nullopt on anything else.
std::optional<KeyClass> parse_key_class(std::string_view s);

inline constexpr bool is_instruction_key(KeyClass k) { return k == KeyClass::IA || k == KeyClass::IB; }

}  // namespace kpac
