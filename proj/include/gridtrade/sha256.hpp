#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace gridtrade {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view data);
std::string to_hex(const Digest& digest);
std::string sha256_hex(std::string_view data);

/// Number of leading zero bits in the digest (0..256).
unsigned leading_zero_bits(const Digest& digest);

bool is_lower_hex(std::string_view s, std::size_t length);

}  // namespace gridtrade
