#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace gridtrade {

/// UTC instant with second precision. All series, blocks and clocks use it.
using Instant = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

/// Parses `YYYY-MM-DDTHH:MM[:SS]` with an optional `Z` or `+HH:MM` suffix.
/// A space may replace the `T`. Returns nullopt on anything else.
std::optional<Instant> parse_iso8601(std::string_view text);

/// `YYYY-MM-DDTHH:MM:SSZ`. Total over the whole int64 range.
std::string format_iso8601(Instant t);

/// Log rendering in the style `23-April-2020 9:03:46`.
std::string format_display(Instant t);

/// `YYYY-MM-DD` of the UTC day containing t.
std::string format_date(Instant t);

/// Midnight (UTC) of the day containing t.
Instant start_of_day(Instant t);

Instant from_unix(std::int64_t seconds);
std::int64_t to_unix(Instant t);

}  // namespace gridtrade
